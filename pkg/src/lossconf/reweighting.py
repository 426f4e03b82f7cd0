"""Reshape a per-transmittance dataset into one distributed as a target density.

The empirical transmittance values are binned (Sturges rule) into a
normalized histogram; per-bin retention fractions ``w_k`` in [0, 1] are then
chosen to maximize the Bhattacharyya coefficient

    ``T(w) = integral sqrt(target(tau) * g_w(tau)) dtau``

between the target density and the reweighted histogram

    ``g_w(tau) = sum_k pop_k * w_k / (2l * n_final) * indicator_k(tau)``,

subject to the fixed-data constraint ``0 <= w_k <= 1`` and the budget
``sum_k pop_k * w_k = n_final`` (``pop_k`` = records in bin ``k``, ``2l`` =
bin width).  Records are then discarded per bin, keeping
``floor(w_k * pop_k)`` of them, to materialize the reshaped dataset.

Because ``T(w) = sum_k a_k sqrt(w_k)`` is concave and the feasible set is a
box intersected with one linear equality, projected gradient ascent finds
the global maximum; a multi-start from the uniform-truncation point keeps
the search deterministic.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .distributions import TransmittanceDistribution, Uniform
from .errors import BudgetInfeasibleError
from .monte_carlo import CountRecords
from .photon_statistics import DetectionModel, IDEAL_DETECTION


@dataclass(frozen=True)
class TauGroup:
    """All records acquired at one transmittance setting."""

    tau: float
    records: CountRecords

    def __post_init__(self):
        if len(self.records) < 1:
            raise ValueError("each group needs at least one record")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")

    @property
    def size(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class EmpiricalDataset:
    """Per-transmittance record groups; may be empty after aggressive pruning."""

    groups: tuple

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def taus(self) -> np.ndarray:
        return np.array([g.tau for g in self.groups], dtype=float)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups], dtype=int)

    @property
    def n_total(self) -> int:
        return int(self.sizes.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau", "n_s", "n_i"])
            for group in self.groups:
                recs = group.records
                for i in range(len(recs)):
                    writer.writerow(
                        [
                            repr(float(group.tau)),
                            int(recs.signal[i]),
                            "" if recs.idler is None else int(recs.idler[i]),
                        ]
                    )

    @classmethod
    def from_csv(cls, path) -> "EmpiricalDataset":
        taus, signals, idlers = [], [], []
        has_idler = True
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                try:
                    tau = float(row[0])
                except ValueError:
                    continue  # header
                taus.append(tau)
                signals.append(int(row[1]))
                if len(row) > 2 and row[2].strip():
                    idlers.append(int(row[2]))
                else:
                    has_idler = False
        taus = np.asarray(taus)
        signals = np.asarray(signals)
        idlers = np.asarray(idlers) if has_idler and idlers else None
        groups = []
        for tau in dict.fromkeys(taus.tolist()):  # preserve first-seen order
            mask = taus == tau
            groups.append(
                TauGroup(
                    tau=tau,
                    records=CountRecords(
                        signals[mask],
                        None if idlers is None else idlers[mask],
                        taus[mask],
                    ),
                )
            )
        return cls(groups=tuple(groups))


@dataclass(frozen=True)
class TauHistogram:
    """Uniform-width histogram normalized to a density.

    ``heights[k] = counts[k] / (width * norm)``; with ``norm`` equal to the
    total count the density integrates to one.
    """

    edges: tuple
    counts: tuple
    norm: float

    @property
    def _edges(self) -> np.ndarray:
        return np.asarray(self.edges)

    @property
    def _counts(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float)

    @property
    def width(self) -> float:
        e = self._edges
        return float(e[1] - e[0])

    @property
    def heights(self) -> np.ndarray:
        return self._counts / (self.width * self.norm)

    def integral(self) -> float:
        return float(self.heights.sum() * self.width)


def sturges_bins(n_values: int) -> int:
    return 1 + math.ceil(math.log2(max(n_values, 1)))


def build_histogram(values, bins: int | None = None) -> TauHistogram:
    """Normalized histogram of transmittance values.

    ``bins`` defaults to the Sturges count on the number of distinct values.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 1:
        raise ValueError("need at least one value")
    if bins is None:
        bins = sturges_bins(np.unique(values).size)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        # all values identical: widen around the point, keep inside [0, 1]
        lo = max(0.0, lo - 0.5)
        hi = min(1.0, hi + 0.5)
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return TauHistogram(
        edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        norm=float(values.size),
    )


def _sqrt_target_bin_integrals(target: TransmittanceDistribution, edges: np.ndarray):
    """Per-bin integrals of sqrt(target density), split at density breakpoints."""
    from .photon_statistics import gauss_legendre_nodes

    breakpoints = set()
    if isinstance(target, Uniform):
        breakpoints = {target.lo, target.hi}
    elif hasattr(target, "edges"):
        breakpoints = {float(e) for e in target.edges}
    out = np.zeros(edges.size - 1)
    for k in range(edges.size - 1):
        pieces = sorted({edges[k], edges[k + 1]} | {b for b in breakpoints if edges[k] < b < edges[k + 1]})
        total = 0.0
        for a, b in zip(pieces, pieces[1:]):
            x, w = gauss_legendre_nodes(a, b, 24)
            total += float(np.dot(w, np.sqrt(np.clip(target.pdf(x), 0.0, None))))
        out[k] = total
    return out


def bhattacharyya(target: TransmittanceDistribution, hist: TauHistogram) -> float:
    """Similarity ``integral sqrt(target * histogram)`` over the histogram range."""
    edges = hist._edges
    heights = hist.heights
    integrals = _sqrt_target_bin_integrals(target, edges)
    return float(np.dot(np.sqrt(np.clip(heights, 0.0, None)), integrals))


@dataclass(frozen=True)
class WeightVector:
    """Per-bin retention fractions with their bin edges."""

    weights: tuple
    edges: tuple

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.size != len(self.edges) - 1:
            raise ValueError("need one weight per bin")
        if w.min() < -1e-12 or w.max() > 1.0 + 1e-12:
            raise ValueError("weights must lie in [0, 1]")


@dataclass(frozen=True)
class ReweightReport:
    """Outcome of the weight optimization."""

    weights: WeightVector
    bhattacharyya: float
    baseline: float
    threshold: float
    accepted: bool
    final_size: int
    budget: int

    def to_json_dict(self) -> dict:
        return {
            "weights": list(self.weights.weights),
            "bin_edges": list(self.weights.edges),
            "T_star": self.bhattacharyya,
            "T_baseline": self.baseline,
            "T_threshold": self.threshold,
            "accepted": self.accepted,
            "final_size": self.final_size,
            "budget": self.budget,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _project_budget_box(v: np.ndarray, pop: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {0 <= w <= 1, pop . w = budget}."""
    active = pop > 0

    def constraint(theta):
        w = np.clip(v + theta * pop, 0.0, 1.0)
        return float(np.dot(pop[active], w[active])) - budget

    lo, hi = -1.0, 1.0
    while constraint(lo) > 0 and lo > -1e12:
        lo *= 2.0
    while constraint(hi) < 0 and hi < 1e12:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if constraint(mid) > 0:
            hi = mid
        else:
            lo = mid
    w = np.clip(v + 0.5 * (lo + hi) * pop, 0.0, 1.0)
    w[~active] = 0.0
    return w


def _water_filling(a: np.ndarray, pop: np.ndarray, budget: float) -> np.ndarray:
    """Stationary point of the concave program by bisection on the dual variable.

    The first-order conditions give ``w_k = clip((a_k / (2 mu pop_k))**2, 0, 1)``
    with ``mu`` chosen to spend the budget exactly.
    """
    active = pop > 0

    def spent(mu):
        w = np.zeros_like(a)
        w[active] = np.clip((a[active] / (2.0 * mu * pop[active])) ** 2, 0.0, 1.0)
        return float(np.dot(pop, w)), w

    lo, hi = 1e-15, 1e15
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        total, _ = spent(mid)
        if total > budget:
            lo = mid
        else:
            hi = mid
    _, w = spent(math.sqrt(lo * hi))
    return _project_budget_box(w, pop, budget)


def _ascend(a: np.ndarray, pop: np.ndarray, budget: float, start: np.ndarray):
    """Projected gradient ascent on sum_k a_k sqrt(w_k)."""
    w = _project_budget_box(start.copy(), pop, budget)
    active = pop > 0

    def objective(weights):
        return float(np.dot(a, np.sqrt(np.clip(weights, 0.0, None))))

    value = objective(w)
    stall = 0
    for _ in range(500):
        grad = np.zeros_like(w)
        grad[active] = a[active] / (2.0 * np.sqrt(np.clip(w[active], 1e-12, None)))
        t = 1.0 / max(float(np.abs(grad).max()), 1e-12)
        improved = False
        for _ in range(30):
            candidate = _project_budget_box(w + t * grad, pop, budget)
            candidate_value = objective(candidate)
            if candidate_value > value + 1e-14:
                w, value = candidate, candidate_value
                improved = True
                break
            t /= 2.0
        if not improved:
            stall += 1
            if stall >= 2:
                break
        else:
            stall = 0
    return w, value


def optimize_weights(
    dataset: EmpiricalDataset,
    target: TransmittanceDistribution,
    sample_budget: int,
    threshold: float = 0.0,
    bins: int | None = None,
) -> ReweightReport:
    """Retention fractions maximizing similarity to the target density."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    hist = build_histogram(dataset.taus, bins)
    edges = hist._edges
    pop, _ = np.histogram(dataset.taus, bins=edges, weights=dataset.sizes)
    pop = pop.astype(float)
    n_available = float(pop.sum())
    if sample_budget > n_available:
        raise BudgetInfeasibleError(
            f"budget {sample_budget} exceeds the {int(n_available)} available records"
        )
    width = hist.width
    integrals = _sqrt_target_bin_integrals(target, edges)
    a = np.sqrt(pop / (width * sample_budget)) * integrals

    uniform = np.full(pop.size, sample_budget / n_available)
    # deterministic start order: truncation point, target-proportional shape,
    # then the dual stationary point (which ascent merely polishes)
    starts = [uniform]
    with np.errstate(divide="ignore", invalid="ignore"):
        target_mass = integrals**2  # rough per-bin target weight
        proportional = np.where(pop > 0, target_mass / np.where(pop > 0, pop, 1.0), 0.0)
    if proportional.max() > 0:
        starts.append(proportional / proportional.max())
    starts.append(_water_filling(a, pop, float(sample_budget)))
    best_w, best_val = None, -np.inf
    for start in starts:
        w, val = _ascend(a, pop, float(sample_budget), start)
        if val > best_val:
            best_w, best_val = w, val
    # never report worse than the uniform-truncation baseline
    baseline_w = _project_budget_box(uniform, pop, float(sample_budget))
    baseline = float(np.dot(a, np.sqrt(baseline_w)))
    if baseline > best_val:
        best_w, best_val = baseline_w, baseline

    final_size = int(np.floor(best_w * pop).sum())
    return ReweightReport(
        weights=WeightVector(
            weights=tuple(float(w) for w in np.clip(best_w, 0.0, 1.0)),
            edges=hist.edges,
        ),
        bhattacharyya=best_val,
        baseline=baseline,
        threshold=threshold,
        accepted=best_val >= threshold,
        final_size=final_size,
        budget=int(sample_budget),
    )


def reweighted_histogram(dataset: EmpiricalDataset, weights: WeightVector) -> TauHistogram:
    """The data histogram with per-bin retention applied, normalized to the
    retained count implied by the budget equality."""
    edges = np.asarray(weights.edges)
    pop, _ = np.histogram(dataset.taus, bins=edges, weights=dataset.sizes)
    w = np.asarray(weights.weights)
    kept = pop * w
    return TauHistogram(
        edges=weights.edges,
        counts=tuple(float(k) for k in kept),
        norm=float(kept.sum()),
    )


def resample(dataset: EmpiricalDataset, weights: WeightVector, seed: int) -> EmpiricalDataset:
    """Materialize the reshaped dataset by seeded per-bin subsampling.

    Bin ``k`` keeps ``floor(w_k * pop_k)`` records drawn uniformly without
    replacement from its pooled records; groups emptied entirely are dropped.
    """
    edges = np.asarray(weights.edges)
    w = np.asarray(weights.weights)
    rng = np.random.default_rng(seed)
    bin_of_group = np.clip(
        np.searchsorted(edges, dataset.taus, side="right") - 1, 0, w.size - 1
    )
    kept_per_group: dict[int, np.ndarray] = {}
    for k in range(w.size):
        group_ids = np.nonzero(bin_of_group == k)[0]
        if group_ids.size == 0:
            continue
        sizes = np.array([dataset.groups[g].size for g in group_ids])
        pool = int(sizes.sum())
        keep = int(math.floor(w[k] * pool))
        if keep <= 0:
            continue
        chosen = np.sort(rng.choice(pool, size=keep, replace=False))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for gi, g in enumerate(group_ids):
            local = chosen[(chosen >= offsets[gi]) & (chosen < offsets[gi + 1])] - offsets[gi]
            if local.size:
                kept_per_group[int(g)] = local
    groups = []
    for g, group in enumerate(dataset.groups):
        if g not in kept_per_group:
            continue
        idx = kept_per_group[g]
        groups.append(TauGroup(tau=group.tau, records=group.records[idx]))
    return EmpiricalDataset(groups=tuple(groups))


def synthesize_dataset(
    target: TransmittanceDistribution,
    n_values: int,
    frames_per_value: int,
    probe,
    det: DetectionModel = IDEAL_DETECTION,
    coverage: float = 0.9995,
    seed: int = 0,
) -> EmpiricalDataset:
    """Simulate the acquisition pipeline behind a reweighting run.

    Transmittance settings are drawn uniformly over the target's
    ``coverage`` interval (mirroring imperfect experimental control of the
    sample position) and ``frames_per_value`` records are sampled per
    setting.
    """
    from .monte_carlo import sample_counts

    lo, hi = target.truncation_interval(coverage)
    rng = np.random.default_rng(seed)
    taus = np.sort(lo + (hi - lo) * rng.random(n_values))
    groups = []
    for i, tau in enumerate(taus):
        records = sample_counts(probe, det, float(tau), frames_per_value, seed=seed + 1 + i)
        groups.append(TauGroup(tau=float(tau), records=records))
    return EmpiricalDataset(groups=tuple(groups))
