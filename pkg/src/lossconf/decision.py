"""Biased maximum-likelihood labeling, conditional errors and cost optimization.

The decision rule compares weighted likelihoods: label ``y`` is chosen when
``B_y * p(n | process_y) >= B_(1-y) * p(n | process_(1-y))`` with weights
``B_0 = (1 - b) / 2`` and ``B_1 = (1 + b) / 2`` derived from a single bias
``b`` in [-1, 1].  Ties go to the reference label (y = 0), so the false
positive region uses the non-strict inequality and the false negative region
the strict one -- every lattice cell lands in exactly one error type.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import SupportMismatchError, ZeroLikelihoodError
from .photon_statistics import CountDistribution


@dataclass(frozen=True)
class DecisionRule:
    """Biased maximum likelihood with bias ``b``; ``b = 0`` is plain ML."""

    bias: float = 0.0

    def __post_init__(self):
        if not -1.0 <= self.bias <= 1.0:
            raise ValueError(f"bias must lie in [-1, 1], got {self.bias}")

    @property
    def weight_reference(self) -> float:
        return (1.0 - self.bias) / 2.0

    @property
    def weight_defective(self) -> float:
        return (1.0 + self.bias) / 2.0


@dataclass(frozen=True)
class CostSpec:
    """Relative weight of false negatives in the total cost."""

    false_negative_weight: float

    def __post_init__(self):
        if not 0.0 < self.false_negative_weight < 1.0:
            raise ValueError(
                f"false_negative_weight must lie in (0, 1), got {self.false_negative_weight}"
            )


@dataclass(frozen=True)
class ErrorReport:
    """Conditional error probabilities of a decision rule.

    ``false_positive`` (p01) labels a defective process conform;
    ``false_negative`` (p10) labels a conform process defective.
    """

    false_positive: float
    false_negative: float
    bias: float = 0.0

    def __post_init__(self):
        for name in ("false_positive", "false_negative"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def error_probability(self) -> float:
        return (self.false_positive + self.false_negative) / 2.0

    def to_json_dict(self) -> dict:
        return {
            "p01": self.false_positive,
            "p10": self.false_negative,
            "p_err": self.error_probability,
            "bias": self.bias,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def decide(lik_reference: float, lik_defective: float, rule: DecisionRule) -> int:
    """Label a record from its two likelihoods; ties go to the reference."""
    if lik_reference < 0.0 or lik_defective < 0.0:
        raise ValueError("likelihoods must be nonnegative")
    if lik_reference == 0.0 and lik_defective == 0.0:
        raise ZeroLikelihoodError("record lies outside both modeled supports")
    return int(rule.weight_defective * lik_defective > rule.weight_reference * lik_reference)


def _matching_lattices(p0: CountDistribution, p1: CountDistribution):
    if p0.masses is None or p1.masses is None:
        raise SupportMismatchError("conditional errors need exact lattices")
    if p0.masses.shape != p1.masses.shape:
        raise SupportMismatchError(
            f"lattice shapes differ: {p0.masses.shape} vs {p1.masses.shape}"
        )
    return p0.masses.ravel(), p1.masses.ravel()


def conditional_errors(
    p0: CountDistribution, p1: CountDistribution, rule: DecisionRule
) -> ErrorReport:
    """False positive and false negative probabilities of the biased rule."""
    m0, m1 = _matching_lattices(p0, p1)
    w0 = rule.weight_reference
    w1 = rule.weight_defective
    choose_reference = w0 * m0 >= w1 * m1
    false_positive = float(m1[choose_reference].sum())
    false_negative = float(m0[~choose_reference].sum())
    return ErrorReport(
        false_positive=min(false_positive, 1.0),
        false_negative=min(false_negative, 1.0),
        bias=rule.bias,
    )


def cost(report: ErrorReport, spec: CostSpec) -> float:
    """Weighted error cost ``S * p10 + (1 - S) * p01``."""
    s = spec.false_negative_weight
    return s * report.false_negative + (1.0 - s) * report.false_positive


@dataclass(frozen=True)
class BiasOptimization:
    """Result of a cost minimization over the bias grid."""

    bias: float
    cost: float
    bias_grid: tuple
    cost_curve: tuple
    false_positive_curve: tuple
    false_negative_curve: tuple
    unimodal: bool
    advisory: str | None = None


def _error_curves_over_bias(p0, p1, bias_grid):
    """p01(b), p10(b) for every grid bias via the sorted likelihood ratio.

    The decision set only depends on the ratio p1/p0 against the threshold
    (1 - b) / (1 + b), so one sort plus cumulative sums evaluates every bias
    point exactly, with the same tie policy as :func:`decide`.
    """
    m0, m1 = _matching_lattices(p0, p1)
    occupied = (m0 > 0.0) | (m1 > 0.0)
    m0 = m0[occupied]
    m1 = m1[occupied]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(m0 > 0.0, m1 / np.where(m0 > 0.0, m0, 1.0), np.inf)
    order = np.argsort(ratio, kind="stable")
    ratio_sorted = ratio[order]
    cum0 = np.concatenate([[0.0], np.cumsum(m0[order])])
    cum1 = np.concatenate([[0.0], np.cumsum(m1[order])])
    total0 = cum0[-1]

    p01 = np.empty(len(bias_grid))
    p10 = np.empty(len(bias_grid))
    for i, b in enumerate(bias_grid):
        if b <= -1.0:
            threshold = np.inf
        else:
            threshold = (1.0 - b) / (1.0 + b)
        # defective region: ratio strictly above the threshold
        k = int(np.searchsorted(ratio_sorted, threshold, side="right"))
        p01[i] = cum1[k]
        p10[i] = total0 - cum0[k]
    return p01, p10


def optimize_bias(
    p0: CountDistribution,
    p1: CountDistribution,
    spec: CostSpec,
    bias_grid=None,
) -> BiasOptimization:
    """Minimize the cost over the bias grid, refining within flat plateaus.

    The cost is piecewise constant in the bias (decision regions change at
    discrete likelihood-ratio thresholds), so the minimum is attained on a
    plateau; the least-biased point of the minimal plateau is returned
    (plain ML is preferred among equally costly rules), with one parabolic
    step when the minimum is a single grid point with curved neighbors.
    A non-unimodal curve returns the global grid minimum with an advisory.
    """
    if bias_grid is None:
        bias_grid = np.linspace(-1.0, 1.0, 201)
    grid = np.asarray(bias_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ValueError("bias grid needs at least 3 points")
    if grid.min() < -1.0 or grid.max() > 1.0:
        raise ValueError("bias grid must lie in [-1, 1]")

    p01, p10 = _error_curves_over_bias(p0, p1, grid)
    s = spec.false_negative_weight
    curve = s * p10 + (1.0 - s) * p01

    best = int(np.argmin(curve))
    lo = best
    while lo > 0 and curve[lo - 1] == curve[best]:
        lo -= 1
    hi = best
    while hi < curve.size - 1 and curve[hi + 1] == curve[best]:
        hi += 1
    if hi > lo:
        best_bias = min(max(0.0, grid[lo]), grid[hi])
    elif 0 < best < curve.size - 1:
        # single-point minimum: parabolic vertex through the neighbors
        y0, y1, y2 = curve[best - 1], curve[best], curve[best + 1]
        denom = y0 - 2.0 * y1 + y2
        if denom > 0.0:
            step = 0.5 * (y0 - y2) / denom
            spacing = min(grid[best] - grid[best - 1], grid[best + 1] - grid[best])
            best_bias = grid[best] + np.clip(step, -1.0, 1.0) * spacing
        else:
            best_bias = grid[best]
    else:
        best_bias = grid[best]

    # unimodality up to plateaus: the sign of consecutive changes flips at most once
    diffs = np.diff(curve)
    signs = np.sign(diffs[diffs != 0.0])
    flips = int(np.count_nonzero(np.diff(signs) != 0)) if signs.size else 0
    unimodal = flips <= 1
    advisory = None if unimodal else "non-unimodal"

    return BiasOptimization(
        bias=float(best_bias),
        cost=float(curve[best]),
        bias_grid=tuple(float(b) for b in grid),
        cost_curve=tuple(float(c) for c in curve),
        false_positive_curve=tuple(float(v) for v in p01),
        false_negative_curve=tuple(float(v) for v in p10),
        unimodal=unimodal,
        advisory=advisory,
    )
