"""Synthetic count records and empirical error frequencies.

Sampling is chunked: records are produced in fixed-size blocks whose RNG
streams derive from ``(seed, block index)``, so serial and parallel runs
produce bit-identical records regardless of worker count.  Records are held
columnar for speed but index like a sequence of :class:`CountRecord`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decision import DecisionRule
from .distributions import TransmittanceDistribution
from .errors import SupportMismatchError
from .photon_statistics import (
    ClassicalPoisson,
    CountDistribution,
    DetectionModel,
    TmsvPairSource,
)

CHUNK = 1 << 16

DEFAULT_FRAMES_PER_TAU = 20_000  # standard per-transmittance acquisition volume


@dataclass(frozen=True)
class CountRecord:
    """One detection frame: signal count, idler count (if any), and the
    transmittance that generated it (or its estimated label for ingested data)."""

    signal: int
    idler: int | None
    tau: float

    def __post_init__(self):
        if self.signal < 0 or (self.idler is not None and self.idler < 0):
            raise ValueError("counts must be nonnegative")


class CountRecords(Sequence):
    """Columnar sequence of count records."""

    def __init__(self, signal, idler, tau):
        self.signal = np.asarray(signal, dtype=np.int64)
        self.idler = None if idler is None else np.asarray(idler, dtype=np.int64)
        self.tau = np.asarray(tau, dtype=float)
        if self.signal.shape != self.tau.shape:
            raise ValueError("signal and tau must have the same length")
        if self.idler is not None and self.idler.shape != self.signal.shape:
            raise ValueError("idler must match signal length")
        if self.signal.size and self.signal.min() < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def is_joint(self) -> bool:
        return self.idler is not None

    def __len__(self) -> int:
        return int(self.signal.size)

    def __getitem__(self, index):
        if isinstance(index, (slice, np.ndarray, list)):
            return CountRecords(
                self.signal[index],
                None if self.idler is None else self.idler[index],
                self.tau[index],
            )
        return CountRecord(
            signal=int(self.signal[index]),
            idler=None if self.idler is None else int(self.idler[index]),
            tau=float(self.tau[index]),
        )

    @classmethod
    def concatenate(cls, parts: list["CountRecords"]) -> "CountRecords":
        joint = parts[0].is_joint
        if any(p.is_joint != joint for p in parts):
            raise ValueError("cannot mix single and joint records")
        return cls(
            np.concatenate([p.signal for p in parts]),
            np.concatenate([p.idler for p in parts]) if joint else None,
            np.concatenate([p.tau for p in parts]),
        )

    @classmethod
    def from_records(cls, records) -> "CountRecords":
        if isinstance(records, cls):
            return records
        records = list(records)
        joint = records[0].idler is not None if records else False
        return cls(
            [r.signal for r in records],
            [r.idler for r in records] if joint else None,
            [r.tau for r in records],
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_s", "n_i", "tau_true"])
            idler = self.idler
            for i in range(len(self)):
                writer.writerow(
                    [
                        int(self.signal[i]),
                        "" if idler is None else int(idler[i]),
                        repr(float(self.tau[i])),
                    ]
                )

    @classmethod
    def from_csv(cls, path) -> "CountRecords":
        signal, idler, tau = [], [], []
        has_idler = True
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for row in reader:
                if not row or not row[0].strip() or not row[0].strip()[0].isdigit():
                    continue
                signal.append(int(row[0]))
                if len(row) > 2 and row[1].strip():
                    idler.append(int(row[1]))
                    tau.append(float(row[2]))
                else:
                    has_idler = False
                    tau.append(float(row[-1]))
        return cls(signal, idler if has_idler and idler else None, tau)


@dataclass(frozen=True)
class FrequencyReport:
    """Observed error frequencies with binomial standard errors."""

    f10: float
    f01: float
    se10: float
    se01: float
    n_reference: int
    n_defective: int
    fallback_reference: int = 0
    fallback_defective: int = 0

    @property
    def error_probability(self) -> float:
        return (self.f10 + self.f01) / 2.0

    @property
    def error_probability_se(self) -> float:
        return 0.5 * math.sqrt(self.se10**2 + self.se01**2)

    def to_json_dict(self) -> dict:
        return {
            "f10": self.f10,
            "f01": self.f01,
            "se10": self.se10,
            "se01": self.se01,
            "p_err_estimate": self.error_probability,
            "p_err_se": self.error_probability_se,
            "n_reference": self.n_reference,
            "n_defective": self.n_defective,
            "fallback_reference": self.fallback_reference,
            "fallback_defective": self.fallback_defective,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _chunk_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(block,)))
    )


def _sample_block(probe, det, taus: np.ndarray, rng: np.random.Generator):
    nu = det.dark_counts
    if isinstance(probe, ClassicalPoisson):
        signal = rng.poisson(probe.mean_photons * det.eta_signal * taus)
        signal = signal + rng.poisson(nu, size=taus.size)
        return signal, None
    pairs = rng.poisson(probe.mean_pairs, size=taus.size)
    signal = rng.binomial(pairs, det.eta_signal * taus)
    idler = rng.binomial(pairs, det.eta_idler)
    signal = signal + rng.poisson(nu, size=taus.size)
    idler = idler + rng.poisson(nu, size=taus.size)
    return signal, idler


def _blocks(count: int):
    for block, start in enumerate(range(0, count, CHUNK)):
        yield block, min(CHUNK, count - start)


def sample_counts(
    probe: ClassicalPoisson | TmsvPairSource,
    det: DetectionModel,
    tau: float,
    count: int,
    seed: int,
) -> CountRecords:
    """Records at a fixed transmittance; deterministic per seed."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    parts = []
    for block, size in _blocks(count):
        rng = _chunk_rng(seed, block)
        taus = np.full(size, tau)
        signal, idler = _sample_block(probe, det, taus, rng)
        parts.append(CountRecords(signal, idler, taus))
    return CountRecords.concatenate(parts)


def sample_process(
    probe: ClassicalPoisson | TmsvPairSource,
    det: DetectionModel,
    g: TransmittanceDistribution,
    count: int,
    seed: int,
) -> CountRecords:
    """Records with the transmittance drawn i.i.d. from ``g`` per frame."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    parts = []
    for block, size in _blocks(count):
        rng = _chunk_rng(seed, block)
        taus = g.sample(rng, size)
        signal, idler = _sample_block(probe, det, taus, rng)
        parts.append(CountRecords(signal, idler, taus))
    return CountRecords.concatenate(parts)


def _gaussian_log_likelihoods(records: CountRecords, dist: CountDistribution):
    mean, cov = dist.mean, dist.cov
    if records.is_joint:
        c = cov.copy()
        floor = 1e-12 * max(c[0, 0], c[1, 1], 1.0)
        det_c = c[0, 0] * c[1, 1] - c[0, 1] ** 2
        if det_c <= floor * (c[0, 0] + c[1, 1]):
            c = c + np.eye(2) * floor
            det_c = c[0, 0] * c[1, 1] - c[0, 1] ** 2
        dx = records.signal - mean[0]
        dy = records.idler - mean[1]
        quad = (c[1, 1] * dx * dx - 2.0 * c[0, 1] * dx * dy + c[0, 0] * dy * dy) / det_c
        return -0.5 * quad - 0.5 * math.log(4.0 * math.pi**2 * det_c)
    var = max(cov[0, 0], 1e-12)
    dx = records.signal - mean[0]
    return -0.5 * dx * dx / var - 0.5 * math.log(2.0 * math.pi * var)


def _lattice_likelihoods(records: CountRecords, dist: CountDistribution):
    """(likelihood, in_support) per record for an exact lattice."""
    cutoff = dist.cutoff
    if records.is_joint:
        inside = (records.signal <= cutoff) & (records.idler <= cutoff)
        s = np.clip(records.signal, 0, cutoff)
        i = np.clip(records.idler, 0, cutoff)
        lik = dist.masses[s, i]
    else:
        inside = records.signal <= cutoff
        s = np.clip(records.signal, 0, cutoff)
        lik = dist.masses[s]
    return np.where(inside, lik, 0.0), inside


def _label(records, lik_ref, lik_def, rule):
    """Vectorized biased-ML labels with the Gaussian-surrogate fallback.

    Records outside both exact supports (or past the lattice cutoff) are
    labeled by comparing the surrogate densities built from each law's own
    moments; their count is reported, not raised.
    """
    w0 = rule.weight_reference
    w1 = rule.weight_defective
    exact = lik_ref.masses is not None and lik_def.masses is not None
    if exact:
        l0, in0 = _lattice_likelihoods(records, lik_ref)
        l1, in1 = _lattice_likelihoods(records, lik_def)
        fallback = (~in0 & ~in1) | ((l0 == 0.0) & (l1 == 0.0))
    else:
        l0 = l1 = None
        fallback = np.ones(len(records), dtype=bool)
    labels = np.zeros(len(records), dtype=np.int64)
    if l0 is not None:
        labels = (w1 * l1 > w0 * l0).astype(np.int64)
    if np.any(fallback):
        sub = records[np.nonzero(fallback)[0]] if fallback.size else records
        g0 = _gaussian_log_likelihoods(sub, lik_ref)
        g1 = _gaussian_log_likelihoods(sub, lik_def)
        with np.errstate(divide="ignore"):
            surrogate = (math.log(w1) if w1 > 0 else -math.inf) + g1 > (
                math.log(w0) if w0 > 0 else -math.inf
            ) + g0
        labels[fallback] = surrogate.astype(np.int64)
    return labels, int(np.count_nonzero(fallback))


def estimate_error_frequencies(
    records_reference,
    records_defective,
    lik_reference: CountDistribution,
    lik_defective: CountDistribution,
    rule: DecisionRule = DecisionRule(0.0),
) -> FrequencyReport:
    """Label both record sets and report the error frequencies with SEs."""
    recs0 = CountRecords.from_records(records_reference)
    recs1 = CountRecords.from_records(records_defective)
    joint_lik = lik_reference.is_joint
    if lik_defective.is_joint != joint_lik:
        raise SupportMismatchError("likelihood arities differ")
    if recs0.is_joint != joint_lik or recs1.is_joint != joint_lik:
        raise SupportMismatchError("record arity does not match the likelihoods")

    labels0, fb0 = _label(recs0, lik_reference, lik_defective, rule)
    labels1, fb1 = _label(recs1, lik_reference, lik_defective, rule)
    n0 = len(recs0)
    n1 = len(recs1)
    f10 = float(np.count_nonzero(labels0 == 1)) / n0
    f01 = float(np.count_nonzero(labels1 == 0)) / n1
    return FrequencyReport(
        f10=f10,
        f01=f01,
        se10=math.sqrt(f10 * (1.0 - f10) / n0),
        se01=math.sqrt(f01 * (1.0 - f01) / n1),
        n_reference=n0,
        n_defective=n1,
        fallback_reference=fb0,
        fallback_defective=fb1,
    )
