"""Probability densities over channel transmittance.

Four variants cover the process models used throughout the package: a point
mass (``Delta``), a Gaussian restricted to the physical range [0, 1]
(``Gaussian``), a symmetric uniform window (``Uniform``) and a
piecewise-constant histogram (``Empirical``).  All parameters are
dimensionless transmittances.

Conventions:

* A Gaussian whose clipped mass outside [0, 1] exceeds ``RENORM_THRESHOLD``
  is renormalized on [0, 1]; the factor is kept on the instance so the
  evaluated density stays a true density under quadrature.
* ``Uniform(mean, half_width)`` has variance ``half_width**2 / 3``; the
  variance-matched window for a target standard deviation ``sigma`` is
  ``half_width = sqrt(3) * sigma`` (see :func:`uniform_matching_sigma`).
* ``Delta`` is a tagged branch, never a narrow Gaussian, so callers can
  substitute the point value exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    DeltaNotEvaluableError,
    DeltaNotTruncatableError,
    SupportOutOfRangeError,
)

RENORM_THRESHOLD = 1e-9


class TransmittanceDistribution:
    """Common interface of the transmittance density variants."""

    kind = "base"

    def pdf(self, tau):
        raise NotImplementedError

    def moments(self) -> tuple[float, float]:
        """Exact (mean, variance) of the distribution."""
        raise NotImplementedError

    def truncation_interval(self, coverage: float) -> tuple[float, float]:
        """Interval holding probability ``coverage``, symmetric in probability.

        Both tails carry mass ``(1 - coverage) / 2``; the result is clipped
        to [0, 1].
        """
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.moments()[0]

    @property
    def variance(self) -> float:
        return self.moments()[1]


def _check_unit_range(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def _check_coverage(coverage: float) -> None:
    if not 0.0 < coverage <= 1.0:
        raise ValueError(f"coverage must lie in (0, 1], got {coverage}")


@dataclass(frozen=True)
class Delta(TransmittanceDistribution):
    """Point mass at transmittance ``tau0``."""

    tau0: float
    kind = "delta"

    def __post_init__(self):
        _check_unit_range("tau0", self.tau0)

    def pdf(self, tau):
        raise DeltaNotEvaluableError(
            "point mass has no pointwise density; substitute tau0 exactly"
        )

    def moments(self):
        return (self.tau0, 0.0)

    def truncation_interval(self, coverage):
        raise DeltaNotTruncatableError("point mass has no truncation interval")

    def sample(self, rng, count):
        return np.full(count, self.tau0)

    def to_config(self):
        return {"kind": "delta", "tau0": self.tau0}


@dataclass(frozen=True)
class Gaussian(TransmittanceDistribution):
    """Gaussian density evaluated on [0, 1], renormalized when clipping matters.

    ``renormalization`` is 1 when the mass outside [0, 1] is below
    ``RENORM_THRESHOLD`` and ``1 / Z`` otherwise, with ``Z`` the mass inside.
    """

    center: float
    sigma: float
    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.center):
            raise ValueError("center must be finite")

    @property
    def _z_lo(self) -> float:
        return (0.0 - self.center) / self.sigma

    @property
    def _z_hi(self) -> float:
        return (1.0 - self.center) / self.sigma

    @property
    def inside_mass(self) -> float:
        """Mass of the unrestricted Gaussian inside [0, 1]."""
        return float(ndtr(self._z_hi) - ndtr(self._z_lo))

    @property
    def renormalization(self) -> float:
        z = self.inside_mass
        if 1.0 - z > RENORM_THRESHOLD:
            return 1.0 / z
        return 1.0

    def pdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        z = (tau - self.center) / self.sigma
        vals = np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))
        vals = np.where((tau < 0.0) | (tau > 1.0), 0.0, vals)
        out = vals * self.renormalization
        return float(out) if out.ndim == 0 else out

    def moments(self):
        # Truncated-normal closed forms; they reduce to (center, sigma^2)
        # when the clipped mass is negligible.
        a, b = self._z_lo, self._z_hi
        z = self.inside_mass
        pa = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        pb = math.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
        shift = (pa - pb) / z
        mean = self.center + self.sigma * shift
        var = self.sigma**2 * (1.0 + (a * pa - b * pb) / z - shift**2)
        return (mean, var)

    def truncation_interval(self, coverage):
        _check_coverage(coverage)
        lo_mass = ndtr(self._z_lo)
        z = self.inside_mass
        tail = (1.0 - coverage) / 2.0
        lo = self.center + self.sigma * float(ndtri(lo_mass + tail * z))
        hi = self.center + self.sigma * float(ndtri(lo_mass + (1.0 - tail) * z))
        return (max(0.0, lo), min(1.0, hi))

    def sample(self, rng, count):
        # Inverse-CDF of the [0, 1]-restricted Gaussian, so draws match pdf().
        u = rng.random(count)
        lo_mass = ndtr(self._z_lo)
        z = self.inside_mass
        return self.center + self.sigma * ndtri(lo_mass + u * z)

    def to_config(self):
        return {"kind": "gaussian", "mean": self.center, "sigma": self.sigma}


@dataclass(frozen=True)
class Uniform(TransmittanceDistribution):
    """Uniform density on ``[center - half_width, center + half_width]``."""

    center: float
    half_width: float
    kind = "uniform"

    def __post_init__(self):
        if not self.half_width > 0.0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.center - self.half_width < 0.0 or self.center + self.half_width > 1.0:
            raise SupportOutOfRangeError(
                f"support [{self.center - self.half_width}, "
                f"{self.center + self.half_width}] leaves [0, 1]"
            )

    @property
    def lo(self) -> float:
        return self.center - self.half_width

    @property
    def hi(self) -> float:
        return self.center + self.half_width

    def pdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        height = 1.0 / (2.0 * self.half_width)
        out = np.where((tau >= self.lo) & (tau <= self.hi), height, 0.0)
        return float(out) if out.ndim == 0 else out

    def moments(self):
        return (self.center, self.half_width**2 / 3.0)

    def truncation_interval(self, coverage):
        _check_coverage(coverage)
        return (
            self.center - coverage * self.half_width,
            self.center + coverage * self.half_width,
        )

    def sample(self, rng, count):
        return self.lo + 2.0 * self.half_width * rng.random(count)

    def to_config(self):
        return {"kind": "uniform", "mean": self.center, "half_width": self.half_width}


@dataclass(frozen=True)
class Empirical(TransmittanceDistribution):
    """Piecewise-constant density over uniform-width bins.

    ``edges`` has ``K + 1`` entries; ``masses`` has ``K`` nonnegative entries
    summing to 1.
    """

    edges: tuple
    masses: tuple
    kind = "empirical"

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if edges.ndim != 1 or edges.size < 2:
            raise ValueError("edges must hold at least two values")
        if masses.size != edges.size - 1:
            raise ValueError("need exactly one mass per bin")
        widths = np.diff(edges)
        if np.any(widths <= 0):
            raise ValueError("edges must be strictly increasing")
        if not np.allclose(widths, widths[0], rtol=1e-9, atol=1e-12):
            raise ValueError("bins must have uniform width")
        if np.any(masses < 0):
            raise ValueError("bin masses must be nonnegative")
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"bin masses must sum to 1, got {masses.sum()}")
        if edges[0] < -1e-12 or edges[-1] > 1.0 + 1e-12:
            raise SupportOutOfRangeError("histogram support leaves [0, 1]")
        object.__setattr__(self, "edges", tuple(float(e) for e in edges))
        object.__setattr__(self, "masses", tuple(float(m) for m in masses))

    @property
    def _edges(self) -> np.ndarray:
        return np.asarray(self.edges)

    @property
    def _masses(self) -> np.ndarray:
        return np.asarray(self.masses)

    @property
    def bin_width(self) -> float:
        return float(self._edges[1] - self._edges[0])

    @property
    def midpoints(self) -> np.ndarray:
        e = self._edges
        return 0.5 * (e[:-1] + e[1:])

    def pdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        e = self._edges
        heights = self._masses / self.bin_width
        idx = np.clip(np.searchsorted(e, tau, side="right") - 1, 0, len(heights) - 1)
        inside = (tau >= e[0]) & (tau <= e[-1])
        out = np.where(inside, heights[idx], 0.0)
        return float(out) if out.ndim == 0 else out

    def moments(self):
        mids = self.midpoints
        m = self._masses
        mean = float(np.dot(m, mids))
        var = float(np.dot(m, mids**2) - mean**2)
        return (mean, max(var, 0.0))

    def _cdf_at_edges(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self._masses)])

    def _quantile(self, p: float) -> float:
        cdf = self._cdf_at_edges()
        e = self._edges
        p = min(max(p, 0.0), 1.0)
        k = int(np.searchsorted(cdf, p, side="right") - 1)
        k = min(max(k, 0), len(self.masses) - 1)
        mass_k = self.masses[k]
        if mass_k == 0.0:
            return float(e[k])
        frac = (p - cdf[k]) / mass_k
        return float(e[k] + frac * (e[k + 1] - e[k]))

    def truncation_interval(self, coverage):
        _check_coverage(coverage)
        tail = (1.0 - coverage) / 2.0
        return (
            max(0.0, self._quantile(tail)),
            min(1.0, self._quantile(1.0 - tail)),
        )

    def sample(self, rng, count):
        bins = rng.choice(len(self.masses), size=count, p=self._masses)
        e = self._edges
        return e[bins] + rng.random(count) * self.bin_width

    def to_config(self):
        return {
            "kind": "empirical",
            "edges": list(self.edges),
            "masses": list(self.masses),
        }

    @classmethod
    def from_csv(cls, path) -> "Empirical":
        """Load from a two-column CSV of (bin_center, mass) rows.

        Centers must be uniformly spaced (at least two rows); edges are
        inferred as centers +- half the spacing.
        """
        centers = []
        masses = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    c, m = float(row[0]), float(row[1])
                except ValueError:
                    continue  # header row
                centers.append(c)
                masses.append(m)
        if len(centers) < 2:
            raise ValueError("empirical CSV needs at least two (center, mass) rows")
        centers = np.asarray(centers)
        spacing = np.diff(centers)
        if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=1e-12):
            raise ValueError("bin centers must be uniformly spaced")
        w = float(spacing[0])
        edges = np.concatenate([centers - w / 2.0, [centers[-1] + w / 2.0]])
        total = float(np.sum(masses))
        if total <= 0:
            raise ValueError("empirical CSV has no mass")
        return cls(edges=tuple(edges), masses=tuple(np.asarray(masses) / total))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau_center", "mass"])
            for c, m in zip(self.midpoints, self.masses):
                writer.writerow([repr(float(c)), repr(float(m))])


def uniform_matching_sigma(center: float, sigma: float) -> Uniform:
    """Uniform window with the same variance as a Gaussian of width ``sigma``.

    Uses ``half_width = sqrt(3) * sigma`` so the variance is exactly
    ``sigma**2``.  Raises :class:`SupportOutOfRangeError` when the window
    leaves [0, 1].
    """
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    half_width = math.sqrt(3.0) * sigma
    if center - half_width < 0.0 or center + half_width > 1.0:
        raise SupportOutOfRangeError(
            f"matched support [{center - half_width}, {center + half_width}] "
            f"leaves [0, 1]"
        )
    return Uniform(center=center, half_width=half_width)


@dataclass(frozen=True)
class ProcessPair:
    """Reference and defective transmittance ensembles with a prior."""

    reference: TransmittanceDistribution
    defective: TransmittanceDistribution
    prior: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.prior <= 1.0:
            raise ValueError(f"prior must lie in [0, 1], got {self.prior}")

    def to_config(self):
        return {
            "reference": self.reference.to_config(),
            "defective": self.defective.to_config(),
            "prior": self.prior,
        }


def from_config(config: dict) -> TransmittanceDistribution:
    """Build a distribution from its ``{kind, params}`` mapping."""
    cfg = dict(config)
    kind = cfg.pop("kind", None)
    if kind == "delta":
        return Delta(tau0=float(cfg["tau0"]))
    if kind == "gaussian":
        return Gaussian(center=float(cfg["mean"]), sigma=float(cfg["sigma"]))
    if kind == "uniform":
        if "half_width" in cfg:
            return Uniform(center=float(cfg["mean"]), half_width=float(cfg["half_width"]))
        # variance-matched convenience spelling
        return uniform_matching_sigma(float(cfg["mean"]), float(cfg["sigma"]))
    if kind == "empirical":
        if "csv" in cfg:
            return Empirical.from_csv(Path(cfg["csv"]))
        return Empirical(edges=tuple(cfg["edges"]), masses=tuple(cfg["masses"]))
    raise ValueError(f"unknown distribution kind: {kind!r}")
