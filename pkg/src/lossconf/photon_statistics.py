"""Photon-count statistics of classical and twin-beam probes after loss.

The models here follow one bookkeeping rule throughout: the energy constraint
is the mean photon number sent *into* the channel (``mean_photons`` for the
classical probe, ``mean_pairs`` for the twin-beam source), before detection
efficiency.  Detector efficiency folds in as ``mean -> eta * mean`` on the
signal arm and never relaxes the constraint.

Count laws:

* Classical Poisson probe through transmittance ``tau`` stays Poisson with
  mean ``n * eta_s * tau``.  Averaged over a transmittance density ``g`` the
  single-arm law is the compound distribution
  ``h(k) = integral Pois(k; n_eff * tau) g(tau) dtau``; for a uniform ``g``
  this has the closed form
  ``[Gamma(k+1, n_eff*(c-d)) - Gamma(k+1, n_eff*(c+d))] / (2 d n_eff k!)``
  with ``Gamma`` the upper incomplete gamma function.
* The twin-beam source emits photon pairs with Poisson-distributed pair
  number.  Independent per-photon survival (``eta_s * tau`` on the signal
  arm, ``eta_i`` on the idler) splits each pair into four categories, so the
  detected counts decompose as ``n_s = m + x_s``, ``n_i = m + x_i`` with
  independent ``m ~ Pois(lam * a * b)``, ``x_s ~ Pois(lam * a * (1-b) + nu)``
  and ``x_i ~ Pois(lam * (1-a) * b + nu)`` where ``a = eta_s * tau`` and
  ``b = eta_i`` -- a bivariate Poisson whose marginals are exactly Poisson
  and whose covariance is ``lam * a * b``.

Dark counts are an independent additive ``Pois(nu)`` per detected arm.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import signal
from scipy.special import gammaincc, gammaln
from scipy.stats import binom as binom_dist

from .distributions import Delta, Empirical, Gaussian, TransmittanceDistribution, Uniform
from .errors import CutoffTooSmallError, QuadratureFailedError, WrongArityError

TAIL_MASS_LIMIT = 1e-10
PMF_TOLERANCE = 1e-9
QUADRATURE_COVERAGE = 1.0 - 1e-10
GAUSSIAN_ADVISORY_MEAN = 50.0

EXACT_LATTICE = "exact-lattice"
GAUSSIAN_MOMENTS = "gaussian-moments"


class GaussianApproximationAdvisory(UserWarning):
    """Gaussian-moment surrogate requested below the recommended mean count."""


@dataclass(frozen=True)
class ClassicalPoisson:
    """Coherent/Poissonian probe with ``mean_photons`` sent at the sample."""

    mean_photons: float

    def __post_init__(self):
        if not (math.isfinite(self.mean_photons) and self.mean_photons >= 0.0):
            raise ValueError(f"mean_photons must be finite and >= 0, got {self.mean_photons}")

    def to_config(self):
        return {"kind": "classical", "mean_photons": self.mean_photons}


@dataclass(frozen=True)
class TmsvPairSource:
    """Twin-beam pair source in the many-mode Poisson-pair limit.

    ``mean_pairs`` is the mean photon number on the signal arm before losses;
    signal and idler counts are perfectly correlated at the source.
    """

    mean_pairs: float

    def __post_init__(self):
        if not (math.isfinite(self.mean_pairs) and self.mean_pairs >= 0.0):
            raise ValueError(f"mean_pairs must be finite and >= 0, got {self.mean_pairs}")

    def to_config(self):
        return {"kind": "tmsv", "mean_pairs": self.mean_pairs}


@dataclass(frozen=True)
class DetectionModel:
    """Arm efficiencies and mean dark counts per frame per region."""

    eta_signal: float = 1.0
    eta_idler: float = 1.0
    dark_counts: float = 0.0

    def __post_init__(self):
        for name in ("eta_signal", "eta_idler"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.dark_counts < 0.0:
            raise ValueError(f"dark_counts must be >= 0, got {self.dark_counts}")

    def to_config(self):
        return {
            "eta_signal": self.eta_signal,
            "eta_idler": self.eta_idler,
            "dark_counts": self.dark_counts,
        }


IDEAL_DETECTION = DetectionModel()


def probe_from_config(config: dict) -> ClassicalPoisson | TmsvPairSource:
    kind = config.get("kind")
    if kind == "classical":
        return ClassicalPoisson(mean_photons=float(config["mean_photons"]))
    if kind == "tmsv":
        return TmsvPairSource(mean_pairs=float(config["mean_pairs"]))
    raise ValueError(f"unknown probe kind: {kind!r}")


def detection_from_config(config: dict) -> DetectionModel:
    return DetectionModel(
        eta_signal=float(config.get("eta_signal", 1.0)),
        eta_idler=float(config.get("eta_idler", 1.0)),
        dark_counts=float(config.get("dark_counts", 0.0)),
    )


class CountDistribution:
    """Probability law over single or joint photon counts.

    Either an exact lattice (``masses`` is a 1-D or 2-D array over counts
    starting at 0) or a Gaussian-moment surrogate (``masses is None``).
    ``mean``/``cov`` always hold first and second moments.
    """

    def __init__(self, masses, mean, cov, representation):
        if representation not in (EXACT_LATTICE, GAUSSIAN_MOMENTS):
            raise ValueError(f"unknown representation: {representation}")
        self.representation = representation
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("cov shape must match mean length")
        eig = np.linalg.eigvalsh(self.cov)
        if eig.min() < -1e-9 * max(1.0, abs(eig).max()):
            raise ValueError("covariance must be positive semidefinite")
        if masses is None:
            if representation == EXACT_LATTICE:
                raise ValueError("exact-lattice distribution needs masses")
            self.masses = None
        else:
            masses = np.asarray(masses, dtype=float)
            if masses.ndim not in (1, 2):
                raise ValueError("masses must be 1-D or 2-D")
            if masses.min() < -1e-12:
                raise ValueError("masses must be nonnegative")
            self.masses = np.clip(masses, 0.0, None)

    # -- constructors ------------------------------------------------------

    @classmethod
    def exact(cls, masses, mean=None, cov=None) -> "CountDistribution":
        """Exact lattice; moments computed from the lattice unless provided."""
        masses = np.clip(np.asarray(masses, dtype=float), 0.0, None)
        if mean is None or cov is None:
            mean, cov = _lattice_moments(masses)
        return cls(masses, mean, cov, EXACT_LATTICE)

    @classmethod
    def gaussian(cls, mean, cov) -> "CountDistribution":
        return cls(None, mean, cov, GAUSSIAN_MOMENTS)

    # -- basic queries -----------------------------------------------------

    @property
    def is_joint(self) -> bool:
        return self.mean.size == 2

    @property
    def cutoff(self) -> int | None:
        if self.masses is None:
            return None
        return int(self.masses.shape[0] - 1)

    def total_mass(self) -> float:
        if self.masses is None:
            return 1.0
        return float(self.masses.sum())

    def marginal(self, axis: int) -> np.ndarray:
        if self.masses is None or self.masses.ndim != 2:
            raise WrongArityError("marginal requires a joint exact lattice")
        return self.masses.sum(axis=1 - axis)

    def moments(self):
        return self.mean.copy(), self.cov.copy()

    # -- export ------------------------------------------------------------

    def to_csv(self, path) -> None:
        """Write nonzero lattice entries as (n[, n_i], mass) rows."""
        if self.masses is None:
            raise WrongArityError("gaussian-moments distributions export to JSON")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.masses.ndim == 1:
                writer.writerow(["n", "mass"])
                for n in np.nonzero(self.masses)[0]:
                    writer.writerow([int(n), repr(float(self.masses[n]))])
            else:
                writer.writerow(["n_s", "n_i", "mass"])
                rows, cols = np.nonzero(self.masses)
                for r, c in zip(rows, cols):
                    writer.writerow([int(r), int(c), repr(float(self.masses[r, c]))])

    def to_json(self, path) -> None:
        payload = {"mean": self.mean.tolist(), "cov": self.cov.tolist()}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _lattice_moments(masses: np.ndarray):
    total = masses.sum()
    if total <= 0:
        raise ValueError("lattice has no mass")
    if masses.ndim == 1:
        n = np.arange(masses.size)
        mean = float(np.dot(masses, n)) / total
        var = float(np.dot(masses, n**2)) / total - mean**2
        return np.array([mean]), np.array([[max(var, 0.0)]])
    ns = np.arange(masses.shape[0])
    ni = np.arange(masses.shape[1])
    ps = masses.sum(axis=1)
    pi = masses.sum(axis=0)
    mean_s = float(np.dot(ps, ns)) / total
    mean_i = float(np.dot(pi, ni)) / total
    var_s = float(np.dot(ps, ns**2)) / total - mean_s**2
    var_i = float(np.dot(pi, ni**2)) / total - mean_i**2
    cross = float(ns @ masses @ ni) / total - mean_s * mean_i
    return (
        np.array([mean_s, mean_i]),
        np.array([[max(var_s, 0.0), cross], [cross, max(var_i, 0.0)]]),
    )


# -- small numeric helpers --------------------------------------------------


def poisson_pmf(n: np.ndarray, mean: float) -> np.ndarray:
    """Vectorized Poisson pmf that is exact at mean 0."""
    n = np.asarray(n)
    if mean == 0.0:
        return np.where(n == 0, 1.0, 0.0)
    return np.exp(n * math.log(mean) - mean - gammaln(n + 1.0))


def required_cutoff(mean: float, variance: float) -> int:
    """Lattice cutoff rule: mean + 10 standard deviations, rounded up."""
    sd = math.sqrt(max(variance, 0.0))
    return max(int(math.ceil(mean + 10.0 * sd)), 16)


_LEGENDRE_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(order: int):
    if order not in _LEGENDRE_CACHE:
        _LEGENDRE_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _LEGENDRE_CACHE[order]


def gauss_legendre_nodes(lo: float, hi: float, order: int):
    """Nodes and weights on [lo, hi]."""
    x, w = _leggauss(order)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def _tau_quadrature_rule(g: TransmittanceDistribution, order: int):
    """Quadrature nodes/weights absorbing the density g over its bulk.

    Piecewise-constant variants get a composite rule split at bin edges so
    the rule converges spectrally in ``order``.
    """
    if isinstance(g, Empirical):
        nodes = []
        weights = []
        edges = np.asarray(g.edges)
        per_bin = max(2, order // max(1, len(g.masses)))
        for k, mass in enumerate(g.masses):
            if mass == 0.0:
                continue
            x, w = gauss_legendre_nodes(edges[k], edges[k + 1], per_bin)
            nodes.append(x)
            weights.append(w * g.pdf(x))
        return np.concatenate(nodes), np.concatenate(weights)
    lo, hi = g.truncation_interval(QUADRATURE_COVERAGE)
    x, w = gauss_legendre_nodes(lo, hi, order)
    return x, w * g.pdf(x)


# -- operations --------------------------------------------------------------


def loss_map(pmf: CountDistribution, transmittance: float) -> CountDistribution:
    """Binomial thinning of a single-count lattice; mass preserving."""
    if pmf.masses is None or pmf.is_joint:
        raise WrongArityError("loss_map acts on single-count exact lattices")
    if not 0.0 <= transmittance <= 1.0:
        raise ValueError(f"transmittance must lie in [0, 1], got {transmittance}")
    p = pmf.masses
    if transmittance == 1.0:
        return CountDistribution.exact(p.copy())
    n = np.arange(p.size)
    thin = binom_dist.pmf(n[:, None], n[None, :], transmittance)
    return CountDistribution.exact(thin @ p)


def _pair_rates(probe: TmsvPairSource, tau: float, det: DetectionModel):
    a = det.eta_signal * tau
    b = det.eta_idler
    lam = probe.mean_pairs
    shared = lam * a * b
    solo_s = lam * a * (1.0 - b) + det.dark_counts
    solo_i = lam * (1.0 - a) * b + det.dark_counts
    return shared, solo_s, solo_i


def _joint_required_cutoff(probe: TmsvPairSource, det: DetectionModel, mean_tau: float, var_tau: float = 0.0) -> int:
    lam = probe.mean_pairs
    mean_s = lam * det.eta_signal * mean_tau + det.dark_counts
    var_s = mean_s + (lam * det.eta_signal) ** 2 * var_tau
    mean_i = lam * det.eta_idler + det.dark_counts
    return max(required_cutoff(mean_s, var_s), required_cutoff(mean_i, mean_i))


def _bivariate_poisson_lattice(shared: float, solo_s: float, solo_i: float, cutoff: int) -> np.ndarray:
    """Lattice of ``(m + x_s, m + x_i)`` with independent Poisson components.

    Degenerate components are handled exactly; the general case inverts the
    probability generating function on a root-of-unity grid (one 2-D FFT).
    """
    size = cutoff + 1
    n = np.arange(size)
    if shared == 0.0:
        return np.outer(poisson_pmf(n, solo_s), poisson_pmf(n, solo_i))
    diag = poisson_pmf(n, shared)
    if solo_s == 0.0 and solo_i == 0.0:
        return np.diag(diag)
    if solo_s == 0.0 or solo_i == 0.0:
        solo = solo_i if solo_s == 0.0 else solo_s
        kernel = poisson_pmf(n, solo)
        out = np.zeros((size, size))
        for k in range(size):
            if solo_s == 0.0:
                out[k, k:] = diag[k] * kernel[: size - k]
            else:
                out[k:, k] = diag[k] * kernel[: size - k]
        return out
    m = sfft.next_fast_len(size + 8)
    omega = np.exp(-2j * np.pi * np.arange(m) / m)
    exponent = (
        shared * np.outer(omega, omega)
        + solo_s * omega[:, None]
        + solo_i * omega[None, :]
        - (shared + solo_s + solo_i)
    )
    lattice = np.fft.ifft2(np.exp(exponent)).real[:size, :size]
    return np.clip(lattice, 0.0, None)


def joint_conditional(
    probe: TmsvPairSource,
    tau: float,
    det: DetectionModel = IDEAL_DETECTION,
    cutoff: int | None = None,
) -> CountDistribution:
    """Joint (signal, idler) count law of the pair source at fixed ``tau``."""
    if not isinstance(probe, TmsvPairSource):
        raise WrongArityError("joint_conditional requires a pair source")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    required = _joint_required_cutoff(probe, det, tau)
    if cutoff is None:
        cutoff = required
    elif cutoff < required:
        raise CutoffTooSmallError(
            f"cutoff {cutoff} leaves tail mass above {TAIL_MASS_LIMIT}",
            required=required,
        )
    shared, solo_s, solo_i = _pair_rates(probe, tau, det)
    masses = _bivariate_poisson_lattice(shared, solo_s, solo_i, cutoff)
    lam = probe.mean_pairs
    mean_s = lam * det.eta_signal * tau + det.dark_counts
    mean_i = lam * det.eta_idler + det.dark_counts
    mean = np.array([mean_s, mean_i])
    cov = np.array([[mean_s, shared], [shared, mean_i]])
    return CountDistribution(masses, mean, cov, EXACT_LATTICE)


def _uniform_compound_pmf(n: np.ndarray, n_eff: float, lo: float, hi: float) -> np.ndarray:
    """Closed form of the Poisson law averaged over a uniform transmittance."""
    if n_eff == 0.0:
        return np.where(n == 0, 1.0, 0.0)
    a = n_eff * lo
    b = n_eff * hi
    vals = (gammaincc(n + 1.0, a) - gammaincc(n + 1.0, b)) / (b - a)
    return np.clip(vals, 0.0, None)


def _classical_cutoff(n_eff: float, g: TransmittanceDistribution, nu: float) -> int:
    mean_tau, var_tau = g.moments()
    mean = n_eff * mean_tau + nu
    var = n_eff * mean_tau + n_eff**2 * var_tau + nu
    return required_cutoff(mean, var)


def _fold_dark_counts(masses: np.ndarray, nu: float, cutoff: int) -> np.ndarray:
    if nu == 0.0:
        return masses
    dark_cut = required_cutoff(nu, nu)
    kernel = poisson_pmf(np.arange(dark_cut + 1), nu)
    if masses.ndim == 1:
        return signal.convolve(masses, kernel)[: cutoff + 1]
    out = signal.convolve(masses, kernel[:, None])[: cutoff + 1, :]
    return signal.convolve(out, kernel[None, :])[:, : cutoff + 1]


def marginal_compound(
    probe: ClassicalPoisson,
    g: TransmittanceDistribution,
    det: DetectionModel = IDEAL_DETECTION,
    cutoff: int | None = None,
) -> CountDistribution:
    """Single-count law of a classical probe averaged over ``g``.

    Efficiency enters only through ``n_eff = mean_photons * eta_signal``, so
    the result with ``(n, eta)`` equals the one with ``(eta * n, 1)`` exactly.
    """
    if not isinstance(probe, ClassicalPoisson):
        raise WrongArityError("marginal_compound requires a classical probe")
    n_eff = probe.mean_photons * det.eta_signal
    nu = det.dark_counts
    required = _classical_cutoff(n_eff, g, nu)
    if cutoff is None:
        cutoff = required
    elif cutoff < required:
        raise CutoffTooSmallError(
            f"cutoff {cutoff} leaves tail mass above {TAIL_MASS_LIMIT}",
            required=required,
        )
    n = np.arange(cutoff + 1)
    if isinstance(g, Delta):
        masses = poisson_pmf(n, n_eff * g.tau0)
    elif isinstance(g, Uniform):
        masses = _uniform_compound_pmf(n, n_eff, g.lo, g.hi)
    elif isinstance(g, Empirical):
        # piecewise-constant density: exact mixture of uniform windows
        edges = np.asarray(g.edges)
        masses = np.zeros(cutoff + 1)
        for k, mass in enumerate(g.masses):
            if mass == 0.0:
                continue
            masses += mass * _uniform_compound_pmf(n, n_eff, edges[k], edges[k + 1])
    elif isinstance(g, Gaussian):
        masses = _adaptive_classical_quadrature(n, n_eff, g)
    else:
        raise ValueError(f"unsupported distribution: {type(g).__name__}")
    masses = _fold_dark_counts(masses, nu, cutoff)
    mean_tau, var_tau = g.moments()
    mean = n_eff * mean_tau + nu
    var = n_eff * mean_tau + n_eff**2 * var_tau + nu
    return CountDistribution(masses, [mean], [[var]], EXACT_LATTICE)


def _adaptive_classical_quadrature(n: np.ndarray, n_eff: float, g: Gaussian) -> np.ndarray:
    if n_eff == 0.0:
        return np.where(n == 0, 1.0, 0.0)
    previous = None
    order = 32
    residual = math.inf
    while order <= 4096:
        taus, weights = _tau_quadrature_rule(g, order)
        log_rates = np.log(np.clip(n_eff * taus, 1e-300, None))
        log_pmf = n[:, None] * log_rates[None, :] - (n_eff * taus)[None, :] - gammaln(n + 1.0)[:, None]
        current = np.exp(log_pmf) @ weights
        if previous is not None:
            residual = float(np.max(np.abs(current - previous)))
            if residual < PMF_TOLERANCE:
                return np.clip(current, 0.0, None)
        previous = current
        order *= 2
    raise QuadratureFailedError(
        f"transmittance quadrature stalled at residual {residual:.2e}",
        residual=residual,
    )


def process_count_distribution(
    probe: ClassicalPoisson | TmsvPairSource,
    g: TransmittanceDistribution,
    det: DetectionModel = IDEAL_DETECTION,
    cutoff: int | None = None,
) -> CountDistribution:
    """Count law of a whole process: the ``tau``-conditional law averaged over ``g``."""
    if isinstance(probe, ClassicalPoisson):
        return marginal_compound(probe, g, det, cutoff)
    if isinstance(g, Delta):
        return joint_conditional(probe, g.tau0, det, cutoff)
    mean_tau, var_tau = g.moments()
    required = _joint_required_cutoff(probe, det, mean_tau, var_tau)
    if cutoff is None:
        cutoff = required
    elif cutoff < required:
        raise CutoffTooSmallError(
            f"cutoff {cutoff} leaves tail mass above {TAIL_MASS_LIMIT}",
            required=required,
        )
    previous = None
    order = 8
    residual = math.inf
    while order <= 256:
        taus, weights = _tau_quadrature_rule(g, order)
        current = np.zeros((cutoff + 1, cutoff + 1))
        for tau, weight in zip(taus, weights):
            shared, solo_s, solo_i = _pair_rates(probe, float(tau), det)
            current += weight * _bivariate_poisson_lattice(shared, solo_s, solo_i, cutoff)
        if previous is not None:
            residual = float(np.max(np.abs(current - previous)))
            if residual < PMF_TOLERANCE:
                break
        previous = current
        order *= 2
    else:
        raise QuadratureFailedError(
            f"transmittance quadrature stalled at residual {residual:.2e}",
            residual=residual,
        )
    lam = probe.mean_pairs
    nu = det.dark_counts
    mean_s = lam * det.eta_signal * mean_tau + nu
    mean_i = lam * det.eta_idler + nu
    var_s = mean_s + (lam * det.eta_signal) ** 2 * var_tau
    cross = lam * det.eta_signal * det.eta_idler * mean_tau
    mean = np.array([mean_s, mean_i])
    cov = np.array([[var_s, cross], [cross, mean_i]])
    return CountDistribution(np.clip(current, 0.0, None), mean, cov, EXACT_LATTICE)


def gaussian_moments(
    probe: ClassicalPoisson | TmsvPairSource,
    g: TransmittanceDistribution,
    det: DetectionModel = IDEAL_DETECTION,
) -> CountDistribution:
    """Gaussian-moment surrogate of :func:`process_count_distribution`.

    Classical: mean ``n_eff * tau_bar + nu`` and variance
    ``n_eff * tau_bar + n_eff**2 * var_g + nu``.  Twin-beam: Poisson marginals
    with the signal variance widened by the transmittance spread and
    covariance ``lam * eta_s * eta_i * E[tau]``.
    """
    mean_tau, var_tau = g.moments()
    nu = det.dark_counts
    if isinstance(probe, ClassicalPoisson):
        n_eff = probe.mean_photons * det.eta_signal
        if n_eff * mean_tau < GAUSSIAN_ADVISORY_MEAN:
            warnings.warn(
                f"mean detected count {n_eff * mean_tau:.1f} is below "
                f"{GAUSSIAN_ADVISORY_MEAN}; the Gaussian surrogate may be poor",
                GaussianApproximationAdvisory,
                stacklevel=2,
            )
        mean = n_eff * mean_tau + nu
        var = n_eff * mean_tau + n_eff**2 * var_tau + nu
        return CountDistribution.gaussian([mean], [[var]])
    lam = probe.mean_pairs
    if lam * det.eta_signal * mean_tau < GAUSSIAN_ADVISORY_MEAN:
        warnings.warn(
            f"mean detected count {lam * det.eta_signal * mean_tau:.1f} is below "
            f"{GAUSSIAN_ADVISORY_MEAN}; the Gaussian surrogate may be poor",
            GaussianApproximationAdvisory,
            stacklevel=2,
        )
    mean_s = lam * det.eta_signal * mean_tau + nu
    mean_i = lam * det.eta_idler + nu
    var_s = mean_s + (lam * det.eta_signal) ** 2 * var_tau
    cross = lam * det.eta_signal * det.eta_idler * mean_tau
    return CountDistribution.gaussian(
        [mean_s, mean_i], [[var_s, cross], [cross, mean_i]]
    )


def lattice_tail_mass(dist: CountDistribution) -> float:
    """Mass missing from the truncated lattice."""
    return max(0.0, 1.0 - dist.total_mass())
