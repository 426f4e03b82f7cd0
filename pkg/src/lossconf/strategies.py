"""Error probabilities of the three conformance-test strategies.

* :func:`classical_bound` -- the optimal-measurement lower bound for any
  classical probe at fixed signal energy,

  ``C = (1 - E_g0 E_g1[ sqrt(1 - exp(-n (sqrt(tau0) - sqrt(tau1))**2)) ]) / 2``.

* :func:`classical_pc_error` -- the best classical probe read out by photon
  counting.  The closed form compares the two Gaussian-surrogate outcome laws
  and integrates the smaller density; the two crossing points of unequal
  Gaussians give

  ``q = (E0(t+) + E1(t-) - E0(t-) - E1(t+)) / 2``,  ``error = (1 - q) / 2``,

  with ``Ex(t) = erf((t - mean_x) / (sqrt(2) sd_x))``.  The exact-lattice mode
  performs the maximum-likelihood sum ``sum_n min_x h_x(n) / 2`` directly.

* :func:`quantum_pc_error` -- the twin-beam probe with photon counting,
  ``Q = sum_n min_x p(n | process_x) / 2`` on the joint lattice, with
  Gaussian-surrogate and Monte Carlo evaluations for large means.

All maximum-likelihood errors are at most 1/2 (guessing); deterministic
results are clamped into [0, 1/2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, ndtr

from .distributions import (
    Delta,
    Empirical,
    Gaussian,
    ProcessPair,
    TransmittanceDistribution,
    Uniform,
)
from .errors import (
    CutoffTooSmallError,
    InsufficientSamplesError,
    NoThresholdError,
    QuadratureFailedError,
)
from .photon_statistics import (
    ClassicalPoisson,
    DetectionModel,
    IDEAL_DETECTION,
    TmsvPairSource,
    _classical_cutoff,
    _joint_required_cutoff,
    gaussian_moments,
    marginal_compound,
    process_count_distribution,
)

CLOSED_FORM = "closed-form"
EXACT_LATTICE = "exact-lattice"
GAUSSIAN_APPROX = "gaussian-approx"
MONTE_CARLO = "monte-carlo"

MAX_LATTICE_CELLS = 40_000_000  # explicit exact-lattice requests (pair means to ~5e3)
MC_LIKELIHOOD_CELLS = 4_000_000  # above this, Monte Carlo labels by surrogate densities
MIN_MC_SAMPLES = 1_000


@dataclass(frozen=True)
class StrategyResult:
    """An error probability together with how it was computed."""

    value: float
    method: str
    uncertainty: float = 0.0

    def __post_init__(self):
        if self.method not in (CLOSED_FORM, EXACT_LATTICE, GAUSSIAN_APPROX, MONTE_CARLO):
            raise ValueError(f"unknown method: {self.method}")
        slack = max(5.0 * self.uncertainty, 1e-12)
        if not -1e-12 <= self.value <= 0.5 + slack:
            raise ValueError(f"error probability {self.value} outside [0, 1/2]")


@dataclass(frozen=True)
class GaussianPair:
    """Gaussian-surrogate outcome laws of the two processes."""

    mean_ref: float
    sd_ref: float
    mean_def: float
    sd_def: float

    def __post_init__(self):
        if self.sd_ref <= 0.0 or self.sd_def <= 0.0:
            raise ValueError("standard deviations must be positive")


def _ml_error(p0: np.ndarray, p1: np.ndarray) -> float:
    return float(np.minimum(p0, p1).sum()) / 2.0


def _clamped(value: float) -> float:
    return float(min(max(value, 0.0), 0.5))


# -- classical bound ---------------------------------------------------------


def _bound_integrand(n: float, tau0, tau1):
    d = np.sqrt(tau0) - np.sqrt(tau1)
    return np.sqrt(-np.expm1(-n * d * d))


def _split_nodes(g: TransmittanceDistribution, split_at: float | None, order: int):
    """Quadrature nodes absorbing g, split at a known integrand kink."""
    from .photon_statistics import _tau_quadrature_rule, gauss_legendre_nodes

    if split_at is None or isinstance(g, Empirical):
        return _tau_quadrature_rule(g, order)
    lo, hi = g.truncation_interval(1.0 - 1e-12)
    if not lo < split_at < hi:
        return _tau_quadrature_rule(g, order)
    xs, ws = [], []
    for a, b in ((lo, split_at), (split_at, hi)):
        x, w = gauss_legendre_nodes(a, b, order)
        xs.append(x)
        ws.append(w * g.pdf(x))
    return np.concatenate(xs), np.concatenate(ws)


def classical_bound(pair: ProcessPair, mean_photons: float) -> StrategyResult:
    """Lower bound on the error of any classical probe at this signal energy."""
    if mean_photons < 0.0:
        raise ValueError(f"mean_photons must be >= 0, got {mean_photons}")
    g0, g1 = pair.reference, pair.defective
    if isinstance(g0, Delta) and isinstance(g1, Delta):
        expectation = float(_bound_integrand(mean_photons, g0.tau0, g1.tau0))
        return StrategyResult(_clamped((1.0 - expectation) / 2.0), CLOSED_FORM)
    if mean_photons == 0.0:
        return StrategyResult(0.5, CLOSED_FORM)

    def expectation_at(order: int) -> float:
        if isinstance(g0, Delta):
            t1, w1 = _split_nodes(g1, g0.tau0, order)
            return float(np.dot(w1, _bound_integrand(mean_photons, g0.tau0, t1)))
        if isinstance(g1, Delta):
            t0, w0 = _split_nodes(g0, g1.tau0, order)
            return float(np.dot(w0, _bound_integrand(mean_photons, t0, g1.tau0)))
        # double integral: split the inner grid at each outer node
        t0, w0 = _split_nodes(g0, None, order)
        total = 0.0
        for tau0, weight in zip(t0, w0):
            t1, w1 = _split_nodes(g1, float(tau0), order)
            total += weight * float(np.dot(w1, _bound_integrand(mean_photons, tau0, t1)))
        return total

    previous = None
    order = 32
    residual = math.inf
    while order <= 2048:
        current = expectation_at(order)
        if previous is not None:
            residual = abs(current - previous)
            if residual < 1e-10:
                return StrategyResult(_clamped((1.0 - current) / 2.0), CLOSED_FORM)
        previous = current
        order *= 2
    raise QuadratureFailedError(
        f"bound quadrature stalled at residual {residual:.2e}", residual=residual
    )


# -- classical photon counting ------------------------------------------------


def classical_pc_thresholds(gp: GaussianPair) -> tuple[float, ...]:
    """Count thresholds where the two surrogate densities cross.

    Unequal widths give two crossings; equal widths give the midpoint.
    Identical surrogates have no threshold.
    """
    m0, s0, m1, s1 = gp.mean_ref, gp.sd_ref, gp.mean_def, gp.sd_def
    same_sd = abs(s0 - s1) <= 1e-12 * max(s0, s1)
    if same_sd:
        if abs(m0 - m1) <= 1e-12 * max(abs(m0), abs(m1), 1.0):
            raise NoThresholdError("outcome distributions are identical")
        return ((m0 + m1) / 2.0,)
    var_diff = s1 * s1 - s0 * s0
    log_term = 2.0 * var_diff * math.log(s1 / s0)
    disc = (s0 * s1) ** 2 * (log_term + (m1 - m0) ** 2)
    root = math.sqrt(max(disc, 0.0))
    lower = (m0 * s1 * s1 - m1 * s0 * s0 - root) / var_diff
    upper = (m0 * s1 * s1 - m1 * s0 * s0 + root) / var_diff
    return (min(lower, upper), max(lower, upper))


def _two_threshold_overlap(gp: GaussianPair) -> float:
    """The erf combination q such that the surrogate ML error is (1 - q)/2."""
    thresholds = classical_pc_thresholds(gp)

    def e_ref(t):
        return erf((t - gp.mean_ref) / (math.sqrt(2.0) * gp.sd_ref))

    def e_def(t):
        return erf((t - gp.mean_def) / (math.sqrt(2.0) * gp.sd_def))

    if len(thresholds) == 1:
        (t0,) = thresholds
        return abs(e_ref(t0) - e_def(t0)) / 2.0
    t_lo, t_hi = thresholds
    q = 0.5 * (e_ref(t_hi) + e_def(t_lo) - e_ref(t_lo) - e_def(t_hi))
    # derived under sd_def > sd_ref; the roles flip otherwise
    return q if gp.sd_def > gp.sd_ref else -q


def surrogate_gaussian_pair(
    pair: ProcessPair, mean_photons: float, det: DetectionModel
) -> GaussianPair:
    ref = gaussian_moments(ClassicalPoisson(mean_photons), pair.reference, det)
    dfc = gaussian_moments(ClassicalPoisson(mean_photons), pair.defective, det)
    return GaussianPair(
        mean_ref=float(ref.mean[0]),
        sd_ref=float(math.sqrt(ref.cov[0, 0])),
        mean_def=float(dfc.mean[0]),
        sd_def=float(math.sqrt(dfc.cov[0, 0])),
    )


def _uniform_count_regime(n_eff: float, g: Uniform, nu: float) -> str:
    """Which surrogate fits the compound law of a uniform transmittance window.

    Compares the Poisson width sqrt(n_eff * tau_bar) against the spread
    n_eff * half_width induced by the window: Poisson-dominated -> Gaussian,
    spread-dominated -> flat top, otherwise the exact lattice arbitrates.
    """
    poisson_sd = math.sqrt(max(n_eff * g.center + nu, 0.0))
    spread = n_eff * g.half_width
    if spread <= 0.0 or poisson_sd > spread:
        return "gaussian"
    if poisson_sd < 0.1 * spread:
        return "flat-top"
    return "lattice"


def _flat_top_error(gp_ref: tuple[float, float], window: tuple[float, float]) -> float:
    """ML error between a Gaussian density and a flat-top density.

    ``gp_ref = (mean, sd)``; ``window = (lo, hi)`` with height 1/(hi - lo).
    """
    mean, sd = gp_ref
    lo, hi = window
    height = 1.0 / (hi - lo)
    peak = 1.0 / (sd * math.sqrt(2.0 * math.pi))

    def mass(a, b):
        return float(ndtr((b - mean) / sd) - ndtr((a - mean) / sd))

    if peak <= height:
        # the flat density dominates everywhere in the window
        p10 = mass(lo, hi)
        p01 = 0.0
    else:
        half = sd * math.sqrt(2.0 * math.log(peak / height))
        a = max(lo, mean - half)
        b = min(hi, mean + half)
        if a >= b:
            p01 = 0.0
            p10 = mass(lo, hi)
        else:
            p01 = (b - a) * height
            p10 = mass(lo, hi) - mass(a, b)
    return (p01 + p10) / 2.0


def classical_pc_error(
    pair: ProcessPair,
    mean_photons: float,
    det: DetectionModel = IDEAL_DETECTION,
    mode: str = CLOSED_FORM,
) -> StrategyResult:
    """Best classical photon-counting error for the process pair."""
    if mode not in (CLOSED_FORM, EXACT_LATTICE):
        raise ValueError(f"mode must be closed-form or exact-lattice, got {mode}")
    probe = ClassicalPoisson(mean_photons)
    if mode == EXACT_LATTICE:
        return _classical_pc_lattice(pair, probe, det)

    n_eff = mean_photons * det.eta_signal
    nu = det.dark_counts
    if n_eff == 0.0:
        # no probe energy: the outcome laws coincide
        return StrategyResult(0.5, CLOSED_FORM)
    for g in (pair.reference, pair.defective):
        if isinstance(g, Empirical):
            return _classical_pc_lattice(pair, probe, det)
        if isinstance(g, Uniform):
            regime = _uniform_count_regime(n_eff, g, nu)
            if regime == "lattice":
                return _classical_pc_lattice(pair, probe, det)
            if regime == "flat-top":
                return _classical_pc_flat_top(pair, probe, det, g)
    gp = surrogate_gaussian_pair(pair, mean_photons, det)
    try:
        q = _two_threshold_overlap(gp)
    except NoThresholdError:
        return StrategyResult(0.5, CLOSED_FORM)
    return StrategyResult(_clamped((1.0 - q) / 2.0), CLOSED_FORM)


def _classical_pc_lattice(pair, probe, det) -> StrategyResult:
    cutoff = max(
        _classical_cutoff(probe.mean_photons * det.eta_signal, pair.reference, det.dark_counts),
        _classical_cutoff(probe.mean_photons * det.eta_signal, pair.defective, det.dark_counts),
    )
    h0 = marginal_compound(probe, pair.reference, det, cutoff)
    h1 = marginal_compound(probe, pair.defective, det, cutoff)
    return StrategyResult(_clamped(_ml_error(h0.masses, h1.masses)), EXACT_LATTICE)


def _classical_pc_flat_top(pair, probe, det, uniform_g) -> StrategyResult:
    n_eff = probe.mean_photons * det.eta_signal
    nu = det.dark_counts
    other = pair.reference if uniform_g is pair.defective else pair.defective
    if isinstance(other, Uniform) and _uniform_count_regime(n_eff, other, nu) == "flat-top":
        # two flat tops have no Gaussian side; the lattice arbitrates
        return _classical_pc_lattice(pair, probe, det)
    other_moments = gaussian_moments_of(other, n_eff, nu)
    window = (n_eff * uniform_g.lo + nu, n_eff * uniform_g.hi + nu)
    value = _flat_top_error(other_moments, window)
    return StrategyResult(_clamped(value), CLOSED_FORM)


def gaussian_moments_of(g: TransmittanceDistribution, n_eff: float, nu: float) -> tuple[float, float]:
    mean_tau, var_tau = g.moments()
    mean = n_eff * mean_tau + nu
    var = n_eff * mean_tau + n_eff**2 * var_tau + nu
    return mean, math.sqrt(var)


# -- quantum photon counting ---------------------------------------------------


def quantum_pc_error(
    pair: ProcessPair,
    probe: TmsvPairSource,
    det: DetectionModel = IDEAL_DETECTION,
    mode: str = EXACT_LATTICE,
    samples: int = 1_000_000,
    seed: int = 0,
) -> StrategyResult:
    """Twin-beam photon-counting error for the process pair."""
    if mode == EXACT_LATTICE:
        cutoff = max(
            _required_joint_cutoff(probe, det, pair.reference),
            _required_joint_cutoff(probe, det, pair.defective),
        )
        cells = (cutoff + 1) ** 2
        if cells > MAX_LATTICE_CELLS:
            raise CutoffTooSmallError(
                f"joint lattice of {cells} cells is infeasible; use "
                f"gaussian-approx or monte-carlo",
                required=cutoff,
            )
        p0 = process_count_distribution(probe, pair.reference, det, cutoff)
        p1 = process_count_distribution(probe, pair.defective, det, cutoff)
        return StrategyResult(_clamped(_ml_error(p0.masses, p1.masses)), EXACT_LATTICE)
    if mode == GAUSSIAN_APPROX:
        return _quantum_gaussian_approx(pair, probe, det)
    if mode == MONTE_CARLO:
        return _quantum_monte_carlo(pair, probe, det, samples, seed)
    raise ValueError(f"unknown mode: {mode}")


def _required_joint_cutoff(probe, det, g) -> int:
    mean_tau, var_tau = g.moments()
    return _joint_required_cutoff(probe, det, mean_tau, var_tau)


def _surrogate_moments(pair, probe, det, suppress_advisory: bool = False):
    import warnings

    with warnings.catch_warnings():
        if suppress_advisory:
            warnings.simplefilter("ignore")
        s0 = gaussian_moments(probe, pair.reference, det)
        s1 = gaussian_moments(probe, pair.defective, det)
    return s0, s1


def _regularized(cov: np.ndarray) -> np.ndarray:
    """Floor near-singular covariances (perfect correlation at eta = 1)."""
    var_floor = 1e-12 * max(cov[0, 0], cov[1, 1], 1.0)
    det_c = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
    if det_c <= var_floor * (cov[0, 0] + cov[1, 1]):
        return cov + np.eye(2) * var_floor
    return cov


def _bvn_logpdf_points(x, y, mean, cov):
    """Bivariate normal log density at arbitrary point arrays."""
    c = _regularized(cov)
    det_c = c[0, 0] * c[1, 1] - c[0, 1] ** 2
    dx = x - mean[0]
    dy = y - mean[1]
    quad = (c[1, 1] * dx * dx - 2.0 * c[0, 1] * dx * dy + c[0, 0] * dy * dy) / det_c
    return -0.5 * quad - 0.5 * math.log(4.0 * math.pi**2 * det_c)


def _quantum_gaussian_approx(pair, probe, det) -> StrategyResult:
    from .photon_statistics import gauss_legendre_nodes

    s0, s1 = _surrogate_moments(pair, probe, det)
    # Twin-beam surrogates are strongly correlated (elongated ellipses), so
    # integrate in the eigenbasis of the pooled covariance where the ridge
    # aligns with the grid axes.
    pooled = _regularized((s0.cov + s1.cov) / 2.0)
    _, rot = np.linalg.eigh(pooled)
    center = (s0.mean + s1.mean) / 2.0
    half_span = np.zeros(2)
    for dist in (s0, s1):
        offset = rot.T @ (dist.mean - center)
        proj_cov = rot.T @ _regularized(dist.cov) @ rot
        for k in range(2):
            half_span[k] = max(
                half_span[k], abs(offset[k]) + 8.5 * math.sqrt(max(proj_cov[k, k], 0.0))
            )
    previous = None
    order = 96
    residual = math.inf
    while order <= 1536:
        z1, w1 = gauss_legendre_nodes(-half_span[0], half_span[0], order)
        z2, w2 = gauss_legendre_nodes(-half_span[1], half_span[1], order)
        x = center[0] + rot[0, 0] * z1[:, None] + rot[0, 1] * z2[None, :]
        y = center[1] + rot[1, 0] * z1[:, None] + rot[1, 1] * z2[None, :]
        f0 = np.exp(_bvn_logpdf_points(x, y, s0.mean, s0.cov))
        f1 = np.exp(_bvn_logpdf_points(x, y, s1.mean, s1.cov))
        value = 0.5 * float(w1 @ np.minimum(f0, f1) @ w2)
        if previous is not None:
            residual = abs(value - previous)
            if residual < 1e-6:
                return StrategyResult(_clamped(value), GAUSSIAN_APPROX)
        previous = value
        order *= 2
    raise QuadratureFailedError(
        f"surrogate overlap integral stalled at residual {residual:.2e}",
        residual=residual,
    )


def _quantum_monte_carlo(pair, probe, det, samples, seed) -> StrategyResult:
    from .decision import DecisionRule
    from .monte_carlo import estimate_error_frequencies, sample_process

    if samples < MIN_MC_SAMPLES:
        raise InsufficientSamplesError(
            f"need at least {MIN_MC_SAMPLES} samples, got {samples}"
        )
    cutoff = max(
        _required_joint_cutoff(probe, det, pair.reference),
        _required_joint_cutoff(probe, det, pair.defective),
    )
    if (cutoff + 1) ** 2 <= MC_LIKELIHOOD_CELLS:
        lik0 = process_count_distribution(probe, pair.reference, det, cutoff)
        lik1 = process_count_distribution(probe, pair.defective, det, cutoff)
    else:
        # labeling only; Monte Carlo itself does not rely on Gaussianity
        lik0, lik1 = _surrogate_moments(pair, probe, det, suppress_advisory=True)
    seq = np.random.SeedSequence(entropy=seed)
    seed0, seed1 = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
    records0 = sample_process(probe, det, pair.reference, samples, seed0)
    records1 = sample_process(probe, det, pair.defective, samples, seed1)
    report = estimate_error_frequencies(records0, records1, lik0, lik1, DecisionRule(0.0))
    return StrategyResult(report.error_probability, MONTE_CARLO, report.error_probability_se)


# -- sweeps --------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    """One grid row of the three error-probability curves."""

    tau0: float
    bound: float
    classical_pc: float
    quantum: float
    quantum_se: float
    bound_method: str
    classical_pc_method: str
    quantum_method: str


def sweep_error_curves(
    defective: TransmittanceDistribution,
    tau0_grid,
    mean_photons: float,
    det: DetectionModel = IDEAL_DETECTION,
    quantum_mode: str = GAUSSIAN_APPROX,
    classical_mode: str = CLOSED_FORM,
    mc_samples: int = 1_000_000,
    seed: int = 0,
    threads: int = 1,
) -> list[SweepPoint]:
    """The three error curves against a strongly peaked reference at ``tau0``.

    The reference process is a point mass moved along ``tau0_grid`` while the
    defective ensemble stays fixed; both probes carry ``mean_photons`` at the
    sample.  Monte Carlo entries draw per-point seeds from ``seed`` so the
    sweep is reproducible and thread-count independent.
    """
    grid = [float(t) for t in np.atleast_1d(np.asarray(tau0_grid, dtype=float))]
    if len(grid) == 0:
        raise ValueError("tau0 grid must not be empty")
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise ValueError("tau0 grid must lie in [0, 1]")
    probe = TmsvPairSource(mean_photons)

    def one_point(item) -> SweepPoint:
        index, tau0 = item
        pair = ProcessPair(Delta(tau0), defective)
        bound = classical_bound(pair, mean_photons)
        classical = classical_pc_error(pair, mean_photons, det, classical_mode)
        point_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(index,)).generate_state(1)[0]
        )
        quantum = quantum_pc_error(
            pair, probe, det, quantum_mode, samples=mc_samples, seed=point_seed
        )
        return SweepPoint(
            tau0=tau0,
            bound=bound.value,
            classical_pc=classical.value,
            quantum=quantum.value,
            quantum_se=quantum.uncertainty,
            bound_method=bound.method,
            classical_pc_method=classical.method,
            quantum_method=quantum.method,
        )

    items = list(enumerate(grid))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one_point, items))
    return [one_point(item) for item in items]
