"""Error probabilities of photon-counting conformance tests on lossy channels."""

from .decision import (
    BiasOptimization,
    CostSpec,
    DecisionRule,
    ErrorReport,
    conditional_errors,
    cost,
    decide,
    optimize_bias,
)
from .distributions import (
    Delta,
    Empirical,
    Gaussian,
    ProcessPair,
    TransmittanceDistribution,
    Uniform,
    uniform_matching_sigma,
)
from .monte_carlo import (
    CountRecord,
    CountRecords,
    FrequencyReport,
    estimate_error_frequencies,
    sample_counts,
    sample_process,
)
from .photon_statistics import (
    ClassicalPoisson,
    CountDistribution,
    DetectionModel,
    TmsvPairSource,
    gaussian_moments,
    joint_conditional,
    loss_map,
    marginal_compound,
    process_count_distribution,
)
from .reweighting import (
    EmpiricalDataset,
    ReweightReport,
    TauGroup,
    TauHistogram,
    WeightVector,
    bhattacharyya,
    build_histogram,
    optimize_weights,
    resample,
    synthesize_dataset,
)
from .strategies import (
    GaussianPair,
    StrategyResult,
    SweepPoint,
    classical_bound,
    classical_pc_error,
    classical_pc_thresholds,
    quantum_pc_error,
    sweep_error_curves,
)

__version__ = "0.1.0"
