"""Gradient-free, sampling-based training of spike response model networks
for multivariate time-series forecasting."""

from .config import AblationConfig, DatasetConfig, ModelArch, RunConfig, SswimConfig
from .datasets import ForecastDataset, load_csv, make_windows, rse, synth_dataset
from .errors import (
    ConfigError,
    DegenerateDistributionError,
    DegenerateNeuronError,
    EigensolverError,
    EmptyGridError,
    PipelineError,
    SilentNetworkError,
    SswimError,
    TrivialPairError,
)
from .hidden import (
    NormalizerResult,
    TemporalAssignment,
    VoltageStats,
    build_hidden_layer,
    normalize_fl,
    normalize_ms,
    temporal_assignment,
    voltage_stats,
    weight_dist,
    weight_dot,
    weight_random,
)
from .kernels import (
    KernelFamily,
    KernelSpec,
    PlacedKernel,
    Rectification,
    discretize_placed_kernel,
    evaluate_kernel,
    kernel_peak_offset,
    pspk,
    rfk,
)
from .network import (
    GridSpec,
    LayerParams,
    SnnModel,
    forward,
    load_model,
    output_voltages,
    psp_contributions,
    save_model,
    simulate_hidden_layer,
)
from .output import (
    DelayEstimate,
    GramAccumulator,
    SupportCandidates,
    accumulate_normal_equations,
    condition_bound_diagnostic,
    estimate_delays,
    lambda_grid,
    residual_for_candidate,
    select_supports,
    solve_with_lambda_search,
    support_candidates,
)
from .sampling import (
    EmbeddingSpec,
    PairProbabilities,
    Pseudometric,
    VanRossumLift,
    embed,
    pair_probabilities,
    pseudometric,
    sample_pair,
    select_metrics,
    shannon_entropy,
)
from .signals import DiscreteSignal, SpikeTrainSet
from .train import (
    RunReport,
    evaluate_split,
    predict_batch,
    run_ablation,
    train_sswim,
)

__version__ = "0.1.0"
