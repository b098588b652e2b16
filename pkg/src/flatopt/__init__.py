"""flatopt: flatness-seeking optimizers for continual learning, with a
class-incremental benchmark harness and gradient-landscape diagnostics."""

from .clbench import (
    ReplayBuffer,
    RunMetrics,
    Task,
    TaskStream,
    evaluate,
    load_csv_stream,
    make_gaussian_stream,
    run_experiment,
    train_task,
)
from .diagnostics import (
    TraceBuffer,
    correction_ratio,
    kstep_distance,
    qq_export,
    record_step,
)
from .objectives import (
    Batch,
    MlpObjective,
    Objective,
    QuadraticObjective,
    SoftmaxLinearObjective,
    finite_diff_gradient,
    init_params,
    mlp_objective,
    quadratic_objective,
    softmax_linear_objective,
)
from .optim import (
    MODE_CFLAT,
    MODE_LOOKSAM,
    MODE_SAM,
    MODE_SGD,
    MODE_TURBO,
    MODES,
    EmaState,
    GradientBundle,
    OptimizerConfig,
    TurboState,
    cflat_step,
    ema_update,
    flatness_gradient,
    looksam_step,
    make_state,
    orthogonal_component,
    proxy_point,
    sam_gradient,
    sam_perturbation,
    sam_step,
    scheduled_k,
    sgd_step,
    simulate_flatness,
    simulate_sharpness,
    step,
    trigger,
    turbo_step,
)
from .rng import Rng, derive_seed
from .vectors import NORM_FLOOR, as_param_vector, axpy, dot, l2_norm, sq_norm

__version__ = "0.1.0"
