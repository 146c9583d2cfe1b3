"""DP optimizers on heavy-tail class-imbalanced softmax regression."""

from .linear_model import (
    Dataset,
    ClassStats,
    GradFactors,
    logits,
    per_sample_losses,
    mean_loss,
    grad_factors,
    full_gradient,
    hessian_block,
    accuracy,
    group_means,
    softmax_rows,
)
from .synth_data import GeneratorSpec, FrequencyGroup, generate, save, load
from .dp_core import (
    DpConfig,
    PrivateGradient,
    ClipStats,
    AccountantState,
    EpsilonResult,
    ORDER_GRID_V1,
    clip_factors,
    privatize,
    rdp_of_gaussian,
    epsilon,
    calibrate_steps,
)
from .optimizers import (
    OptState,
    VALID_KINDS,
    make_optimizer,
    dp_gd_step,
    dp_gdm_step,
    dp_adam_step,
    dp_adambc_step,
    step,
)
from .diagnostics import (
    CosineReport,
    DiagnosticsReport,
    cosine_matrix,
    class_block_norms,
    estimate_p,
    estimate_p_per_class,
    noise_dominated_fraction,
    second_moment_bias_report,
    stratified_sample_ids,
)
from .harness import (
    OptimizerConfig,
    RunConfig,
    MetricsRow,
    RunResult,
    SweepResult,
    train,
    sweep,
    appendix_c_suite,
    DEFAULT_LR_GRID,
    DEFAULT_GAMMA_GRID,
)

__version__ = "0.1.0"
