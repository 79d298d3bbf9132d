"""Exact posterior covariance for flow matching models.

The package turns a trained (or analytically known) velocity field into
per-sample uncertainty: the posterior covariance of the clean data given a
partially denoised interpolant state, obtained from the velocity Jacobian in
closed form rather than from ensembles or repeated sampling.
"""

from .numerics import (
    NumericsError,
    ProbeSet,
    RngState,
    draw_rademacher,
    exhaustive_sign_probes,
    finite_diff_jvp,
    hutchinson_diagonal,
    hutchinson_trace,
    worker_count,
)
from .oracle import (
    GmmSpec,
    OracleError,
    PosteriorOracle,
    conditional_score,
    gmm_posterior,
    gmm_posterior_batch,
    interpolate,
    marginal_moments,
    marginal_score,
    optimal_velocity,
    optimal_velocity_batch,
    posterior_mean_jacobian,
    sample_pair,
    sample_pairs,
    single_gaussian_posterior,
    single_gaussian_velocity_jacobian,
)
from .models import (
    AnalyticField,
    EvalCounter,
    MlpArch,
    MlpVelocity,
    ModelError,
    ModelField,
    analytic_handle,
    load_model,
    mean_velocity_eval,
    save_model,
    time_features,
)
from .training import (
    TrainConfig,
    TrainReport,
    TrainingError,
    fm_loss,
    one_step_loss,
    train,
    train_ensemble,
)
from .uq import (
    DEFAULT_EPSILON,
    PosteriorEstimate,
    UncertaintyMapSeries,
    UqError,
    cov_closed_form,
    one_step_cov,
    posterior_mean_from_velocity,
    prior_baseline,
    shift_time_grid,
    trajectory_uq,
    tweedie_posterior_mean,
)
from .sampler import (
    SamplerError,
    Trajectory,
    euler_generate,
    one_step_generate,
)
from .baselines import (
    BaselineError,
    BaselineEstimate,
    ensemble_uq,
    mc_dropout_uq,
)
from .metrics import (
    ConsistencyRow,
    MetricsError,
    consistency_protocol,
    corrupt,
    error_correlation,
    hitrate_at_k,
    spearman,
)
from .data import (
    DataError,
    GmmTask,
    IdxTensor,
    ImageTask,
    MnistTask,
    default_gmm_task,
    idx_to_float,
    parse_idx,
    toy_image_dataset,
    write_idx,
)
from .reporting import (
    CostEntry,
    CostLedger,
    ReportError,
    cost_report,
    read_pgm,
    write_csv,
    write_pgm,
    write_uq_map,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_config,
)

__version__ = "0.1.0"
