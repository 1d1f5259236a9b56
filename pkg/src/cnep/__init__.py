"""Gated mixture-of-experts conditional movement primitives (CNEP) with a
single-decoder baseline (CNMP), synthetic benchmarks, and PID refinement.
"""

from .data import (
    Dataset,
    ObservationSet,
    Trajectory,
    gen_intersecting,
    gen_obstacle_pair,
    gen_sines,
    load_dataset,
    sample_batch,
    sample_obs_targets,
    save_dataset,
)
from .errors import CheckpointError, ConfigError, DatasetParseError, TrainingError
from .geometry import ObstacleSpec, collision_check, segment_intersects_box
from .models import (
    CnepModel,
    CnmpModel,
    GaussianPrediction,
    GenerationResult,
    LossBreakdown,
    ModelConfig,
    batch_entropy,
    build_cnep,
    build_parity_cnmp,
    individual_entropy,
    parity_query_widths,
    weighted_rec_loss,
)
from .nn import Mlp, MlpSpec, ParamStore, ParamTensor, gaussian_nll, mlp_forward, softmax, softplus
from .pid import PidConfig, refine
from .bench import BenchResult, export, mode_fidelity, run_scenario
from .training import (
    ComparisonResult,
    TrainConfig,
    TrainReport,
    checkpoint,
    comparison_run,
    convergence_epoch,
    restore,
    train,
    validate,
    wilcoxon_signed_rank,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
