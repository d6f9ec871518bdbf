"""Online AC(lambda) with Metatrace meta-gradient step-size tuning."""

from .ac import AcLearner, EpisodeRecord, accumulate_trace, apply_update, run_episode, td_error
from .engine import run_episode_fast
from .env import McState, MountainCar, StepOutcome, mc_reset, mc_step
from .errors import DivergenceError
from .features import (
    DriftingEncoder,
    DriftState,
    RawStateEncoder,
    SparseFeatures,
    TileEncoder,
    drift_encode,
    drift_step,
    tile_encode,
)
from .harness import ExperimentConfig, LearningCurve, aggregate, beta_groups, run_experiment, sweep
from .meta import (
    FixedStepSize,
    MixedMetatrace,
    ScalarMetatrace,
    VectorMetatrace,
    episode_reset,
    fixed_step,
    make_tuner,
    mixed_step,
    scalar_step,
    vector_step,
)
from .model import GradientBundle, LinearActorCritic, MLPActorCritic, load_params, save_params

__version__ = "0.1.0"
