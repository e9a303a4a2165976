"""Chunked autoregressive diffusion: distillation and group-relative policy optimization.

Small, CPU-sized research library. The pieces:

    numerics    float64 policy, seeded RNG streams, finite-difference helpers
    schedule    noise schedules and decreasing timestep grids
    kernels     consistency / stochastic-drift transition kernels and their scores
    layout      interleaved clean|noisy token layouts and attention masks
    network     the toy transformer denoiser with a per-chunk K/V cache
    rollout     chunk-by-chunk autoregressive sampling
    packing     single-pass interleaved packing and chunk-weighting schemes
    distill     training-time-test distillation (five history paradigms)
    rewards     blob-world reward dimensions
    rl          group-relative policy optimization on top of rollouts
    world       synthetic moving-blob dataset
    pretrain    teacher denoiser pretraining
    evaluate    long-horizon drift and reward evaluation
    config      strict JSON experiment configs
    experiment  run directories, stages, sweep presets
    cli         the `chunkdiff` command
"""

from .errors import (
    CheckpointError,
    ChunkdiffError,
    ConfigError,
    DependencyError,
    DiracKernelError,
    DomainError,
    LayoutError,
    LevelError,
    OracleError,
    RewardError,
    ShapeError,
    SingularDriftError,
    TrainingDivergedError,
    WeightingError,
)
from .numerics import DTYPE, RngStream, finite_diff_grad, rel_error
from .schedule import NoiseSchedule, TimestepGrid, default_grid
from .network import DenoiserModel, ModelConfig, clone_model
from .rollout import HistoryCache, RolloutRecord, autoregressive_rollout
from .packing import (
    DEFAULT_WEIGHTING,
    WEIGHTING_PRESETS,
    WeightingFunction,
    build_interleaved,
    chunk_weights,
    parse_weighting,
)
from .distill import DistillConfig, dmd_loss, train_distill
from .rewards import RewardSpec, evaluate_rewards
from .rl import RlConfig, cmgrpo_loss, emgrpo_loss, train_rl
from .world import BlobDataset, BlobWorld, gen_dataset
from .pretrain import PretrainConfig, pretrain_teacher
from .evaluate import eval_long_horizon, eval_reward_suite, paired_composite
from .config import ExperimentConfig, load_config
from .experiment import run_experiment

__version__ = "0.1.0"

__all__ = [
    "BlobDataset",
    "BlobWorld",
    "CheckpointError",
    "ChunkdiffError",
    "ConfigError",
    "DEFAULT_WEIGHTING",
    "DTYPE",
    "DenoiserModel",
    "DependencyError",
    "DiracKernelError",
    "DistillConfig",
    "DomainError",
    "ExperimentConfig",
    "HistoryCache",
    "LayoutError",
    "LevelError",
    "ModelConfig",
    "NoiseSchedule",
    "OracleError",
    "PretrainConfig",
    "RewardError",
    "RewardSpec",
    "RlConfig",
    "RngStream",
    "RolloutRecord",
    "ShapeError",
    "SingularDriftError",
    "TimestepGrid",
    "TrainingDivergedError",
    "WEIGHTING_PRESETS",
    "WeightingError",
    "WeightingFunction",
    "autoregressive_rollout",
    "build_interleaved",
    "chunk_weights",
    "clone_model",
    "cmgrpo_loss",
    "default_grid",
    "dmd_loss",
    "emgrpo_loss",
    "eval_long_horizon",
    "eval_reward_suite",
    "evaluate_rewards",
    "finite_diff_grad",
    "gen_dataset",
    "load_config",
    "paired_composite",
    "parse_weighting",
    "pretrain_teacher",
    "rel_error",
    "run_experiment",
    "train_distill",
    "train_rl",
    "__version__",
]
