"""JSON experiment configuration with a strict, fully-defaulted schema.

Configs are nested dataclasses; loading walks the JSON against the schema
and rejects unknown keys with their full dotted path, so a typo in an
ablation config fails loudly instead of silently running defaults. The
resolved config (every default materialized) is written into each run
directory, which is what makes reruns exactly reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ConfigError

EXPERIMENT_KINDS = ("gen-data", "pretrain-teacher", "distill", "rl", "eval")
PRESETS = {
    "history-sweep": "distill",
    "weighting-sweep": "distill",
    "policy-sweep": "rl",
}


@dataclass(frozen=True)
class WorldSection:
    grid_size: int = 8
    frames_per_chunk: int = 3
    n_chunks: int = 4


@dataclass(frozen=True)
class NetSection:
    width: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    level_features: int = 8


@dataclass(frozen=True)
class DataSection:
    train_count: int = 4096
    heldout_count: int = 512
    seed: int = 0


@dataclass(frozen=True)
class PretrainSection:
    iterations: int = 3000
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    eval_every: int = 200
    eval_samples: int = 256
    plateau_patience: int = 0
    plateau_rel_improvement: float = 0.005


@dataclass(frozen=True)
class DistillSection:
    paradigm: str = "interleaved"
    iterations: int = 2000
    batch_size: int = 4
    ttur_ratio: int = 2
    lr_student: float = 1e-2
    lr_critic: float = 6e-2
    grid_levels: int = 4
    weighting: str = "shift(-1)"
    optimizer: str = "sgd"
    skip_final_endpoint_call: bool = False


@dataclass(frozen=True)
class RlSection:
    policy: str = "consistency"
    group_size: int = 8
    conditions_per_step: int = 1
    iterations: int = 200
    lr: float = 1e-3
    grid_levels: int = 4
    weighting: str = "shift(-1)"
    em_sigma: float = 0.4
    em_beta: float = 0.0
    a_max: float = 5.0
    eps: float = 1e-4
    use_interleaved_history: bool = True
    optimizer: str = "sgd"


@dataclass(frozen=True)
class RewardsSection:
    target_alignment: float = 2.0
    dynamic_degree: float = 0.35
    motion_smoothness: float = 0.75
    range_quality: float = 1.0
    clarity: float = 1.0


@dataclass(frozen=True)
class EvalSection:
    t_eval: int = 8
    n_conditions: int = 16
    oracle: bool = False
    group: int = 4


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "distill"
    seed: int = 0
    out_dir: str = ""
    preset: str = ""
    dataset_path: str = ""
    heldout_path: str = ""
    teacher_checkpoint: str = ""
    student_checkpoint: str = ""
    emit_plots: bool = False
    world: WorldSection = field(default_factory=WorldSection)
    net: NetSection = field(default_factory=NetSection)
    data: DataSection = field(default_factory=DataSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    distill: DistillSection = field(default_factory=DistillSection)
    rl: RlSection = field(default_factory=RlSection)
    rewards: RewardsSection = field(default_factory=RewardsSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"kind must be one of {EXPERIMENT_KINDS}, got {self.kind!r}")
        if self.preset and self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {tuple(PRESETS)}, got {self.preset!r}")
        if self.preset and PRESETS[self.preset] != self.kind:
            raise ConfigError(
                f"preset {self.preset!r} belongs to kind {PRESETS[self.preset]!r}, not {self.kind!r}"
            )


def _build(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: Dict[str, Any] = {}
    for key, value in raw.items():
        dotted = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"unknown config key {dotted!r}")
        ftype = fields[key].type
        if dataclasses.is_dataclass(_resolve(ftype)):
            kwargs[key] = _build(_resolve(ftype), value, dotted)
        else:
            kwargs[key] = _coerce(_resolve(ftype), value, dotted)
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad config section {path or '<root>'}: {e}")


_SECTION_TYPES = {
    "world": WorldSection,
    "net": NetSection,
    "data": DataSection,
    "pretrain": PretrainSection,
    "distill": DistillSection,
    "rl": RlSection,
    "rewards": RewardsSection,
    "eval": EvalSection,
}


def _resolve(ftype):
    # dataclass field types are strings under `from __future__ import annotations`
    if isinstance(ftype, str):
        return {
            "int": int, "float": float, "str": str, "bool": bool,
            **{c.__name__: c for c in _SECTION_TYPES.values()},
        }.get(ftype, str)
    return ftype


def _coerce(ftype, value, dotted: str):
    if ftype is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{dotted} must be true/false, got {value!r}")
        return value
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{dotted} must be an integer, got {value!r}")
        return value
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{dotted} must be a number, got {value!r}")
        return float(value)
    if ftype is str:
        if not isinstance(value, str):
            raise ConfigError(f"{dotted} must be a string, got {value!r}")
        return value
    raise ConfigError(f"{dotted}: unsupported config field type {ftype}")


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, raw, "")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}")
    return config_from_dict(raw)


def resolved_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def write_resolved(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(resolved_dict(cfg), indent=2, sort_keys=True) + "\n")


def override(cfg: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return dataclasses.replace(cfg, **kwargs)
