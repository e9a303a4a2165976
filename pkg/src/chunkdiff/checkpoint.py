"""Model checkpoint save/load on top of the shared container format."""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

from .container import read_container, write_container
from .errors import CheckpointError
from .network import DenoiserModel, ModelConfig

KIND = "denoiser-checkpoint"


def save_checkpoint(path: str | Path, model: DenoiserModel, extra_meta: dict | None = None) -> None:
    meta = {"model": asdict(model.cfg)}
    if extra_meta:
        meta["extra"] = extra_meta
    write_container(path, KIND, meta, dict(model.state_dict()))


def load_checkpoint(path: str | Path) -> DenoiserModel:
    kind, meta, tensors = read_container(path)
    if kind != KIND:
        raise CheckpointError(f"{path}: container kind {kind!r} is not a checkpoint")
    model = DenoiserModel(ModelConfig(**meta["model"]))
    missing = set(model.state_dict()) - set(tensors)
    extra = set(tensors) - set(model.state_dict())
    if missing or extra:
        raise CheckpointError(f"{path}: parameter mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
    model.load_state_dict(tensors)
    return model


def checkpoint_meta(path: str | Path) -> dict:
    kind, meta, _ = read_container(path)
    if kind != KIND:
        raise CheckpointError(f"{path}: container kind {kind!r} is not a checkpoint")
    return meta
