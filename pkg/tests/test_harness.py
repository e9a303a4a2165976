"""Config schema, checkpoints, teacher pretraining, and evaluation helpers."""

import dataclasses
import json
import math

import pytest
import torch

from chunkdiff.checkpoint import checkpoint_meta, load_checkpoint, save_checkpoint
from chunkdiff.config import (
    ExperimentConfig,
    config_from_dict,
    load_config,
    override,
    resolved_dict,
    write_resolved,
)
from chunkdiff.container import read_container, write_container
from chunkdiff.errors import (
    CheckpointError,
    ConfigError,
    TrainingDivergedError,
)
from chunkdiff.evaluate import (
    drift_at,
    eval_long_horizon,
    eval_reward_suite,
    paired_composite,
    sign_test_p,
)
from chunkdiff.network import DenoiserModel, ModelConfig
from chunkdiff.numerics import DTYPE, RngStream
from chunkdiff.pretrain import (
    PretrainConfig,
    data_variance,
    fixed_eval_set,
    heldout_endpoint_mse,
    pretrain_teacher,
)
from chunkdiff.rewards import RewardSpec
from chunkdiff.schedule import default_grid
from chunkdiff.world import BlobDataset, BlobWorld, gen_dataset

TINY_WORLD = BlobWorld(grid_size=4, frames_per_chunk=2, n_chunks=2)
TINY_NET = ModelConfig(
    dim=16, cond_dim=4, tokens_per_chunk=2, width=16, n_blocks=1, n_heads=2, level_features=4
)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    train, held = root / "train.ds", root / "heldout.ds"
    gen_dataset(TINY_WORLD, 32, 0, str(train))
    gen_dataset(TINY_WORLD, 16, 1, str(held))
    return BlobDataset(str(train)), BlobDataset(str(held))


# ---------------------------------------------------------------------------
# config schema


def test_config_defaults_and_kinds():
    cfg = ExperimentConfig()
    assert cfg.kind == "distill"
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="train")
    with pytest.raises(ConfigError):
        ExperimentConfig(preset="no-such-sweep")
    # presets are tied to a stage kind
    with pytest.raises(ConfigError):
        ExperimentConfig(kind="rl", preset="history-sweep")
    ExperimentConfig(kind="rl", preset="policy-sweep")


def test_config_unknown_keys_report_dotted_path():
    with pytest.raises(ConfigError, match="distill.paradgim"):
        config_from_dict({"distill": {"paradgim": "interleaved"}})
    with pytest.raises(ConfigError, match="'bogus'"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="rl.em"):
        config_from_dict({"rl": {"em": 0.4}})


def test_config_type_strictness():
    # bools are not ints and ints are not bools
    with pytest.raises(ConfigError, match="emit_plots"):
        config_from_dict({"emit_plots": 1})
    with pytest.raises(ConfigError, match="seed"):
        config_from_dict({"seed": True})
    with pytest.raises(ConfigError, match="iterations"):
        config_from_dict({"distill": {"iterations": 2.5}})
    with pytest.raises(ConfigError, match="lr"):
        config_from_dict({"rl": {"lr": "fast"}})
    # ints are acceptable where floats are expected
    cfg = config_from_dict({"rl": {"lr": 1}})
    assert cfg.rl.lr == 1.0 and isinstance(cfg.rl.lr, float)


def test_config_section_must_be_object():
    with pytest.raises(ConfigError, match="world"):
        config_from_dict({"world": 3})


def test_load_config_rejects_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(p)


def test_config_file_round_trip(tmp_path):
    cfg = config_from_dict(
        {"kind": "rl", "seed": 7, "rl": {"policy": "em", "em_sigma": 0.8}, "world": {"grid_size": 4}}
    )
    p = tmp_path / "resolved.json"
    write_resolved(cfg, p)
    back = load_config(p)
    assert back == cfg
    assert resolved_dict(back)["rl"]["em_sigma"] == 0.8


def test_override_replaces_top_level_fields():
    cfg = ExperimentConfig()
    assert override(cfg, seed=3).seed == 3
    assert override(cfg, seed=3) != cfg


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    model = DenoiserModel(TINY_NET, RngStream(4, 4))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, {"stage": "unit-test"})
    back = load_checkpoint(path)
    assert back.cfg == model.cfg
    z = RngStream(4, 5).randn(2, 2, 2, 16)
    cond = RngStream(4, 6).randn(2, 4)
    levels = torch.full((2, 2), 0.5, dtype=DTYPE)
    with torch.no_grad():
        assert torch.equal(model.endpoint_full(z, levels, cond), back.endpoint_full(z, levels, cond))
    meta = checkpoint_meta(path)
    assert meta["extra"] == {"stage": "unit-test"}
    assert meta["model"] == dataclasses.asdict(model.cfg)


def test_checkpoint_rejects_foreign_container(tmp_path):
    path = tmp_path / "d.ds"
    gen_dataset(TINY_WORLD, 2, 0, str(path))
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        checkpoint_meta(path)


def test_checkpoint_rejects_parameter_mismatch(tmp_path):
    model = DenoiserModel(TINY_NET, RngStream(4, 4))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    kind, meta, tensors = read_container(path)
    dropped = dict(tensors)
    dropped.pop("head.weight")
    write_container(path, kind, meta, dropped)
    with pytest.raises(CheckpointError, match="head.weight"):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# pretraining


def test_pretrain_config_validation():
    with pytest.raises(ConfigError):
        PretrainConfig(iterations=0)
    with pytest.raises(ConfigError):
        PretrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        PretrainConfig(eval_every=0)


def test_fixed_eval_set_frozen(tiny_data):
    _, held = tiny_data
    cfg = PretrainConfig(eval_samples=9, seed=3)
    x, cond, levels, eps = fixed_eval_set(held, cfg)
    assert x.shape == (9, 2, 2, 16) and cond.shape == (9, 4)
    assert levels.shape == (9, 2) and eps.shape == x.shape
    x2, _, levels2, eps2 = fixed_eval_set(held, cfg)
    assert torch.equal(levels, levels2) and torch.equal(eps, eps2) and torch.equal(x, x2)
    # capped by the dataset size
    big = fixed_eval_set(held, PretrainConfig(eval_samples=10_000, seed=3))
    assert big[0].shape[0] == len(held)


def test_heldout_mse_zero_model_hand_value(tiny_data):
    # a freshly initialized model predicts the zero endpoint everywhere,
    # so its held-out MSE is exactly the mean square of the clean data
    _, held = tiny_data
    model = DenoiserModel(TINY_NET, RngStream(0, 0))
    x, cond, levels, eps = fixed_eval_set(held, PretrainConfig(eval_samples=8, seed=1))
    got = heldout_endpoint_mse(model, x, cond, levels, eps)
    assert got == pytest.approx(float((x**2).mean()), abs=1e-15)
    # batch splitting must not change the answer
    assert heldout_endpoint_mse(model, x, cond, levels, eps, batch=3) == pytest.approx(got, abs=1e-12)


def test_pretrain_deterministic_and_learns(tiny_data):
    train, held = tiny_data
    cfg = PretrainConfig(iterations=60, batch_size=8, lr=2e-3, eval_every=30, seed=5)

    def run():
        model = DenoiserModel(TINY_NET, RngStream(5, 0))
        recs = pretrain_teacher(cfg, model, train, held)
        return model, recs

    m1, r1 = run()
    m2, r2 = run()
    assert r1 == r2
    for a, b in zip(m1.state_dict().values(), m2.state_dict().values()):
        assert torch.equal(a, b)
    assert [r["iteration"] for r in r1] == list(range(1, 61))
    evals = [r["heldout_mse"] for r in r1 if "heldout_mse" in r]
    assert len(evals) == 2  # iterations 30 and 60
    assert r1[-1]["loss"] < r1[0]["loss"]
    assert evals[-1] < evals[0]


def test_pretrain_divergence_guard(tiny_data):
    train, held = tiny_data
    model = DenoiserModel(TINY_NET, RngStream(6, 0))
    cfg = PretrainConfig(iterations=200, batch_size=4, lr=20.0, optimizer="sgd", seed=6)
    with pytest.raises(TrainingDivergedError):
        pretrain_teacher(cfg, model, train, held)


def test_pretrain_plateau_stop(tiny_data):
    # an lr too small to move anything makes every eval stale immediately
    train, held = tiny_data
    model = DenoiserModel(TINY_NET, RngStream(7, 0))
    cfg = PretrainConfig(
        iterations=50, batch_size=4, lr=1e-30, eval_every=1, seed=7,
        plateau_patience=2, plateau_rel_improvement=0.005,
    )
    recs = pretrain_teacher(cfg, model, train, held)
    assert len(recs) == 3  # first eval sets the best; two stale evals stop the run
    assert all("heldout_mse" in r for r in recs)


def test_data_variance_two_point_hand_value():
    a = RngStream(1, 2).randn(3, 4)
    x = torch.stack([a, -a])
    # mean is zero, so the constant-predictor MSE is the mean square of a
    assert data_variance(x) == pytest.approx(float((a**2).mean()), abs=1e-15)
    assert data_variance(torch.stack([a, a])) == 0.0


# ---------------------------------------------------------------------------
# evaluation


def test_sign_test_hand_values():
    assert sign_test_p(0, 10) == 1.0
    assert sign_test_p(10, 10) == pytest.approx(2.0**-10)
    assert sign_test_p(12, 16) == pytest.approx(2517 / 65536)  # < 0.05
    assert sign_test_p(11, 16) == pytest.approx(6885 / 65536)  # > 0.05
    assert sign_test_p(12, 16) < 0.05 < sign_test_p(11, 16)
    with pytest.raises(ValueError):
        sign_test_p(5, 4)


def _spec():
    return RewardSpec(grid_size=4)


def test_paired_composite_identical_runs_tie():
    before = RngStream(2, 3).randn(6, 5)
    out = paired_composite(before, before.clone(), _spec())
    assert out["wins"] == 0 and out["n_effective"] == 0
    assert out["p_value"] == 1.0
    assert out["diffs"] == [0.0] * 6
    assert out["mean_before"] == pytest.approx(out["mean_after"])


def test_paired_composite_uniform_improvement():
    spec = _spec()
    before = RngStream(2, 4).randn(8, 5)
    # bump every condition along a positively weighted dimension
    delta = torch.zeros(5, dtype=DTYPE)
    delta[0] = 1.0
    after = before + delta
    out = paired_composite(before, after, spec)
    assert out["wins"] == 8 and out["n_effective"] == 8
    assert out["p_value"] == pytest.approx(2.0**-8)
    assert out["mean_after"] > out["mean_before"]


def test_eval_long_horizon_zero_model_hand_values():
    # fresh model => all endpoints zero => per-chunk MSE is the ground
    # truth's mean square and every within-chunk reward is exactly zero
    world = TINY_WORLD
    model = DenoiserModel(TINY_NET, RngStream(0, 0))
    conds = world.sample_conditions(RngStream(3, 3), 4)
    res = eval_long_horizon(model, world, conds, 3, default_grid(3), seed=9)
    gt = world.trajectories(conds, 3)
    for t in range(3):
        assert res["per_chunk_mse"][t] == pytest.approx(float((gt[:, t] ** 2).mean()), abs=1e-15)
        for dim in ("dynamic_degree", "motion_smoothness", "range_quality", "clarity"):
            assert res["per_chunk_rewards"][dim][t] == 0.0
    assert drift_at(res, 2) == res["per_chunk_mse"][2]


def _nudged_model(seed=0):
    model = DenoiserModel(TINY_NET, RngStream(seed, 0))
    with torch.no_grad():
        model.head.weight.add_(0.1 * RngStream(seed, 99).randn(*model.head.weight.shape))
    return model


def test_eval_long_horizon_prefix_stable_under_longer_horizon():
    # extending the horizon must not change earlier chunks' metrics
    world = TINY_WORLD
    model = _nudged_model()
    conds = world.sample_conditions(RngStream(4, 4), 3)
    short = eval_long_horizon(model, world, conds, 2, default_grid(3), seed=11)
    long = eval_long_horizon(model, world, conds, 5, default_grid(3), seed=11)
    assert long["per_chunk_mse"][:2] == short["per_chunk_mse"]
    for dim, vals in short["per_chunk_rewards"].items():
        assert long["per_chunk_rewards"][dim][:2] == vals


def test_eval_long_horizon_oracle_differs_from_free_rollout():
    world = TINY_WORLD
    model = _nudged_model(1)
    conds = world.sample_conditions(RngStream(5, 5), 3)
    free = eval_long_horizon(model, world, conds, 4, default_grid(3), seed=13)
    oracle = eval_long_horizon(model, world, conds, 4, default_grid(3), seed=13, oracle=True)
    assert oracle["oracle"] is True
    # chunk 0 has no history, so the two agree there and diverge later
    assert oracle["per_chunk_mse"][0] == free["per_chunk_mse"][0]
    assert oracle["per_chunk_mse"][1:] != free["per_chunk_mse"][1:]


def test_eval_reward_suite_zero_model_alignment_row():
    world = TINY_WORLD
    model = DenoiserModel(TINY_NET, RngStream(0, 0))
    spec = _spec()
    conds = world.sample_conditions(RngStream(6, 6), 3)
    suite = eval_reward_suite(model, world, spec, conds, default_grid(3), seed=17, group=2)
    assert suite.shape == (3, 5)
    ta = spec.dimensions.index("target_alignment")
    for i in range(3):
        gt = world.trajectory(conds[i], world.n_chunks)
        assert float(suite[i, ta]) == pytest.approx(-float((gt**2).mean()), abs=1e-15)
    # deterministic in the seed
    again = eval_reward_suite(model, world, spec, conds, default_grid(3), seed=17, group=2)
    assert torch.equal(suite, again)
