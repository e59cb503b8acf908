import json
from pathlib import Path

import numpy as np
import pytest

from freeflow.checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    load_checkpoint,
    require_spec,
    save_checkpoint,
)
from freeflow.config import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    dump_config,
    load_config,
    save_config,
)
from freeflow.errors import CheckpointError, ConfigurationError
from freeflow.net import forward, init_params
from freeflow.runio import RunDir, read_csv, write_csv
from freeflow.teacher import teacher_spec

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@pytest.fixture
def spec():
    return teacher_spec(2, 3, hidden_dims=(8, 8), embed_dim=4, n_frequencies=2)


@pytest.fixture
def ckpt(spec):
    rng = np.random.default_rng(0)
    params = init_params(spec, rng)
    return Checkpoint(
        spec=spec,
        blocks={"psi": params, "psi_ema": params * 0.5},
        seed=11,
        step=42,
        config_hash="abc123",
    )


def test_checkpoint_roundtrip_bit_exact(tmp_path, spec, ckpt):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded.seed == 11 and loaded.step == 42
    assert loaded.spec == spec
    assert loaded.block("psi").tobytes() == ckpt.block("psi").tobytes()
    # save(load(x)) is byte-identical
    path2 = tmp_path / "t2.ckpt"
    save_checkpoint(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()
    # forward outputs identical through a round trip
    x = np.random.default_rng(1).standard_normal((5, 2))
    a = forward(spec, ckpt.block("psi"), x, {"t": 0.4}, 1)
    b = forward(spec, loaded.block("psi"), x, {"t": 0.4}, 1)
    assert np.array_equal(a, b)


def test_checkpoint_truncation_detected(tmp_path, ckpt):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, ckpt)
    raw = path.read_bytes()
    path.write_bytes(raw[:-7])
    with pytest.raises(CheckpointError, match="checksum|truncated"):
        load_checkpoint(path)


def test_checkpoint_corruption_detected(tmp_path, ckpt):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, ckpt)
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_version_bump_rejected(tmp_path, ckpt):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, ckpt)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (FORMAT_VERSION + 1).to_bytes(4, "little")
    # keep checksum valid so only the version check can fire
    import hashlib

    body = bytes(raw[:-32])
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 100)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_spec_mismatch(tmp_path, spec, ckpt):
    other = teacher_spec(2, 5, hidden_dims=(8, 8), embed_dim=4, n_frequencies=2)
    with pytest.raises(CheckpointError):
        require_spec(ckpt, other)
    require_spec(ckpt, spec)  # no raise


def test_config_roundtrip_identity(tmp_path):
    cfg = RunConfig()
    text = dump_config(cfg)
    cfg2 = config_from_dict(tomllib.loads(text))
    assert cfg2 == cfg
    assert config_hash(cfg2) == config_hash(cfg)
    path = tmp_path / "run.toml"
    save_config(path, cfg)
    assert load_config(path) == cfg


def test_config_unknown_keys_fatal(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[distill]\nstepz = 5\n")
    with pytest.raises(ConfigurationError, match="unknown config key distill.stepz"):
        load_config(path)
    path.write_text("[distil]\nsteps = 5\n")
    with pytest.raises(ConfigurationError, match="unknown config section"):
        load_config(path)


def test_config_overrides():
    cfg = RunConfig()
    cfg2 = apply_overrides(cfg, ["distill.steps=77", "predict.mode=\"continuous\""])
    assert cfg2.distill.steps == 77
    assert cfg2.predict.mode == "continuous"
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["nonsense"])
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["distill.nope=1"])


def test_config_builds_samplers():
    cfg = apply_overrides(RunConfig(), ["predict.mode=\"continuous\""])
    dc = cfg.distill_config(seed=3)
    assert dc.predict.delta_sampler.grid is None
    dc2 = RunConfig().distill_config(seed=3)
    assert dc2.predict.delta_sampler.grid.n_intervals == 8
    assert dc2.seed == 3


def test_write_csv_deterministic(tmp_path):
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": float("nan")}]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(p1, ("a", "b"), rows)
    write_csv(p2, ("a", "b"), rows)
    assert p1.read_bytes() == p2.read_bytes()
    header, data = read_csv(p1)
    assert header == ["a", "b"]
    assert data[0] == ["1", "0.5"]


def test_rundir_manifest(tmp_path):
    cfg = RunConfig()
    run = RunDir(tmp_path / "run1", cfg, seed=5, command="distill")
    manifest = json.loads((tmp_path / "run1" / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["command"] == "distill"
    assert manifest["config_hash"] == config_hash(cfg)
    assert (tmp_path / "run1" / "config.toml").exists()
    run.register_checkpoint("teacher.ckpt")
    manifest = json.loads((tmp_path / "run1" / "manifest.json").read_text())
    assert manifest["checkpoints"] == ["teacher.ckpt"]
    with pytest.raises(ConfigurationError, match="manifest"):
        RunDir(tmp_path / "run1", cfg, seed=5, command="again")
