"""End-to-end CLI runs at toy scale; each command writes a manifest, CSVs,
and checkpoints into its own run directory."""

import json
from pathlib import Path

import numpy as np
import pytest

from freeflow.cli import main
from freeflow.runio import read_csv

TINY = [
    "--set", "teacher.steps=60",
    "--set", "teacher.hidden_dims=[16, 16]",
    "--set", "teacher.embed_dim=8",
    "--set", "teacher.n_frequencies=4",
    "--set", "teacher.batch_size=32",
    "--set", "solver.steps=8",
    "--set", "distill.steps=40",
    "--set", "distill.batch_size=16",
    "--set", "predict.warmup_steps=10",
    "--set", "balance.t_delay=5",
    "--set", "balance.t_warmup=5",
    "--set", "eval.n_samples=512",
]


@pytest.fixture(scope="module")
def teacher_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "teacher"
    rc = main(["train-teacher", "--seed", "3", "--out", str(out)] + TINY)
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def student_run(teacher_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "student"
    rc = main(
        ["distill", "--seed", "4", "--out", str(out),
         "--teacher", str(teacher_run / "teacher.ckpt")] + TINY
    )
    assert rc == 0
    return out


def test_train_teacher_outputs(teacher_run):
    assert (teacher_run / "manifest.json").exists()
    assert (teacher_run / "teacher.ckpt").exists()
    header, rows = read_csv(teacher_run / "teacher_loss.csv")
    assert header == ["step", "loss"]
    assert len(rows) >= 10
    assert (teacher_run / "teacher_loss.svg").exists()


def test_distill_outputs(student_run):
    assert (student_run / "student.ckpt").exists()
    header, rows = read_csv(student_run / "metrics.csv")
    assert "lambda" in header and "pred_mean_norm" in header
    assert len(rows) == 40
    manifest = json.loads((student_run / "manifest.json").read_text())
    assert manifest["checkpoints"] == ["student.ckpt"]


def test_distill_deterministic_metrics(teacher_run, tmp_path):
    args = ["distill", "--seed", "9", "--teacher", str(teacher_run / "teacher.ckpt")] + TINY
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b
    ca = (tmp_path / "a" / "student.ckpt").read_bytes()
    cb = (tmp_path / "b" / "student.ckpt").read_bytes()
    assert ca == cb


def test_sample_from_both_checkpoints(teacher_run, student_run, tmp_path):
    for name, ckpt in [("t", "teacher.ckpt"), ("s", "student.ckpt")]:
        run_dir = teacher_run if name == "t" else student_run
        out = tmp_path / name
        rc = main(
            ["sample", "--seed", "5", "--out", str(out),
             "--checkpoint", str(run_dir / ckpt), "--n", "64"] + TINY
        )
        assert rc == 0
        header, rows = read_csv(out / "samples.csv")
        assert header == ["x", "y", "class"]
        assert len(rows) == 64
        assert (out / "samples.svg").exists()


def test_eval_and_deviation(teacher_run, student_run, tmp_path):
    rc = main(
        ["eval", "--seed", "6", "--out", str(tmp_path / "ev"),
         "--teacher", str(teacher_run / "teacher.ckpt"),
         "--student", str(student_run / "student.ckpt")] + TINY
    )
    assert rc == 0
    header, rows = read_csv(tmp_path / "ev" / "metrics.csv")
    assert "sw_student_teacher" in header
    assert len(rows) == 1

    rc = main(
        ["deviation", "--seed", "6", "--out", str(tmp_path / "dev"),
         "--teacher", str(teacher_run / "teacher.ckpt"),
         "--student", str(student_run / "student.ckpt"),
         "--n-paths", "64"] + TINY
    )
    assert rc == 0
    header, rows = read_csv(tmp_path / "dev" / "deviation.csv")
    assert header[0] == "delta"
    assert len(rows) == 9
    assert float(rows[0][1]) == 0.0  # deviation at delta = 0 is exactly zero


def test_bon_rows(teacher_run, student_run, tmp_path):
    rc = main(
        ["bon", "--seed", "7", "--out", str(tmp_path / "bon"),
         "--teacher", str(teacher_run / "teacher.ckpt"),
         "--student", str(student_run / "student.ckpt"),
         "--n", "1,4,16", "--groups", "32"] + TINY
    )
    assert rc == 0
    header, rows = read_csv(tmp_path / "bon" / "bon.csv")
    assert [r[0] for r in rows] == ["1", "4", "16"]


def test_sweep_k_table_shape(teacher_run, tmp_path):
    rc = main(
        ["sweep-k", "--seed", "8", "--out", str(tmp_path / "sk"),
         "--teacher", str(teacher_run / "teacher.ckpt"),
         "--values", "0.0,0.5,1.0"] + TINY
    )
    assert rc == 0
    header, rows = read_csv(tmp_path / "sk" / "sweep.csv")
    assert len(rows) == 3
    assert [r[0] for r in rows] == ["0.0", "0.5", "1.0"]


def test_cli_error_is_one_line(tmp_path, capsys):
    rc = main(["distill", "--seed", "1", "--out", str(tmp_path / "x"),
               "--teacher", str(tmp_path / "missing.ckpt")])
    assert rc != 0
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1
    assert err.startswith("error: ")


def test_cli_unknown_config_key_fatal(teacher_run, tmp_path, capsys):
    rc = main(
        ["distill", "--seed", "1", "--out", str(tmp_path / "y"),
         "--teacher", str(teacher_run / "teacher.ckpt"),
         "--set", "distill.stepz=5"]
    )
    assert rc != 0
    assert "unknown config key" in capsys.readouterr().err
