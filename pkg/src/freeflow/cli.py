"""Command-line entry points.

Every subcommand takes a TOML config (defaults apply when omitted), a
mandatory --seed, an output run directory, and repeatable
``--set section.key=value`` overrides. Each run directory receives one
manifest, the resolved config, CSV tables, and checkpoints; figures are
emitted as static SVG. Errors print one machine-parsable line to stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, config_hash, load_config
from .correct import AuxModel
from .datasets import sample_data
from .errors import CheckpointError, ConfigurationError
from .experiments import (
    best_of_n,
    class_distance_verifier,
    deviation_curve,
    design_sweep,
    gmm_verifier,
    mismatch_sweep,
    student_samples,
    synergy_study,
)
from .flowmap import FlowMapModel, flowmap_apply
from .metrics import mmd_rbf, mode_coverage, sliced_wasserstein
from .optim import TAG_EVAL, OptimizerConfig, step_rng
from .runio import RunDir, write_csv
from .svg import line_plot, scatter_plot
from .teacher import TeacherModel, solve, teacher_spec, train_teacher
from .trainer import DistillState, distill_run

from . import config as config_mod


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _teacher_from_checkpoint(path) -> TeacherModel:
    ckpt = load_checkpoint(path)
    if "psi" not in ckpt.blocks or "theta" in ckpt.blocks:
        raise CheckpointError(f"{path} is not a teacher checkpoint")
    return TeacherModel(spec=ckpt.spec, params=ckpt.block("psi"), ema=ckpt.block("psi_ema"))


def _student_from_checkpoint(path) -> tuple[FlowMapModel, AuxModel | None]:
    ckpt = load_checkpoint(path)
    if "theta" not in ckpt.blocks:
        raise CheckpointError(f"{path} is not a student checkpoint")
    student = FlowMapModel(
        spec=ckpt.spec, params=ckpt.block("theta"), ema=ckpt.block("theta_ema")
    )
    aux = None
    if "psi" in ckpt.blocks and ckpt.aux_spec is not None:
        aux = AuxModel(spec=ckpt.aux_spec, params=ckpt.block("psi"))
    return student, aux


def _save_teacher(run: RunDir, teacher: TeacherModel, seed: int, step: int, cfg) -> None:
    save_checkpoint(
        run.register_checkpoint("teacher.ckpt"),
        Checkpoint(
            spec=teacher.spec,
            blocks={"psi": teacher.params, "psi_ema": teacher.ema},
            seed=seed, step=step, config_hash=config_hash(cfg),
        ),
    )


def _save_student(run: RunDir, state: DistillState, seed: int, cfg) -> None:
    blocks = {"theta": state.student.params, "theta_ema": state.student.ema}
    aux_spec = None
    if state.aux is not None:
        blocks["psi"] = state.aux.params
        aux_spec = state.aux.spec
    save_checkpoint(
        run.register_checkpoint("student.ckpt"),
        Checkpoint(
            spec=state.student.spec, blocks=blocks, seed=seed,
            step=state.step, config_hash=config_hash(cfg), aux_spec=aux_spec,
        ),
    )


def cmd_train_teacher(args) -> int:
    cfg = _load_run_config(args)
    run = RunDir(args.out, cfg, args.seed, "train-teacher")
    ds = cfg.dataset.build()
    spec = teacher_spec(
        ds.dim, ds.class_count,
        hidden_dims=tuple(cfg.teacher.hidden_dims),
        embed_dim=cfg.teacher.embed_dim,
        n_frequencies=cfg.teacher.n_frequencies,
    )
    teacher, log = train_teacher(
        ds, spec, cfg.optimizer.build(cfg.teacher.lr),
        steps=cfg.teacher.steps, batch_size=cfg.teacher.batch_size,
        class_dropout=cfg.teacher.class_dropout, ema_decay=cfg.teacher.ema_decay,
        seed=args.seed, run_dir=run.path,
    )
    run.csv("teacher_loss.csv", log.columns, log.rows)
    _save_teacher(run, teacher, args.seed, cfg.teacher.steps, cfg)
    line_plot(
        run.path / "teacher_loss.svg",
        [("loss", log.column("step"), log.column("loss"))],
        title="teacher flow-matching loss", xlabel="step", ylabel="loss", log_y=True,
    )
    return 0


def cmd_distill(args) -> int:
    cfg = _load_run_config(args)
    run = RunDir(args.out, cfg, args.seed, "distill")
    teacher = _teacher_from_checkpoint(args.teacher)
    dcfg = cfg.distill_config(args.seed)
    state = distill_run(teacher, dcfg)
    run.csv("metrics.csv", state.metrics.columns, state.metrics.rows)
    if state.ikl_log.rows:
        run.csv("ikl.csv", state.ikl_log.columns, state.ikl_log.rows)
    _save_student(run, state, args.seed, cfg)
    return 0


def cmd_sample(args) -> int:
    cfg = _load_run_config(args)
    run = RunDir(args.out, cfg, args.seed, "sample")
    rng = step_rng(args.seed, 0, TAG_EVAL)
    ckpt = load_checkpoint(args.checkpoint)
    class_ids = None
    if args.class_id is not None:
        class_ids = np.full(args.n, args.class_id)
    if "theta" in ckpt.blocks:
        student, _ = _student_from_checkpoint(args.checkpoint)
        z = rng.standard_normal((args.n, student.spec.input_dim))
        out = flowmap_apply(student, z, 1.0, class_ids, args.gamma, use_ema=True)
    else:
        teacher = _teacher_from_checkpoint(args.checkpoint)
        z = rng.standard_normal((args.n, teacher.spec.input_dim))
        out = solve(
            teacher.velocity(), z, 1.0, 0.0, cfg.solver.build(),
            class_ids=class_ids, gamma=args.gamma,
        )
    labels = class_ids if class_ids is not None else np.full(args.n, -1)
    run.csv(
        "samples.csv", ("x", "y", "class"),
        [(out[i, 0], out[i, 1], int(labels[i])) for i in range(args.n)],
    )
    scatter_plot(run.path / "samples.svg", [("samples", out)], title="samples")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    run = RunDir(args.out, cfg, args.seed, "eval")
    teacher = _teacher_from_checkpoint(args.teacher)
    student, _ = _student_from_checkpoint(args.student)
    ds = cfg.dataset.build()
    n = cfg.eval.n_samples
    rng = step_rng(args.seed, 0, TAG_EVAL)
    z = rng.standard_normal((n, teacher.spec.input_dim))
    ids = rng.integers(0, ds.class_count, n) if cfg.distill.conditional else None
    ref = solve(teacher.velocity(), z, 1.0, 0.0, cfg.solver.build(), class_ids=ids)
    out = flowmap_apply(student, z, 1.0, ids, args.gamma, use_ema=True)
    exact = sample_data(ds, None, n, rng)
    sw_rng = np.random.default_rng(0)
    rows = [{
        "sw_student_teacher": sliced_wasserstein(out, ref, cfg.eval.n_projections, sw_rng),
        "sw_student_exact": sliced_wasserstein(out, exact, cfg.eval.n_projections, sw_rng),
        "sw_teacher_exact": sliced_wasserstein(ref, exact, cfg.eval.n_projections, sw_rng),
        "mmd_student_teacher": mmd_rbf(out[:4096], ref[:4096]),
        "coverage_student": mode_coverage(out, ds)[0],
        "coverage_teacher": mode_coverage(ref, ds)[0],
    }]
    run.csv("metrics.csv", tuple(rows[0]), rows)
    scatter_plot(
        run.path / "overlay.svg",
        [("student 1-NFE", out[:2000]), ("teacher", ref[:2000])],
        title="student vs teacher samples",
    )
    return 0


def cmd_deviation(args) -> int:
    cfg = _load_run_config(args)
    run = RunDir(args.out, cfg, args.seed, "deviation")
    teacher = _teacher_from_checkpoint(args.teacher)
    student, _ = _student_from_checkpoint(args.student)
    rng = step_rng(args.seed, 0, TAG_EVAL)
    z = rng.standard_normal((args.n_paths, teacher.spec.input_dim))
    curve = deviation_curve(student, teacher.velocity(), z, np.linspace(0, 1, 9))
    rows = curve.rows()
    run.csv("deviation.csv", tuple(rows[0]), rows)
    line_plot(
        run.path / "deviation.svg",
        [("mean relative deviation", curve.deltas, curve.mean)],
        title="trajectory deviation vs jump size", xlabel="delta", ylabel="relative deviation",
    )
    return 0


def cmd_mismatch(args) -> int:
    cfg = _load_run_config(args)
    run = RunDir(args.out, cfg, args.seed, "mismatch")
    teacher = _teacher_from_checkpoint(args.teacher)
    ds = cfg.dataset.build()
    rows = mismatch_sweep(
        teacher, ds, cfg.meanflow_config(args.seed), cfg.distill_config(args.seed),
        seeds=[args.seed], n_eval=cfg.eval.n_samples,
        solver=cfg.solver.build(),
    )
    run.csv("mismatch.csv", ("seed", "level", "baseline_sw", "freeflow_sw"), rows)
    levels = [r["level"] for r in rows]
    line_plot(
        run.path / "mismatch.svg",
        [
            ("data-based baseline", levels, [r["baseline_sw"] for r in rows]),
            ("data-free", levels, [r["freeflow_sw"] for r in rows]),
        ],
        title="teacher-data mismatch", xlabel="augmentation level", ylabel="SW to teacher",
    )
    return 0


def cmd_bon(args) -> int:
    cfg = _load_run_config(args)
    run = RunDir(args.out, cfg, args.seed, "bon")
    teacher = _teacher_from_checkpoint(args.teacher)
    student, _ = _student_from_checkpoint(args.student)
    ds = cfg.dataset.build()
    n_list = [int(v) for v in args.n.split(",")]
    verifier = (
        class_distance_verifier(ds, args.class_id)
        if args.class_id is not None
        else gmm_verifier(ds)
    )
    rng = step_rng(args.seed, 0, TAG_EVAL)
    rows = best_of_n(
        student, teacher.velocity(), verifier, n_list, cfg.solver.build(), rng,
        n_groups=args.groups,
    )
    cols = ("n", "mean_score", "student_nfes_per_sample", "teacher_nfes_per_sample")
    run.csv("bon.csv", cols, [{k: r[k] for k in cols} for r in rows])
    line_plot(
        run.path / "bon.svg",
        [("mean verifier score", [r["n"] for r in rows], [r["mean_score"] for r in rows])],
        title="best-of-N noise search", xlabel="N", ylabel="oracle score",
    )
    return 0


def _run_sweep(args, name: str, labelled_cfgs, ds, teacher, cfg) -> int:
    run = RunDir(args.out, cfg, args.seed, name)
    rows = design_sweep(
        teacher, cfg.distill_config(args.seed), labelled_cfgs, ds,
        n_eval=cfg.eval.n_samples, solver=cfg.solver.build(),
    )
    run.csv("sweep.csv", ("value", "sw", "coverage", "min_mass"), rows)
    return 0


def cmd_sweep_alpha(args) -> int:
    cfg = _load_run_config(args)
    teacher = _teacher_from_checkpoint(args.teacher)
    ds = cfg.dataset.build()
    values = [float(v) for v in args.values.split(",")]
    base = cfg.distill_config(args.seed)
    cfgs = [
        (v, replace(base, balance=replace(base.balance, alpha_ref=v))) for v in values
    ]
    return _run_sweep(args, "sweep-alpha", cfgs, ds, teacher, cfg)


def cmd_sweep_r(args) -> int:
    cfg = _load_run_config(args)
    teacher = _teacher_from_checkpoint(args.teacher)
    ds = cfg.dataset.build()
    values = [float(v) for v in args.values.split(",")]
    base = cfg.distill_config(args.seed)
    cfgs = [
        (v, replace(base, r_sampler=replace(base.r_sampler, mean=v))) for v in values
    ]
    return _run_sweep(args, "sweep-r", cfgs, ds, teacher, cfg)


def cmd_sweep_interval(args) -> int:
    cfg = _load_run_config(args)
    teacher = _teacher_from_checkpoint(args.teacher)
    ds = cfg.dataset.build()
    values = [float(v) for v in args.values.split(",")]
    base = cfg.distill_config(args.seed)
    cfgs = [(v, replace(base, corr_interval=(0.0, v))) for v in values]
    return _run_sweep(args, "sweep-interval", cfgs, ds, teacher, cfg)


def cmd_sweep_k(args) -> int:
    cfg = _load_run_config(args)
    teacher = _teacher_from_checkpoint(args.teacher)
    ds = cfg.dataset.build()
    values = [float(v) for v in args.values.split(",")]
    base = cfg.distill_config(args.seed)
    cfgs = [
        (v, replace(base, predict=replace(base.predict, weight_power=v))) for v in values
    ]
    return _run_sweep(args, "sweep-k", cfgs, ds, teacher, cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freeflow",
        description="Data-free flow-map distillation lab on 2D synthetic data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, teacher=False, student=False):
        p.add_argument("--config", type=Path, default=None, help="TOML run config")
        p.add_argument("--seed", type=int, required=True, help="run seed (mandatory)")
        p.add_argument("--out", type=Path, required=True, help="output run directory")
        p.add_argument(
            "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override a config key",
        )
        if teacher:
            p.add_argument("--teacher", type=Path, required=True, help="teacher checkpoint")
        if student:
            p.add_argument("--student", type=Path, required=True, help="student checkpoint")

    p = sub.add_parser("train-teacher", help="train the flow-matching teacher")
    common(p)
    p.set_defaults(fn=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill the teacher into a one-step flow map")
    common(p, teacher=True)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("sample", help="draw samples from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--class-id", type=int, default=None)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="score a student against its teacher")
    common(p, teacher=True, student=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("deviation", help="trajectory-deviation curve")
    common(p, teacher=True, student=True)
    p.add_argument("--n-paths", type=int, default=1024)
    p.set_defaults(fn=cmd_deviation)

    p = sub.add_parser("mismatch", help="teacher-data mismatch study")
    common(p, teacher=True)
    p.set_defaults(fn=cmd_mismatch)

    p = sub.add_parser("bon", help="best-of-N noise search with an oracle verifier")
    common(p, teacher=True, student=True)
    p.add_argument("--n", type=str, default="1,4,16,64", help="comma-separated N list")
    p.add_argument("--groups", type=int, default=512)
    p.add_argument("--class-id", type=int, default=None)
    p.set_defaults(fn=cmd_bon)

    p = sub.add_parser("sweep-alpha", help="gradient-balance weight sweep")
    common(p, teacher=True)
    p.add_argument("--values", type=str, default="0.15,0.3,0.6,1.2")
    p.set_defaults(fn=cmd_sweep_alpha)

    p = sub.add_parser("sweep-r", help="correction noise-level sweep")
    common(p, teacher=True)
    p.add_argument("--values", type=str, default="-0.4,0.0,0.4,0.8,1.2")
    p.set_defaults(fn=cmd_sweep_r)

    p = sub.add_parser("sweep-interval", help="correction guidance-interval sweep")
    common(p, teacher=True)
    p.add_argument("--values", type=str, default="0.5,0.6,0.7,0.8,0.9,1.0")
    p.set_defaults(fn=cmd_sweep_interval)

    p = sub.add_parser("sweep-k", help="prediction gradient-weighting sweep")
    common(p, teacher=True)
    p.add_argument("--values", type=str, default="0.0,0.5,1.0")
    p.set_defaults(fn=cmd_sweep_k)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, CheckpointError, FileNotFoundError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
