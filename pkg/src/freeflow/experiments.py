"""Experiment drivers: deviation curves, the mismatch sweep, the synergy
study, Best-of-N noise search, and one-dimensional design sweeps.

Each driver returns plain row dicts ready for CSV emission; plotting and
persistence stay in the callers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .datasets import Dataset2D, Gmm, gmm_logdensity, sample_data
from .errors import ConfigurationError
from .flowmap import FlowMapModel, flowmap_apply
from .metrics import mode_coverage, sliced_wasserstein
from .optim import TAG_EVAL, step_rng
from .teacher import SolverConfig, TeacherModel, VelocityField, solve
from .trainer import DistillConfig, MeanFlowConfig, distill_run, meanflow_run, meanflow_sample

DIV_EPS = 1e-8


@dataclass
class DeviationCurve:
    deltas: np.ndarray
    mean: np.ndarray
    std_err: np.ndarray

    def rows(self):
        return [
            {"delta": d, "mean_rel_deviation": m, "std_err": s}
            for d, m, s in zip(self.deltas, self.mean, self.std_err)
        ]


def deviation_curve(
    student: FlowMapModel,
    u: VelocityField,
    z_set: np.ndarray,
    deltas: Sequence[float] | None = None,
    *,
    solver_steps: int = 128,
    class_ids=None,
    gamma: float = 1.0,
    use_ema: bool = True,
) -> DeviationCurve:
    """Relative gap between the student's jumps and the solved teacher path.

    Per delta: mean over z of |f(z, delta) - phi(z, 1, 1-delta)| over
    (|phi| + 1e-8). The reference path is one fine Heun solve recorded at the
    requested times, so delta = 0 is exactly zero by the boundary identity.
    """
    if deltas is None:
        deltas = np.linspace(0.0, 1.0, 9)
    deltas = np.asarray(sorted(set(float(d) for d in deltas)))
    if deltas[0] != 0.0 or deltas[-1] > 1.0 or np.any(deltas < 0.0):
        raise ConfigurationError("delta grid must start at 0 and stay within [0, 1]")

    # one reference solve on a grid containing every requested time
    times = 1.0 - deltas[::-1]  # increasing in t as delta decreases
    fine = np.linspace(1.0, 0.0, solver_steps + 1)
    schedule = np.unique(np.concatenate([fine, times]))[::-1]
    schedule[0], schedule[-1] = 1.0, 0.0
    cfg = SolverConfig(method="heun", steps=len(schedule) - 1, schedule=tuple(schedule))
    nodes, states = solve(
        u, z_set, 1.0, 0.0, cfg, class_ids=class_ids, gamma=gamma, record=True
    )

    mean, err = [], []
    for d in deltas:
        j = int(np.argmin(np.abs(nodes - (1.0 - d))))
        ref = states[j]
        f = flowmap_apply(student, z_set, d, class_ids, gamma, use_ema=use_ema)
        rel = np.linalg.norm(f - ref, axis=1) / (np.linalg.norm(ref, axis=1) + DIV_EPS)
        mean.append(float(rel.mean()))
        err.append(float(rel.std(ddof=1) / np.sqrt(len(rel))))
    return DeviationCurve(deltas=deltas, mean=np.asarray(mean), std_err=np.asarray(err))


def student_samples(
    student: FlowMapModel, n: int, rng, class_ids=None, gamma: float = 1.0
) -> np.ndarray:
    """One-NFE generation from fresh prior noise."""
    z = rng.standard_normal((n, student.spec.input_dim))
    return flowmap_apply(student, z, 1.0, class_ids, gamma, use_ema=True)


def distill_and_eval(
    teacher: TeacherModel,
    cfg: DistillConfig,
    ref_samples: np.ndarray,
    z_eval: np.ndarray,
    ds: Gmm,
    *,
    class_ids=None,
    n_projections: int = 128,
    snapshot_every: int = 0,
) -> dict:
    """Run one distillation arm and score it against fixed teacher samples.

    When ``snapshot_every`` is set, the EMA student is scored during training
    as well, yielding a progress table (step, sw, coverage).
    """
    progress = []

    def callback(state):
        n = state.step
        if snapshot_every and (n % snapshot_every == 0 or n == cfg.steps):
            out = flowmap_apply(state.student, z_eval, 1.0, class_ids, 1.0, use_ema=True)
            sw = sliced_wasserstein(out, ref_samples, n_projections, np.random.default_rng(0))
            cov, _ = mode_coverage(out, ds)
            progress.append({"step": n, "sw": sw, "coverage": cov})

    state = distill_run(teacher, cfg, callback=callback if snapshot_every else None)
    out = flowmap_apply(state.student, z_eval, 1.0, class_ids, 1.0, use_ema=True)
    sw = sliced_wasserstein(out, ref_samples, n_projections, np.random.default_rng(0))
    cov, mass = mode_coverage(out, ds)
    return {
        "state": state,
        "sw": sw,
        "coverage": cov,
        "min_mass": float(mass.min()),
        "progress": progress,
    }


def synergy_study(
    teacher: TeacherModel,
    base_cfg: DistillConfig,
    seeds: Sequence[int],
    ds: Gmm,
    *,
    n_eval: int = 16384,
    snapshot_every: int = 0,
    solver: SolverConfig | None = None,
    arms: Sequence[str] = ("combined", "prediction", "correction"),
) -> list[dict]:
    """Train every objective arm per seed against shared teacher samples."""
    solver = solver or SolverConfig(method="heun", steps=50)
    rows = []
    for seed in seeds:
        rng = step_rng(seed, 0, TAG_EVAL)
        z_eval = rng.standard_normal((n_eval, teacher.spec.input_dim))
        ref = solve(teacher.velocity(), z_eval, 1.0, 0.0, solver)
        for arm in arms:
            cfg = replace(base_cfg, objective=arm, seed=seed)
            res = distill_and_eval(
                teacher, cfg, ref, z_eval, ds, snapshot_every=snapshot_every
            )
            rows.append(
                {
                    "seed": seed, "objective": arm, "sw": res["sw"],
                    "coverage": res["coverage"], "min_mass": res["min_mass"],
                    "progress": res["progress"], "state": res["state"],
                }
            )
    return rows


def mismatch_sweep(
    teacher: TeacherModel,
    ds: Dataset2D,
    baseline_cfg: MeanFlowConfig,
    freeflow_cfg: DistillConfig,
    seeds: Sequence[int],
    *,
    levels: Sequence[int] = (0, 1, 2, 3),
    n_eval: int = 16384,
    solver: SolverConfig | None = None,
) -> list[dict]:
    """Data-based baseline across augmentation levels vs the data-free row.

    The data-free student never sees the dataset, so it is trained once per
    seed and its metric is constant across levels by construction.
    """
    solver = solver or SolverConfig(method="heun", steps=50)
    rows = []
    for seed in seeds:
        rng = step_rng(seed, 0, TAG_EVAL)
        z_eval = rng.standard_normal((n_eval, teacher.spec.input_dim))
        ref = solve(teacher.velocity(), z_eval, 1.0, 0.0, solver)

        ff = distill_run(teacher, replace(freeflow_cfg, seed=seed))
        ff_out = flowmap_apply(ff.student, z_eval, 1.0, None, 1.0, use_ema=True)
        ff_sw = sliced_wasserstein(ff_out, ref, 128, np.random.default_rng(0))
        for level in levels:
            model, _ = meanflow_run(
                teacher, replace(baseline_cfg, seed=seed, aug_level=level), ds
            )
            out = meanflow_sample(model, z_eval)
            sw = sliced_wasserstein(out, ref, 128, np.random.default_rng(0))
            rows.append(
                {"seed": seed, "level": level, "baseline_sw": sw, "freeflow_sw": ff_sw}
            )
    return rows


def gmm_verifier(ds: Gmm) -> Callable[[np.ndarray], np.ndarray]:
    """Oracle verifier: exact mixture log-density of the final sample."""
    return lambda x: gmm_logdensity(ds, x)


def class_distance_verifier(ds: Gmm, class_id: int) -> Callable[[np.ndarray], np.ndarray]:
    """Oracle verifier: negative distance to the target class mean."""
    mean = ds.means[class_id]
    return lambda x: -np.linalg.norm(x - mean, axis=1)


def best_of_n(
    student: FlowMapModel,
    u: VelocityField,
    verifier: Callable[[np.ndarray], np.ndarray],
    n_list: Sequence[int],
    solver: SolverConfig,
    rng: np.random.Generator,
    *,
    n_groups: int = 512,
    class_ids=None,
    gamma: float = 1.0,
) -> list[dict]:
    """Best-of-N noise search scored by the cheap student, transferred to the
    teacher. N = 1 is plain teacher sampling; candidate sets are nested so
    larger N reuses the same draws plus extras."""
    n_list = sorted(set(int(n) for n in n_list))
    if n_list[0] < 1:
        raise ConfigurationError("N must be >= 1")
    n_max = n_list[-1]
    dim = student.spec.input_dim
    z = rng.standard_normal((n_groups, n_max, dim))
    flat = z.reshape(n_groups * n_max, dim)
    ids_flat = np.repeat(class_ids, n_max) if class_ids is not None else None
    outs = flowmap_apply(student, flat, 1.0, ids_flat, gamma, use_ema=True)
    scores = verifier(outs).reshape(n_groups, n_max)

    solver_nfe = solver.steps * (2 if solver.method == "heun" else 1)
    rows = []
    for n in n_list:
        best = np.argmax(scores[:, :n], axis=1)
        z_best = z[np.arange(n_groups), best]
        transferred = solve(
            u, z_best, 1.0, 0.0, solver, class_ids=class_ids, gamma=gamma
        )
        rows.append(
            {
                "n": n,
                "mean_score": float(np.mean(verifier(transferred))),
                "student_nfes_per_sample": n,
                "teacher_nfes_per_sample": solver_nfe,
                "transferred": transferred,
            }
        )
    return rows


def design_sweep(
    teacher: TeacherModel,
    base_cfg: DistillConfig,
    overrides: Sequence[tuple[str, DistillConfig]],
    ds: Gmm,
    *,
    n_eval: int = 16384,
    solver: SolverConfig | None = None,
) -> list[dict]:
    """Shared machinery for the alpha / r / interval / k sweeps: train each
    configuration at the same seed against shared teacher samples."""
    solver = solver or SolverConfig(method="heun", steps=50)
    rng = step_rng(base_cfg.seed, 0, TAG_EVAL)
    z_eval = rng.standard_normal((n_eval, teacher.spec.input_dim))
    ref = solve(teacher.velocity(), z_eval, 1.0, 0.0, solver)
    rows = []
    for label, cfg in overrides:
        res = distill_and_eval(teacher, cfg, ref, z_eval, ds)
        rows.append(
            {
                "value": label, "sw": res["sw"], "coverage": res["coverage"],
                "min_mass": res["min_mass"],
            }
        )
    return rows
