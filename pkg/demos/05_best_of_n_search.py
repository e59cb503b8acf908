"""Inference-time scaling: Best-of-N noise search through the cheap student.

Scoring teacher outputs directly costs a full ODE solve per candidate. The
distilled student is a fast consistent proxy for the same noise-to-sample
map, so the search runs at one network call per candidate and only the
winning noise is handed to the teacher. The verifier is the exact mixture
log-density (an oracle available on synthetic data).

Outputs land in demos/out/05/.
"""

from pathlib import Path

import numpy as np

from freeflow.config import RunConfig
from freeflow.datasets import ring_gmm
from freeflow.experiments import best_of_n, gmm_verifier
from freeflow.optim import OptimizerConfig
from freeflow.svg import line_plot
from freeflow.teacher import SolverConfig, teacher_spec, train_teacher
from freeflow.trainer import distill_run

OUT = Path(__file__).parent / "out" / "05"
OUT.mkdir(parents=True, exist_ok=True)

ds = ring_gmm()
print("training teacher (4000 steps) ...")
teacher, _ = train_teacher(
    ds, teacher_spec(ds.dim, ds.class_count), OptimizerConfig(lr=1e-3),
    steps=4000, batch_size=256, seed=0,
)
print("distilling (6000 steps) ...")
state = distill_run(teacher, RunConfig().distill_config(seed=1, steps=6000))

rows = best_of_n(
    state.student, teacher.velocity(), gmm_verifier(ds),
    n_list=[1, 4, 16, 64],
    solver=SolverConfig(method="heun", steps=50),
    rng=np.random.default_rng(7),
    n_groups=512,
)
print(f"{'N':>4} {'mean oracle score':>18} {'student NFEs':>13} {'teacher NFEs':>13}")
for r in rows:
    print(f"{r['n']:>4} {r['mean_score']:>18.4f} {r['student_nfes_per_sample']:>13} "
          f"{r['teacher_nfes_per_sample']:>13}")

line_plot(
    OUT / "bon.svg",
    [("transferred samples", [r["n"] for r in rows], [r["mean_score"] for r in rows])],
    title="best-of-N search with an oracle verifier",
    xlabel="N candidates per sample", ylabel="mean log-density",
)
print(f"wrote {OUT}/bon.svg")
