"""Error accumulation along the student's own trajectory.

The prediction objective is self-referential: the teacher is queried at the
student's predicted states, so small errors compound as the jump size grows.
This script trains a prediction-only student and a combined one, then plots
the mean relative deviation between f(z, delta) and the solved teacher path
as delta sweeps from 0 (exact by construction) to 1.

Outputs land in demos/out/03/.
"""

from pathlib import Path

import numpy as np

from freeflow.config import RunConfig, apply_overrides
from freeflow.datasets import ring_gmm
from freeflow.experiments import deviation_curve
from freeflow.optim import OptimizerConfig
from freeflow.svg import line_plot
from freeflow.teacher import teacher_spec, train_teacher
from freeflow.trainer import distill_run

OUT = Path(__file__).parent / "out" / "03"
OUT.mkdir(parents=True, exist_ok=True)

ds = ring_gmm()
print("training teacher (4000 steps) ...")
teacher, _ = train_teacher(
    ds, teacher_spec(ds.dim, ds.class_count), OptimizerConfig(lr=1e-3),
    steps=4000, batch_size=256, seed=0,
)

# plain Euler bootstrap makes the accumulation clearly visible at desk scale
cfg = apply_overrides(RunConfig(), ["predict.teacher_method=\"euler\""])
series = []
for objective in ("prediction", "combined"):
    print(f"distilling ({objective}, 6000 steps) ...")
    state = distill_run(teacher, cfg.distill_config(seed=1, steps=6000, objective=objective))
    z = np.random.default_rng(42).standard_normal((1024, 2))
    curve = deviation_curve(state.student, teacher.velocity(), z, np.linspace(0, 1, 9))
    series.append((objective, curve.deltas, curve.mean))
    print(f"  deviation at delta=1: {curve.mean[-1]:.4f}")

line_plot(
    OUT / "deviation.svg", series,
    title="deviation from the teacher's path vs jump size",
    xlabel="delta", ylabel="mean relative deviation",
)
print(f"wrote {OUT}/deviation.svg")
