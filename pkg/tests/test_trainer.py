import numpy as np
import pytest
from dataclasses import replace

import freeflow.net as net
from freeflow.correct import aux_from_teacher
from freeflow.datasets import Gmm, ring_gmm
from freeflow.errors import ConfigurationError
from freeflow.flowmap import DeltaGrid
from freeflow.net import init_params, param_count, param_views
from freeflow.optim import AdamState, OptimizerConfig, adam_step, ema_update
from freeflow.predict import DeltaSampler, PredictConfig, WarmupSchedule
from freeflow.teacher import CallableVelocity, GmmVelocity, TeacherModel, teacher_spec
from freeflow.trainer import (
    BalanceConfig,
    DistillConfig,
    MeanFlowConfig,
    SplitConfig,
    alpha_at,
    balance_lambda,
    correction_grad,
    distill_init,
    distill_run,
    distill_step,
    meanflow_from_teacher,
    meanflow_run,
    meanflow_sample,
    meanflow_target,
)


def small_teacher(seed=0, classes=3):
    spec = teacher_spec(2, classes, hidden_dims=(16, 16), embed_dim=8, n_frequencies=4)
    params = init_params(spec, np.random.default_rng(seed))
    return TeacherModel(spec=spec, params=params, ema=params.copy())


def small_cfg(**kw):
    base = dict(
        steps=5,
        seed=7,
        batch_size=16,
        predict=PredictConfig(
            delta_sampler=DeltaSampler(grid=DeltaGrid.uniform(4)),
            warmup=WarmupSchedule(duration=2),
        ),
        balance=BalanceConfig(alpha_ref=0.3, t_delay=0, t_warmup=0),
    )
    base.update(kw)
    return DistillConfig(**base)


def test_alpha_schedule_values():
    cfg = BalanceConfig(alpha_ref=0.4, t_delay=100, t_warmup=50, t_decay=1000)
    assert alpha_at(cfg, 0) == 0.0
    assert alpha_at(cfg, 99) == 0.0
    assert alpha_at(cfg, 150) == pytest.approx(0.4)
    assert alpha_at(cfg, 125) == pytest.approx(0.2)
    assert alpha_at(cfg, 4000) == pytest.approx(0.2)  # inverse sqrt decay
    no_decay = BalanceConfig(alpha_ref=0.4, t_delay=0, t_warmup=0, t_decay=None)
    assert alpha_at(no_decay, 10**6) == pytest.approx(0.4)


def test_balance_lambda_ratio():
    lam = balance_lambda(2.0, 0.5, alpha=0.3)
    assert lam == pytest.approx(0.3 * 2.0 / (0.5 + 1e-6))
    # scaling the correction norm by 10 scales lambda by ~1/10
    lam10 = balance_lambda(2.0, 5.0, alpha=0.3)
    assert lam10 * 10 == pytest.approx(lam, rel=1e-4)
    assert balance_lambda(2.0, 0.5, alpha=0.0) == 0.0


def test_split_sizes_exact():
    assert SplitConfig().sizes(256) == (192, 64)
    assert SplitConfig(0.75).sizes(16) == (12, 4)
    with pytest.raises(ConfigurationError):
        SplitConfig(0.99).sizes(4)
    with pytest.raises(ConfigurationError):
        SplitConfig(1.2)


def test_distill_deterministic_trajectories():
    teacher = small_teacher()
    cfg = small_cfg(steps=30)
    s1 = distill_run(teacher, cfg)
    s2 = distill_run(teacher, cfg)
    assert s1.student.params.tobytes() == s2.student.params.tobytes()
    assert s1.student.ema.tobytes() == s2.student.ema.tobytes()
    assert s1.metrics.rows == s2.metrics.rows


def test_alpha_zero_matches_prediction_only_trajectory():
    teacher = small_teacher()
    cfg_zero = small_cfg(steps=20, balance=BalanceConfig(alpha_ref=0.0, t_delay=0, t_warmup=0))
    cfg_pred = small_cfg(steps=20, objective="prediction")
    s_zero = distill_run(teacher, cfg_zero)
    s_pred = distill_run(teacher, cfg_pred)
    assert s_zero.student.params.tobytes() == s_pred.student.params.tobytes()


def test_correction_only_trains_and_logs():
    teacher = small_teacher()
    cfg = small_cfg(steps=8, objective="correction", ikl_every=4)
    state = distill_run(teacher, cfg)
    assert state.step == 8
    assert np.isnan(state.metrics.column("pred_mean_norm")).all()
    assert np.isfinite(state.metrics.column("corr_mean_norm")).all()
    assert len(state.ikl_log.rows) == 2


def test_conditional_draws_and_gamma_range():
    teacher = small_teacher(classes=4)
    cfg = small_cfg(steps=6, conditional=True, gamma_range=(1.0, 2.0))
    state = distill_run(teacher, cfg)
    assert state.step == 6
    assert np.isfinite(state.student.params).all()


def test_ema_matches_reference_recomputation():
    teacher = small_teacher()
    cfg = small_cfg(steps=12, ema_decay=0.9)
    state = distill_init(teacher, cfg)
    u = teacher.velocity()
    thetas = []
    for _ in range(cfg.steps):
        state = distill_step(state, cfg, u)
        thetas.append(state.student.params.copy())
    ref = distill_init(teacher, cfg).student.ema
    for p in thetas:
        ref = 0.9 * ref + 0.1 * p
    assert np.allclose(state.student.ema, ref, rtol=0, atol=1e-14)


def test_lambda_compensation_on_summed_gradient():
    # scaling all correction residuals by c must leave the summed student
    # gradient essentially unchanged (< 0.1%)
    teacher = small_teacher(5)
    aux = aux_from_teacher(teacher, np.random.default_rng(99))
    ds = ring_gmm(k=3, radius=2.0, sigma=0.4)
    u_true = GmmVelocity(ds)
    student = distill_init(teacher, small_cfg()).student
    rng = np.random.default_rng(9)
    z = rng.standard_normal((32, 2))
    n_noise = rng.standard_normal((32, 2))
    r = rng.uniform(0.2, 0.9, 32)
    g_pred = rng.standard_normal(student.params.size)  # stand-in prediction grad
    pred_norm = 1.3

    def scaled_field(c):
        # residual v_N - u scaled by c via a shifted teacher field
        def fn(x, t, ids=None):
            v_n = net.forward(aux.spec, aux.params, x, {"t": t, "gamma": 1.0}, ids)
            return v_n - c * (v_n - u_true(x, t, ids))
        return fn

    def total(c):
        g_c, stats = correction_grad(student, aux, scaled_field(c), z, n_noise, r)
        lam = balance_lambda(pred_norm, stats.mean_norm, alpha=0.3)
        return g_pred + lam * g_c

    base = total(1.0)
    for c in (0.1, 10.0):
        delta = np.linalg.norm(total(c) - base) / np.linalg.norm(base)
        assert delta < 1e-3


def test_divergent_gradient_aborts():
    teacher = small_teacher()
    cfg = small_cfg(steps=3)
    state = distill_init(teacher, cfg)
    state.student.params[:] = np.nan
    from freeflow.errors import TrainingDiverged

    with pytest.raises(TrainingDiverged):
        distill_step(state, cfg, teacher.velocity())


def test_meanflow_target_t_equals_s():
    teacher = small_teacher(11)
    model = meanflow_from_teacher(teacher, np.random.default_rng(99))
    ds = ring_gmm(k=3, radius=2.0, sigma=0.4)
    u = GmmVelocity(ds)
    x = np.random.default_rng(12).standard_normal((8, 2))
    t = np.random.default_rng(13).uniform(0.2, 0.8, 8)
    _, target = meanflow_target(model, u, x, t, t)
    assert np.allclose(target, u(x, t))


def test_meanflow_perfect_student_on_constant_field():
    c = np.array([0.25, -0.5])
    u = CallableVelocity(lambda x, t: np.broadcast_to(c, x.shape))
    teacher = small_teacher(14)
    model = meanflow_from_teacher(teacher, np.random.default_rng(99))
    model.params[:] = 0.0
    param_views(model.spec, model.params)[f"trunk.{len(model.spec.hidden_dims)}.b"][...] = c
    x = np.random.default_rng(15).standard_normal((8, 2))
    f_avg, target = meanflow_target(model, u, x, 0.8, 0.1)
    assert np.allclose(f_avg - target, 0.0, atol=1e-12)


def test_meanflow_run_and_sample_deterministic():
    teacher = small_teacher(16)
    ds = ring_gmm(k=3, radius=2.0, sigma=0.4)
    cfg = MeanFlowConfig(steps=5, seed=3, batch_size=16)
    m1, log1 = meanflow_run(teacher, cfg, ds)
    m2, log2 = meanflow_run(teacher, cfg, ds)
    assert m1.params.tobytes() == m2.params.tobytes()
    assert log1.rows == log2.rows
    z = np.random.default_rng(0).standard_normal((10, 2))
    out = meanflow_sample(m1, z)
    assert out.shape == (10, 2)
    assert np.isfinite(out).all()
