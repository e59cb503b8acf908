import numpy as np
import pytest

from freeflow.errors import ConfigurationError
from freeflow.flowmap import (
    DeltaGrid,
    FlowMapModel,
    average_velocity,
    generating_velocity_cont,
    student_spec,
)
from freeflow.net import forward, forward_vjp, init_params, param_count, param_views
from freeflow.predict import (
    DeltaSampler,
    PredictConfig,
    WarmupSchedule,
    confident_eval_point,
    prediction_grad,
    prediction_target_cont,
    prediction_target_disc,
    sample_delta,
    weight_and_reduce,
)
from freeflow.teacher import CallableVelocity, GmmVelocity, SolverConfig, solve
from freeflow.datasets import ring_gmm


def make_model(seed=0, zero_scalars=()):
    spec = student_spec(2, 3, hidden_dims=(16, 16), embed_dim=8, n_frequencies=4)
    params = init_params(spec, np.random.default_rng(seed), zero_scalars=zero_scalars)
    return FlowMapModel(spec=spec, params=params, ema=params.copy())


def constant_f_model(c):
    spec = student_spec(2, 3, hidden_dims=(16, 16), embed_dim=8, n_frequencies=4)
    params = np.zeros(param_count(spec))
    param_views(spec, params)[f"trunk.{len(spec.hidden_dims)}.b"][...] = c
    return FlowMapModel(spec=spec, params=params, ema=params.copy())


def test_sample_delta_zero_prob_one():
    sampler = DeltaSampler(zero_prob=1.0)
    d, idx = sample_delta(sampler, 100, np.random.default_rng(0))
    assert np.array_equal(d, np.zeros(100))
    assert idx is None


def test_sample_delta_defaults_and_distribution():
    sampler = DeltaSampler()
    assert sampler.mean == 0.0 and sampler.std == 1.0 and sampler.zero_prob == 0.10
    d, _ = sample_delta(sampler, 50_000, np.random.default_rng(1))
    assert np.all((d >= 0) & (d < 1))
    frac_zero = np.mean(d == 0.0)
    assert abs(frac_zero - 0.10) < 0.01
    nonzero = d[d > 0]
    assert abs(np.median(nonzero) - 0.5) < 0.01  # logit-normal(0, 1) median


def test_sample_delta_discrete_floors_onto_grid():
    grid = DeltaGrid.uniform(8)
    sampler = DeltaSampler(grid=grid, zero_prob=0.2)
    d, idx = sample_delta(sampler, 10_000, np.random.default_rng(2))
    node_deltas = 1.0 - np.asarray(grid.boundaries)
    assert np.all(np.isin(d, node_deltas))
    assert np.all((idx >= 1) & (idx <= 8))
    assert np.allclose(grid.delta(idx), d)


def test_warmup_schedule_shape():
    w = WarmupSchedule(duration=100)
    assert w.t_c(0) == 1.0
    assert w.t_c(50) == 0.5
    assert w.t_c(100) == 0.0
    assert w.t_c(10_000) == 0.0
    assert WarmupSchedule(duration=0).t_c(0) == 0.0


def test_confident_eval_point_inactive_cases():
    rng = np.random.default_rng(3)
    f = rng.standard_normal((8, 2))
    n = rng.standard_normal((8, 2))
    x, t = confident_eval_point(f, n, 0.3, t_c=0.0)
    assert np.array_equal(x, f)
    assert np.allclose(t, 0.7)
    # t_c = 0.5 below the sample's own level 0.8: unchanged
    x, t = confident_eval_point(f, n, 0.2, t_c=0.5)
    assert np.array_equal(x, f)
    assert np.allclose(t, 0.8)


def test_confident_eval_point_full_noise_std():
    # t_c = 1, delta = 1: the evaluation point is pure noise, unit std
    rng = np.random.default_rng(4)
    f = np.broadcast_to(np.array([2.0, -1.0]), (100_000, 2))
    n = rng.standard_normal((100_000, 2))
    x, t = confident_eval_point(f, n, 1.0, t_c=1.0)
    assert np.allclose(t, 1.0)
    assert np.all(np.abs(x.std(axis=0) - 1.0) <= 0.02)
    assert np.all(np.abs(x.mean(axis=0)) <= 0.02)


def test_prediction_target_cont_delta_zero():
    model = make_model(5)
    u = GmmVelocity(ring_gmm(k=3, radius=2.0, sigma=0.4))
    rng = np.random.default_rng(6)
    z = rng.standard_normal((8, 2))
    target, f_avg, residual = prediction_target_cont(model, u, z, 0.0)
    assert np.allclose(target, u(z, 1.0))
    assert np.allclose(residual, f_avg - target)


def test_prediction_target_cont_delta_independent_f():
    model = make_model(7, zero_scalars=("delta",))
    u = GmmVelocity(ring_gmm(k=3, radius=2.0, sigma=0.4))
    z = np.random.default_rng(8).standard_normal((8, 2))
    d = 0.6
    target, f_avg, _ = prediction_target_cont(model, u, z, d)
    f_pred = z + d * f_avg
    assert np.allclose(target, u(f_pred, 1.0 - d))


def test_prediction_residual_on_integrated_analytic_flow():
    # residual algebra against a numerically integrated flow of u = a x:
    # F = (f - z)/delta and dF from the trajectory give residual ~ 0
    a = 0.7
    u = CallableVelocity(lambda x, t: a * x)
    z = np.random.default_rng(9).standard_normal((16, 2))
    nodes, states = solve(u, z, 1.0, 0.0, SolverConfig(method="heun", steps=400), record=True)
    deltas = 1.0 - nodes
    for j in range(5, len(deltas) - 5, 57):
        d = deltas[j]
        f = states[j]
        f_cap = (f - z) / d
        df = ((states[j + 1] - z) / deltas[j + 1] - (states[j - 1] - z) / deltas[j - 1]) / (
            deltas[j + 1] - deltas[j - 1]
        )
        v_gen = f_cap + d * df
        resid = v_gen - a * f
        assert np.max(np.abs(resid)) <= 1e-3


def test_prediction_target_disc_node_one_euler():
    model = make_model(10)
    u = GmmVelocity(ring_gmm(k=3, radius=2.0, sigma=0.4))
    z = np.random.default_rng(11).standard_normal((6, 2))
    grid = DeltaGrid.uniform(8)
    target, f_hi, residual, v_gen = prediction_target_disc(
        model, u, z, grid, 1, method="euler"
    )
    assert np.allclose(target, u(z, 1.0))
    assert np.allclose(residual, f_hi - target)


def test_prediction_target_disc_constant_oracle_zero_residual():
    c = np.array([0.5, -0.25])
    model = constant_f_model(c)
    u = CallableVelocity(lambda x, t: np.broadcast_to(c, x.shape))
    z = np.random.default_rng(12).standard_normal((8, 2))
    grid = DeltaGrid.uniform(8)
    for i in range(1, 9):
        _, _, residual, _ = prediction_target_disc(model, u, z, grid, i, method="heun")
        assert np.allclose(residual, 0.0, atol=1e-12)


def test_discrete_loss_approaches_continuous_loss():
    model = make_model(13)
    u = GmmVelocity(ring_gmm(k=3, radius=2.0, sigma=0.4))
    z = np.random.default_rng(14).standard_normal((64, 2))
    gaps = []
    for n in (8, 16, 32):
        grid = DeltaGrid.uniform(n)
        disc = cont = 0.0
        for i in range(1, n + 1):
            _, _, resid, _ = prediction_target_disc(model, u, z, grid, i, method="euler")
            disc += float(np.mean(np.sum(resid**2, axis=1)))
            d_hi = float(grid.delta(i + 1))
            _, _, resid_c = prediction_target_cont(model, u, z, d_hi)
            cont += float(np.mean(np.sum(resid_c**2, axis=1)))
        gaps.append(abs(disc - cont) / n)
    assert gaps[2] < gaps[0]


def test_loss_equivalence_identities():
    # Eq-(8)-style loss |F - sg(target)|^2 equals |v_G - u(f, 1-delta)|^2,
    # and likewise for the discrete objective, on frozen random models
    model = make_model(15)
    u = GmmVelocity(ring_gmm(k=3, radius=2.0, sigma=0.4))
    rng = np.random.default_rng(16)
    z = rng.standard_normal((128, 2))
    d = rng.uniform(0.05, 0.95, 128)

    target, f_avg, residual = prediction_target_cont(model, u, z, d)
    loss_a = np.mean(np.sum((f_avg - target) ** 2, axis=1))
    v_gen = generating_velocity_cont(model, z, d)
    f_pred = z + d[:, None] * average_velocity(model, z, d)
    u_val = u(f_pred, 1.0 - d)
    loss_b = np.mean(np.sum((v_gen - u_val) ** 2, axis=1))
    assert abs(loss_a - loss_b) / loss_b <= 1e-6

    grid = DeltaGrid.uniform(8)
    idx = rng.integers(1, 9, 128)
    target_d, f_hi, resid_d, v_gen_d = prediction_target_disc(
        model, u, z, grid, idx, method="euler"
    )
    loss_c = np.mean(np.sum((f_hi - target_d) ** 2, axis=1))
    x_lo = z + grid.delta(idx)[:, None] * average_velocity(model, z, grid.delta(idx))
    u_val_d = u(x_lo, grid.time(idx))
    loss_d = np.mean(np.sum((v_gen_d - u_val_d) ** 2, axis=1))
    assert abs(loss_c - loss_d) / loss_d <= 1e-6


def test_weight_and_reduce_values():
    r = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert np.allclose(weight_and_reduce(r, k=0.0), 1.0)
    # |Delta|/sqrt(d) = 1 for the first row
    w = weight_and_reduce(r, k=1.0, eps=1e-4)
    assert np.isclose(w[0], 1.0 / (1.0 + 1e-4))
    assert np.isclose(w[1], 1.0 / (1e-4))
    with pytest.raises(ConfigurationError):
        weight_and_reduce(r, k=-1.0)


def test_weight_dimension_invariance():
    rng = np.random.default_rng(17)
    r = rng.standard_normal((16, 2))
    doubled = np.concatenate([r, r], axis=1)  # duplicate every coordinate
    assert np.allclose(
        weight_and_reduce(r, k=1.0), weight_and_reduce(doubled, k=1.0)
    )


def test_prediction_grad_zero_for_perfect_student():
    c = np.array([0.5, -0.25])
    model = constant_f_model(c)
    u = CallableVelocity(lambda x, t: np.broadcast_to(c, x.shape))
    cfg = PredictConfig(
        delta_sampler=DeltaSampler(grid=DeltaGrid.uniform(8)),
        warmup=WarmupSchedule(duration=0),
    )
    z = np.random.default_rng(18).standard_normal((32, 2))
    grad, stats = prediction_grad(model, u, cfg, z, None, 1.0, 0.0, np.random.default_rng(19))
    assert np.allclose(grad, 0.0, atol=1e-12)
    assert stats.n_skipped == 0
    assert stats.mean_norm <= 1e-12


@pytest.mark.parametrize("discrete", [True, False])
def test_prediction_grad_matches_manual_vjp_and_fd(discrete):
    model = make_model(20)
    u = GmmVelocity(ring_gmm(k=3, radius=2.0, sigma=0.4))
    grid = DeltaGrid.uniform(8) if discrete else None
    cfg = PredictConfig(
        delta_sampler=DeltaSampler(grid=grid),
        warmup=WarmupSchedule(duration=0),
        weight_power=1.0,
    )
    z = np.random.default_rng(21).standard_normal((16, 2))
    rng_draw = np.random.default_rng(22)
    grad, stats = prediction_grad(model, u, cfg, z, None, 1.0, 0.0, rng_draw)

    # replay the same draws to freeze the cotangent, then compare against the
    # manual vjp and a directional finite difference of the pseudo-loss
    rng_replay = np.random.default_rng(22)
    deltas, idx = sample_delta(cfg.delta_sampler, 16, rng_replay)
    n_noise = rng_replay.standard_normal(z.shape)
    if discrete:
        _, _, residual, _ = prediction_target_disc(
            model, u, z, grid, idx, None, 1.0, 0.0, n_noise, (0.0, 1.0), "heun"
        )
        gd = grid.delta(idx + 1)
    else:
        _, _, residual = prediction_target_cont(
            model, u, z, deltas, None, 1.0, 0.0, n_noise, (0.0, 1.0)
        )
        gd = deltas
    w = weight_and_reduce(residual, 1.0)
    cot = w[:, None] * residual
    manual = forward_vjp(
        model.spec, model.params, z, {"delta": gd, "gamma": 1.0}, None, cot / 16
    )
    assert np.allclose(grad, manual)

    def pseudo_loss(p):
        f = forward(model.spec, p, z, {"delta": gd, "gamma": 1.0}, None)
        return float(np.sum(f * cot) / 16)

    rng_dir = np.random.default_rng(23)
    for _ in range(5):
        v = rng_dir.standard_normal(model.params.shape)
        v /= np.linalg.norm(v)
        h = 1e-6
        fd = (pseudo_loss(model.params + h * v) - pseudo_loss(model.params - h * v)) / (2 * h)
        assert abs(fd - grad @ v) <= 1e-6 * max(1.0, abs(fd))


def test_prediction_grad_finite_under_full_warmup():
    # t_c = 1 at step 0: evaluation points are pure noise; the gradient must
    # stay finite across random inits
    u = GmmVelocity(ring_gmm(k=3, radius=2.0, sigma=0.4))
    cfg = PredictConfig(
        delta_sampler=DeltaSampler(grid=DeltaGrid.uniform(8)),
        warmup=WarmupSchedule(duration=10),
    )
    z_rng = np.random.default_rng(24)
    for trial in range(100):
        model = make_model(1000 + trial)
        z = z_rng.standard_normal((8, 2))
        grad, _ = prediction_grad(
            model, u, cfg, z, None, 1.0, 1.0, np.random.default_rng(trial)
        )
        assert np.isfinite(grad).all()


def test_prediction_grad_skips_nan_targets():
    model = make_model(25)

    def fn(x, t):
        out = np.ones_like(x)
        out[x[:, 0] > 0] = np.nan
        return out

    u = CallableVelocity(fn)
    cfg = PredictConfig(
        delta_sampler=DeltaSampler(grid=DeltaGrid.uniform(4), zero_prob=0.0),
        warmup=WarmupSchedule(duration=0),
    )
    z = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [-2.0, 0.0]])
    grad, stats = prediction_grad(model, u, cfg, z, None, 1.0, 0.0, np.random.default_rng(26))
    assert np.isfinite(grad).all()
    assert stats.n_skipped >= 1
