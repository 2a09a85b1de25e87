"""Randomized invariants driven by hypothesis."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from retune.bilevel import AdamState, adam_update
from retune.bounds_lab import lemma_a1_check, random_contraction
from retune.core import HyperParams, PriorKind, Signal, loss_gradient, mse_loss
from retune.diff import block_vjp
from retune.forward_models import adjoint, anisotropic_blur, apply, random_mask
from retune.group_norms import group_norm, group_structure, prox_group_l21, prox_vjp, weighted_norm
from retune.hypergrad import StateLoss, g_jfb, g_neumann, g_retune
from retune.io import format_value, read_rtnf, write_rtnf
from retune.scheme import SchemeSpec, WaveletFBStep, block, scalar_model
from retune.wavelet import CoeffLayout, dwt2, idwt2, weight_map_apply

SETTINGS = settings(max_examples=40, deadline=None,
                    suppress_health_check=[HealthCheck.function_scoped_fixture])
seeds = st.integers(0, 2**32 - 1)
shapes = st.sampled_from([(4, 4, 1), (8, 8, 1), (8, 8, 3), (16, 8, 2)])


def _signal(seed, shape, scale=1.0):
    rng = np.random.default_rng(seed)
    return Signal(scale * rng.standard_normal(int(np.prod(shape))), shape)


@SETTINGS
@given(seeds, shapes)
def test_mse_nonnegative_and_gradient_exact(seed, shape):
    x, r = _signal(seed, shape), _signal(seed + 1, shape)
    assert mse_loss(x, r) > 0 and mse_loss(x, x) == 0.0
    d = np.random.default_rng(seed).standard_normal(x.n)
    h = 1e-6
    fd = (mse_loss(x.data + h * d, r.data) - mse_loss(x.data - h * d, r.data)) / (2 * h)
    an = float(loss_gradient(x, r).data @ d)
    assert abs(fd - an) <= 1e-6 * max(1.0, abs(an))


@SETTINGS
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(-50, 50), st.floats(-50, 50))
def test_effective_params_positive(lam, Lam, lt, ls):
    p = HyperParams(np.array(lam), np.array(Lam), log_tau=lt, log_sigma=ls, prior_kind=PriorKind.BANDS)
    assert np.all(p.lam > 0) and np.all(p.Lam > 0) and p.tau > 0 and p.sigma > 0


@SETTINGS
@given(seeds, shapes, st.integers(1, 2))
def test_dwt_parseval_and_round_trip(seed, shape, levels):
    x = _signal(seed, shape, 10.0)
    w = dwt2(x, levels)
    assert abs(np.linalg.norm(w.data) / np.linalg.norm(x.data) - 1) <= 1e-10
    assert np.max(np.abs(idwt2(w).data - x.data)) <= 1e-10 * max(1.0, np.abs(x.data).max())


@SETTINGS
@given(seeds, st.sampled_from(list(PriorKind)))
def test_weight_map_commutes_with_sign_flips(seed, kind):
    rng = np.random.default_rng(seed)
    w = dwt2(_signal(seed, (8, 8, 3)), 2)
    p = HyperParams.uniform(2, 3, kind).with_log_weights(
        rng.normal(size=HyperParams.uniform(2, 3, kind).log_weight_vector().size))
    s = rng.choice([-1.0, 1.0], w.data.size)
    lhs = weight_map_apply(w.with_data(s * w.data), p).data
    np.testing.assert_allclose(lhs, s * weight_map_apply(w, p).data, rtol=0, atol=0)


@SETTINGS
@given(seeds, st.floats(0.05, 0.95), st.sampled_from([1, 3, 5]))
def test_operator_adjoints(seed, keep, width):
    rng = np.random.default_rng(seed)
    shape = (8, 8, 3)
    x, r = rng.standard_normal(192), rng.standard_normal(192)
    for A in (random_mask(shape, keep, rng), anisotropic_blur(shape, width)):
        lhs, rhs = apply(A, x) @ r, x @ adjoint(A, r)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@SETTINGS
@given(seeds, st.floats(0.01, 3.0), st.sampled_from(list(PriorKind)))
def test_prox_nonexpansive_and_optimal(seed, t, kind):
    rng = np.random.default_rng(seed)
    gs = group_structure(CoeffLayout(8, 8, 3, 2), kind)
    u, v, y = (rng.standard_normal(192) * rng.uniform(0.1, 3) for _ in range(3))
    pu, pv = prox_group_l21(u, t, gs), prox_group_l21(v, t, gs)
    assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12
    obj = lambda z: 0.5 * float((z - u) @ (z - u)) + t * group_norm(z, gs)
    assert obj(pu) <= obj(y) + 1e-12
    assert obj(pu) <= obj(pu + 1e-3 * rng.standard_normal(192)) + 1e-12
    J = np.stack([prox_vjp(u, t, e, gs) for e in np.eye(192)])
    assert np.linalg.norm(J, 2) <= 1 + 1e-10


@SETTINGS
@given(seeds, st.sampled_from(list(PriorKind)))
def test_weighted_norm_identity(seed, kind):
    rng = np.random.default_rng(seed)
    w = dwt2(_signal(seed, (8, 8, 3)), 2)
    base = HyperParams.uniform(2, 3, kind)
    p = base.with_log_weights(rng.normal(size=base.log_weight_vector().size))
    assert abs(weighted_norm(w, p) - group_norm(weight_map_apply(w, p).data, group_structure(w.layout, kind))) \
        <= 1e-12 * max(1.0, weighted_norm(w, p))


@SETTINGS
@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.05, 1.95), st.integers(1, 12), st.floats(-3, 3))
def test_scalar_block_closed_form(y, th, tau, K, x):
    spec = SchemeSpec(scalar_model(y, tau), K)
    q = (1 - tau) ** K
    got = block(spec, np.array([x]), np.array([th]))[0]
    assert abs(got - (q * x + (1 - q) * th * y)) <= 1e-12 * max(1.0, abs(x), abs(th * y))


@SETTINGS
@given(seeds, st.floats(-3, 3))
def test_block_vjp_linear(seed, alpha):
    rng = np.random.default_rng(seed)
    step = WaveletFBStep(_signal(seed, (8, 8, 1), 5.0), 2, PriorKind.BANDS)
    theta = np.exp(rng.uniform(-1, 0, step.n_theta))
    step = step.with_tau(0.5 * np.min(step.diag(theta)) ** 2)
    from retune.scheme import unroll_K
    traj = unroll_K(SchemeSpec(step, 3), rng.standard_normal(64), theta)
    v1, v2 = rng.standard_normal(64), rng.standard_normal(64)
    a = block_vjp(step, traj, theta, alpha * v1 + v2)
    b, c = block_vjp(step, traj, theta, v1), block_vjp(step, traj, theta, v2)
    np.testing.assert_allclose(a.wrt_x, alpha * b.wrt_x + c.wrt_x, atol=1e-12 * (1 + abs(alpha)) * 10)
    np.testing.assert_allclose(a.wrt_theta, alpha * b.wrt_theta + c.wrt_theta,
                               atol=1e-11 * (1 + abs(alpha)) * max(1.0, np.abs(b.wrt_theta).max()))


@SETTINGS
@given(st.floats(0.2, 4), st.floats(-2, 2), st.integers(1, 6), st.integers(1, 8))
def test_scalar_estimators(th, xbar, K, T):
    spec = SchemeSpec(scalar_model(1.0, 0.5), K)
    theta, loss = np.array([th]), StateLoss(np.array([xbar]))
    jfb = g_jfb(spec, theta, loss)
    assert g_neumann(spec, theta, loss, 0).tobytes() == jfb.tobytes()
    q = 0.5 ** K
    gap = g_jfb(spec, theta, loss)[0] - g_retune(spec, theta, loss, np.zeros(1), T)[0]
    assert abs(gap - th * q ** T * (1 - q)) <= 1e-10 * max(1.0, th)


@SETTINGS
@given(seeds, st.integers(1, 20), st.floats(0.1, 0.95))
def test_lemma_a1_random(seed, n, omega):
    lhs, bound = lemma_a1_check(random_contraction(np.random.default_rng(seed), n, omega))
    assert lhs <= bound + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=True, width=64), max_size=12))
def test_rtnf_and_csv_values_round_trip(tmp_path_factory, vals):
    p = tmp_path_factory.mktemp("rt") / "v.rtnf"
    a = np.array(vals, float)
    write_rtnf(p, a)
    assert read_rtnf(p).tobytes() == a.tobytes()
    for v in vals:
        assert float(format_value(v)) == v


@SETTINGS
@given(st.integers(1, 5), st.floats(1e-4, 1.0))
def test_adam_zero_gradient_is_fixed(n, eta):
    p = np.arange(float(n))
    st_ = AdamState.zeros(n)
    for _ in range(3):
        p2, st_ = adam_update(st_, np.zeros(n), eta, p)
        assert p2.tobytes() == p.tobytes()
