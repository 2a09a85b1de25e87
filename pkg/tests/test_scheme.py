import numpy as np
import pytest

from retune.core import HyperParams, PriorKind, Signal
from retune.group_norms import group_structure
from retune.scheme import (LipschitzCert, NonContractionError, QuadraticStep, SchemeSpec,
                           StepSizeError, WaveletFBStep, block, default_tau, fb_step,
                           fixed_point_solve, lipschitz_omega, optimal_tau, restart_path,
                           restart_T, scalar_model, unroll_K)
from retune.wavelet import CoeffLayout, WaveletCoeffs, theta_diag


def wavelet_problem(rng, shape=(8, 8, 1), levels=2, kind=PriorKind.BANDS, scale=3.0):
    y = Signal(scale * rng.standard_normal(int(np.prod(shape))), shape)
    step = WaveletFBStep(y, levels, kind)
    theta = np.exp(rng.uniform(-0.7, 0.3, step.n_theta))
    return step.with_tau(default_tau(step.diag(theta))), theta


def test_lipschitz_omega_examples():
    assert lipschitz_omega(0.5, 1.0, 3.0) == 0.5
    assert optimal_tau(1.0, 3.0) == 0.5
    assert lipschitz_omega(optimal_tau(1.0, 3.0), 1.0, 3.0) == pytest.approx((3 - 1) / (3 + 1))
    assert 1 - 1e-8 < lipschitz_omega(1e-9, 1.0, 3.0) < 1.0
    for tau in (0.0, -1.0, 2 / 3, 1.0):
        with pytest.raises(StepSizeError):
            lipschitz_omega(tau, 1.0, 3.0)


def test_certificate_depth():
    c = LipschitzCert(1.0, 3.0, 0.5)
    assert c.for_depth(3).delta_K == 0.125 and c.delta_K == 0.5


def test_default_tau_examples(rng):
    assert default_tau(np.ones(5)) == 1.0
    assert default_tau(np.array([1.0, 2.0, 1.5])) == pytest.approx(1.6)
    assert default_tau(np.array([1.0, 2.0]), rule="1.95/L") == pytest.approx(1.95)
    with pytest.raises(ValueError):
        default_tau(np.ones(2), rule="bogus")
    lay = CoeffLayout(8, 8, 3, 2)
    for _ in range(20):
        p = HyperParams(rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 9))
        d = theta_diag(lay, p.prior_kind, p.weight_vector())
        mu, L = 1 / d.max() ** 2, 1 / d.min() ** 2
        t_opt, t_alt = default_tau(p, lay), default_tau(p, lay, "1.95/L")
        assert default_tau(p) == pytest.approx(t_opt)
        assert lipschitz_omega(t_opt, mu, L) < lipschitz_omega(t_alt, mu, L)


def test_scalar_block_closed_form():
    step = scalar_model(1.0, 0.5)
    for K in (1, 2, 5):
        spec = SchemeSpec(step, K)
        x = 0.3
        expect = 0.5 ** K * x + (1 - 0.5 ** K) * 2.0
        assert abs(block(spec, np.array([x]), np.array([2.0]))[0] - expect) <= 1e-12
    spec = SchemeSpec(step, 2)
    path = restart_path(spec, np.zeros(1), np.array([2.0]), 6)
    for t in range(7):
        assert abs(path[t, 0] - (1 - 0.5 ** (2 * t)) * 2.0) <= 1e-12
    prev, cur = restart_T(spec, np.zeros(1), np.array([2.0]), 1)
    assert prev[0] == 0.0 and cur[0] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        restart_T(spec, np.zeros(1), np.array([2.0]), 0)
    with pytest.raises(ValueError):
        SchemeSpec(step, 0)


def test_fixed_point_solve_references(rng):
    spec = SchemeSpec(scalar_model(3.0, 0.5), 2)
    assert abs(fixed_point_solve(spec, np.array([0.7]), np.zeros(1), tol=1e-13)[0] - 2.1) <= 1e-12
    n = 6
    M = rng.standard_normal((n, n))
    H = M @ M.T + np.eye(n)
    b, B = rng.standard_normal(n), rng.standard_normal((n, 2))
    step = QuadraticStep(H, b, B, tau=1.0 / np.linalg.eigvalsh(H)[-1])
    c = rng.standard_normal(2)
    x = fixed_point_solve(SchemeSpec(step, 3), c, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(H, b + B @ c), atol=1e-8)
    again = block(SchemeSpec(step, 3), x, c)
    np.testing.assert_allclose(again, x, atol=1e-11)


def test_fixed_point_cap_and_non_contraction(rng):
    step, theta = wavelet_problem(rng)
    with pytest.raises(NonContractionError):
        fixed_point_solve(SchemeSpec(step, 1), theta, step.initial(), tol=1e-14, max_steps=3)
    with pytest.raises(NonContractionError):
        fixed_point_solve(SchemeSpec(step, 1), theta, step.initial(), delta_K=1.0)


def test_fb_step_fixed_point_and_wrappers(rng):
    step, theta = wavelet_problem(rng)
    spec = SchemeSpec(step, 1)
    u_hat = fixed_point_solve(spec, theta, step.initial(), tol=1e-13)
    assert np.abs(step(u_hat, theta) - u_hat).max() <= 1e-12
    J = step.layout.levels
    p = HyperParams(np.log(theta[:J]), np.log(theta[J:]), prior_kind=step.kind)
    out = fb_step(WaveletCoeffs(u_hat, step.layout), p, step.y, tau=step.tau)
    assert np.abs(out.data - u_hat).max() <= 1e-12
    np.testing.assert_array_equal(fb_step(u_hat, p, step.y, levels=J, tau=step.tau), out.data)
    with pytest.raises(StepSizeError):
        fb_step(u_hat, p, step.y, levels=J, tau=10.0)
    with pytest.raises(ValueError):
        fb_step(u_hat, p, step.y)


def test_fb_step_threshold_region(rng):
    y = Signal(np.zeros(64), (8, 8, 1))
    lay = CoeffLayout(8, 8, 1, 2)
    gs = group_structure(lay, PriorKind.BANDS)
    u = np.zeros(64)
    u[lay.approx_size:] = rng.standard_normal(64 - lay.approx_size)
    nrm = gs.norms(u)
    u[gs.index] *= (0.9 / np.maximum(nrm, 1e-12))[:, None]
    p = HyperParams.uniform(2, 1, PriorKind.BANDS)
    assert np.all(fb_step(u, p, y, levels=2) == 0)


def test_energy_monotone(rng):
    step, theta = wavelet_problem(rng)
    for _ in range(100):
        u = 5 * rng.standard_normal(step.n_state)
        e0 = step.energy(u, theta)
        e1 = step.energy(step(u, theta), theta)
        assert e1 <= e0 + 1e-10 * max(1.0, abs(e0))


def test_block_lipschitz_and_theorem1(rng):
    step, theta = wavelet_problem(rng)
    for K in (1, 3):
        spec = SchemeSpec(step, K)
        delta = spec.certificate(theta).delta_K
        for _ in range(100):
            a, b = 3 * rng.standard_normal((2, step.n_state))
            assert np.linalg.norm(block(spec, a, theta) - block(spec, b, theta)) <= delta * np.linalg.norm(a - b) + 1e-9
    spec = SchemeSpec(step, 2)
    x0 = step.initial()
    x_hat = fixed_point_solve(spec, theta, x0, tol=1e-13)
    path = restart_path(spec, x0, theta, 20)
    d0 = np.linalg.norm(x0 - x_hat)
    delta = spec.certificate(theta).delta_K
    for t in range(21):
        assert np.linalg.norm(path[t] - x_hat) <= delta ** t * d0 + 1e-9


def test_unroll_trajectory(rng):
    step, theta = wavelet_problem(rng)
    x0 = step.initial()
    traj = unroll_K(SchemeSpec(step, 4), x0, theta)
    assert traj.shape == (5, step.n_state)
    np.testing.assert_array_equal(traj[0], x0)
    np.testing.assert_array_equal(traj[1], step(x0, theta))
    np.testing.assert_array_equal(traj[-1], block(SchemeSpec(step, 4), x0, theta))


def test_readout_and_initial(rng):
    step, theta = wavelet_problem(rng)
    u = rng.standard_normal(step.n_state)
    r = rng.standard_normal(step.n_state)
    vu, vt = step.readout_vjp(u, theta, r)
    h = 1e-6
    du = rng.standard_normal(step.n_state)
    fd = (step.readout(u + h * du, theta) - step.readout(u - h * du, theta)) / (2 * h)
    assert abs(r @ fd - vu @ du) <= 1e-7 * max(1, abs(vu @ du))
    dt = rng.standard_normal(theta.size)
    fd = (step.readout(u, theta + h * dt) - step.readout(u, theta - h * dt)) / (2 * h)
    assert abs(r @ fd - vt @ dt) <= 1e-7 * max(1, abs(vt @ dt))
    np.testing.assert_allclose(step.readout(step.initial(), np.ones(theta.size)), step.y.data, atol=1e-12)
