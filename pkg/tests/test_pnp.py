import numpy as np
import pytest

from retune.bilevel import TrainConfig
from retune.core import HyperParams, PriorKind, Signal
from retune.data import denoising_dataset, restoration_dataset
from retune.forward_models import identity, random_mask
from retune.hypergrad import solve_fixed_point
from retune.pnp import (PnPStep, WaveletThresholdDenoiser, empirical_lipschitz, learn_sigma_tau,
                        pnp_step)
from retune.scheme import SchemeSpec, WaveletFBStep, default_tau

from conftest import random_signal

SHAPE = (8, 8, 3)


def test_identity_denoiser_single_step_returns_y(rng):
    y = random_signal(rng, SHAPE)
    x = random_signal(rng, SHAPE)
    D = WaveletThresholdDenoiser(SHAPE, 2)
    p = HyperParams(np.zeros(2), np.zeros(9), log_tau=0.0, log_sigma=-np.inf)
    out = pnp_step(x, p, y, None, D)
    np.testing.assert_allclose(out.data, y.data, atol=1e-12)


@pytest.mark.parametrize("sigma,tau", [(0.1, 1.0), (0.3, 0.6), (0.05, 1.5)])
def test_fixed_point_matches_wavelet_scheme(rng, sigma, tau):
    y = random_signal(rng, SHAPE)
    D = WaveletThresholdDenoiser(SHAPE, 2)
    step = PnPStep(y, identity(SHAPE), D)
    theta = np.array([sigma, tau])
    x_pnp = solve_fixed_point(SchemeSpec(step, 1), theta, tol=1e-13)
    wav = WaveletFBStep(y, 2, PriorKind.BANDS_CHANNELS)
    th_w = np.exp(HyperParams.uniform(2, 3, lam=sigma / tau).log_weight_vector())
    wav = wav.with_tau(default_tau(wav.diag(th_w)))
    u = solve_fixed_point(SchemeSpec(wav, 1), th_w, tol=1e-13)
    np.testing.assert_allclose(x_pnp, wav.readout(u, th_w), atol=1e-8)


def test_certificate_and_sampled_lipschitz(rng):
    y = random_signal(rng, SHAPE)
    D = WaveletThresholdDenoiser(SHAPE, 2)
    step = PnPStep(y, identity(SHAPE), D)
    theta = np.array([0.2, 0.5])
    cert = step.lipschitz(theta)
    assert abs(cert.omega - 0.5) <= 1e-12
    assert empirical_lipschitz(step, theta, rng, pairs=32) <= 0.5 + 1e-9
    masked = PnPStep(y, random_mask(SHAPE, 0.5, rng), D)
    assert masked.lipschitz(theta) is None
    assert empirical_lipschitz(masked, theta, rng, pairs=32) <= 1.0 + 1e-9


def test_denoiser_derivatives_match_fd(rng):
    D = WaveletThresholdDenoiser(SHAPE, 2)
    x = 0.5 * rng.standard_normal(192)
    dx, v = rng.standard_normal(192), rng.standard_normal(192)
    s, ds, h = 0.3, 0.7, 1e-6
    fd = (D.evaluate(x + h * dx, s + h * ds) - D.evaluate(x - h * dx, s - h * ds)) / (2 * h)
    np.testing.assert_allclose(D.jvp(x, s, dx, ds), fd, atol=1e-6)
    vx, vs = D.vjp(x, s, v)
    assert abs(vx @ dx + vs * ds - v @ fd) <= 1e-6 * max(1.0, abs(v @ fd))
    with pytest.raises(ValueError):
        D.evaluate(x, -1.0)


def test_step_derivatives_match_fd(rng):
    y = random_signal(rng, SHAPE)
    step = PnPStep(y, random_mask(SHAPE, 0.6, rng), WaveletThresholdDenoiser(SHAPE, 2))
    x = rng.standard_normal(192)
    th = np.array([0.2, 0.8])
    dx, dth, v = rng.standard_normal(192), np.array([0.3, -0.4]), rng.standard_normal(192)
    h = 1e-6
    fd = (step(x + h * dx, th + h * dth) - step(x - h * dx, th - h * dth)) / (2 * h)
    np.testing.assert_allclose(step.jvp(x, th, dx, dth), fd, atol=1e-6)
    vx, vt = step.vjp(x, th, v)
    assert abs(vx @ dx + vt @ dth - v @ fd) <= 1e-6 * max(1.0, abs(v @ fd))


def test_sigma_shrinks_without_noise():
    A = identity((8, 8, 3))
    data = denoising_dataset(4, 8, seed=0, noise=0.0)
    cfg = TrainConfig(K=2, T=2, epochs=5, batch_size=2, eta=0.1)
    sigma, tau, hist = learn_sigma_tau(cfg, data, A, WaveletThresholdDenoiser((8, 8, 3), 2),
                                       sigma0=0.1, tau0=0.5)
    assert sigma < 0.1
    assert hist.column("train_loss")[-1] < hist.column("train_loss")[0]


def test_learning_is_deterministic():
    rng = np.random.default_rng(0)
    A = random_mask((8, 8, 3), 0.5, rng)
    data = restoration_dataset(4, 8, seed=0, A=A)
    cfg = TrainConfig(K=3, T=2, epochs=2, batch_size=2)
    D = WaveletThresholdDenoiser((8, 8, 3), 2)
    a = learn_sigma_tau(cfg, data, A, D)
    b = learn_sigma_tau(cfg, data, A, D)
    assert a[:2] == b[:2] and a[2].to_csv() == b[2].to_csv()
    assert np.all(a[2].column("delta_K") <= 1.0 + 1e-9)


def test_initial_is_adjoint_of_y(rng):
    A = random_mask(SHAPE, 0.3, rng)
    y = Signal(rng.standard_normal(192), SHAPE)
    step = PnPStep(y, A, WaveletThresholdDenoiser(SHAPE, 2))
    np.testing.assert_array_equal(step.initial(), A.m * y.data)
