import numpy as np
import pytest

from retune.core import ShapeError, Signal
from retune.forward_models import (adjoint, anisotropic_blur, apply, conv, gram, gram_bounds,
                                   identity, mask, random_mask, uniform_psf)

SHAPE = (8, 8, 3)


def all_ops(rng):
    return [identity(SHAPE), random_mask(SHAPE, 0.3, rng), anisotropic_blur(SHAPE, 3),
            conv(rng.standard_normal((3, 5)), SHAPE)]


def test_trivial_applications(rng):
    x = Signal(rng.standard_normal(192), SHAPE)
    np.testing.assert_array_equal(apply(identity(SHAPE), x).data, x.data)
    assert np.all(apply(mask(np.zeros(192), SHAPE), x).data == 0)
    np.testing.assert_allclose(apply(conv(np.ones((1, 1)), SHAPE), x).data, x.data, atol=1e-14)
    np.testing.assert_array_equal(adjoint(identity(SHAPE), x).data, x.data)
    A = random_mask(SHAPE, 0.5, rng)
    np.testing.assert_array_equal(adjoint(A, x).data, apply(A, x).data)


def test_adjoint_dot_product(rng):
    for A in all_ops(rng):
        for _ in range(100):
            x, r = rng.standard_normal(192), rng.standard_normal(192)
            assert abs(apply(A, x) @ r - x @ adjoint(A, r)) <= 1e-10 * max(1.0, abs(x @ adjoint(A, r)))


def test_gram_bounds_examples(rng):
    assert gram_bounds(identity()) == (1.0, 1.0)
    m = np.ones(192)
    m[5] = 0
    assert gram_bounds(mask(m, SHAPE))[0] == 0.0
    assert gram_bounds(mask(np.ones(192), SHAPE)) == (1.0, 1.0)
    # width-2 uniform kernel on a length-4 periodic grid: |h^|^2 = cos^2(pi k / 4)
    A = conv(np.array([[0.5, 0.5]]), (1, 4, 1))
    mu, L = gram_bounds(A)
    assert abs(L - 1.0) <= 1e-14 and abs(mu) <= 1e-14


def test_gram_bounds_rayleigh(rng):
    for A in all_ops(rng):
        mu, L = gram_bounds(A)
        for _ in range(20):
            x = rng.standard_normal(192)
            q = apply(A, x) @ apply(A, x) / (x @ x)
            assert mu - 1e-10 <= q <= L + 1e-10
        # power iteration reaches L
        v = rng.standard_normal(192)
        for _ in range(500):
            v = gram(A, v)
            v /= np.linalg.norm(v)
        assert v @ gram(A, v) == pytest.approx(L, rel=1e-6)


def test_anisotropic_psf_directions():
    assert uniform_psf(5, "horizontal").shape == (1, 5)
    assert uniform_psf(5, "vertical").shape == (5, 1)
    np.testing.assert_allclose(uniform_psf(5, "diagonal"), np.eye(5) / 5)
    for d in ("horizontal", "vertical", "diagonal"):
        assert uniform_psf(7, d).sum() == pytest.approx(1.0)
    img = np.zeros(SHAPE)
    img[4, 4, :] = 1.0
    out = apply(anisotropic_blur(SHAPE, 3), img.ravel()).reshape(SHAPE)
    assert np.count_nonzero(np.abs(out[:, :, 0]) > 1e-12) == 3 and np.all(np.abs(out[4, 3:6, 0] - 1 / 3) < 1e-12)
    assert np.all(np.abs(out[3:6, 4, 1] - 1 / 3) < 1e-12)
    assert all(abs(out[4 + k, 4 + k, 2] - 1 / 3) < 1e-12 for k in (-1, 0, 1))


def test_errors():
    with pytest.raises(ValueError):
        mask([0, 0.5, 1])
    with pytest.raises(ShapeError):
        apply(identity(SHAPE), np.zeros(10))
    with pytest.raises(ValueError):
        uniform_psf(3, "sideways")
    with pytest.raises(ShapeError):
        anisotropic_blur((8, 8, 1))
