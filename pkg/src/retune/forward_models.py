"""Linear forward operators: identity, inpainting mask, periodic blur."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, Signal


@dataclass(frozen=True)
class LinearOp:
    """A linear operator acting on flat (H, W, C) signals.

    Use the constructors :func:`identity`, :func:`mask`, :func:`conv`
    rather than building instances by hand.
    """

    kind: str
    shape: tuple[int, int, int] | None = None
    m: np.ndarray | None = None
    kernels: tuple | None = None

    def _check(self, x):
        data = x.data if isinstance(x, Signal) else np.asarray(x, float)
        if self.shape is not None:
            n = self.shape[0] * self.shape[1] * self.shape[2]
            if data.size != n or (isinstance(x, Signal) and x.shape != self.shape):
                raise ShapeError(f"operator built for {self.shape}, got {getattr(x, 'shape', data.shape)}")
        return data

    def transfer(self) -> np.ndarray:
        """Per-channel DFT of the zero-padded, centered kernels, shape (C, H, W)."""
        if self.kind != "conv":
            raise TypeError("transfer functions exist only for convolutions")
        return _transfer(self)


def identity(shape=None) -> LinearOp:
    return LinearOp("identity", None if shape is None else tuple(shape))


def mask(m, shape=None) -> LinearOp:
    m = np.asarray(m, float).ravel()
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask entries must be 0 or 1")
    if shape is not None and m.size != int(np.prod(shape)):
        raise ShapeError("mask size does not match shape")
    m.setflags(write=False)
    return LinearOp("mask", None if shape is None else tuple(shape), m=m)


def random_mask(shape, keep_prob: float, rng) -> LinearOp:
    """Seeded Bernoulli pixel mask, shared across channels."""
    H, W, C = shape
    keep = (rng.random((H, W)) < keep_prob).astype(float)
    return mask(np.repeat(keep[:, :, None], C, axis=2).ravel(), shape)


def conv(kernels, shape) -> LinearOp:
    """Periodic per-channel convolution.

    ``kernels`` holds one 2-D array per channel (a single array is reused
    for every channel); the kernel centre sits at index ``(kh // 2, kw // 2)``.
    """
    shape = tuple(int(s) for s in shape)
    if isinstance(kernels, np.ndarray) and kernels.ndim == 2:
        kernels = [kernels] * shape[2]
    kernels = tuple(np.atleast_2d(np.asarray(k, float)) for k in kernels)
    if len(kernels) != shape[2]:
        raise ShapeError(f"{len(kernels)} kernels for {shape[2]} channels")
    for k in kernels:
        if k.shape[0] > shape[0] or k.shape[1] > shape[1]:
            raise ShapeError("kernel larger than the image")
    return LinearOp("conv", shape, kernels=kernels)


def uniform_psf(width: int, direction: str) -> np.ndarray:
    """Normalized uniform PSF along ``horizontal``, ``vertical`` or ``diagonal``."""
    if width < 1:
        raise ValueError("width must be positive")
    if direction == "horizontal":
        k = np.ones((1, width))
    elif direction == "vertical":
        k = np.ones((width, 1))
    elif direction == "diagonal":
        k = np.eye(width)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return k / k.sum()


def anisotropic_blur(shape, width: int = 5) -> LinearOp:
    """Red averaged horizontally, green vertically, blue diagonally."""
    dirs = ("horizontal", "vertical", "diagonal")
    if shape[2] != 3:
        raise ShapeError("the anisotropic blur is defined for RGB signals")
    return conv([uniform_psf(width, d) for d in dirs], shape)


def _transfer(op):
    H, W, C = op.shape
    out = np.empty((C, H, W), dtype=complex)
    for c, k in enumerate(op.kernels):
        pad = np.zeros((H, W))
        kh, kw = k.shape
        pad[:kh, :kw] = k
        pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        out[c] = np.fft.fft2(pad)
    return out


def _conv_apply(op, data, adjoint=False):
    H, W, C = op.shape
    img = data.reshape(H, W, C)
    tf = _transfer(op)
    out = np.empty_like(img)
    for c in range(C):
        t = np.conj(tf[c]) if adjoint else tf[c]
        out[:, :, c] = np.fft.ifft2(np.fft.fft2(img[:, :, c]) * t).real
    return out.ravel()


def apply(A: LinearOp, x):
    """``A x``.  Returns the same container type as ``x``."""
    data = A._check(x)
    if A.kind == "identity":
        out = data.copy()
    elif A.kind == "mask":
        out = A.m * data
    elif A.kind == "conv":
        out = _conv_apply(A, data)
    else:
        raise TypeError(f"unknown operator kind {A.kind!r}")
    return x.with_data(out) if isinstance(x, Signal) else out


def adjoint(A: LinearOp, r):
    """``A^T r``; a periodic correlation for convolutions."""
    data = A._check(r)
    if A.kind == "identity":
        out = data.copy()
    elif A.kind == "mask":
        out = A.m * data
    elif A.kind == "conv":
        out = _conv_apply(A, data, adjoint=True)
    else:
        raise TypeError(f"unknown operator kind {A.kind!r}")
    return r.with_data(out) if isinstance(r, Signal) else out


def gram(A: LinearOp, x):
    """``A^T A x``."""
    return adjoint(A, apply(A, x))


def gram_bounds(A: LinearOp) -> tuple[float, float]:
    """Extreme eigenvalues ``(mu, L)`` of ``A^T A``."""
    if A.kind == "identity":
        return 1.0, 1.0
    if A.kind == "mask":
        return float(A.m.min()), float(A.m.max())
    if A.kind == "conv":
        p = np.abs(A.transfer()) ** 2
        return float(p.min()), float(p.max())
    raise TypeError(f"unknown operator kind {A.kind!r}")
