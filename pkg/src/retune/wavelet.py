"""Orthonormal periodized Daubechies-4 wavelet transform on RGB images.

Coefficients live in one flat vector with a fixed layout:

* the approximation band first, channel by channel, row-major;
* then for each scale ``j = 1..J`` (1 is the finest), for each band
  ``H, V, D``, for each channel, the row-major positions ``k``.

The 1-D analysis operator for length ``N`` is an explicit orthogonal
``N x N`` matrix (low-pass rows stacked over high-pass rows), so the
2-D transform is ``A_H X A_W^T`` per channel and the synthesis is the
transpose.  Periodic boundary handling keeps every level exactly
orthogonal on dyadic sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import HyperParams, PriorKind, ShapeError, Signal

# Daubechies wavelet with 4 vanishing moments (8 taps), analysis low-pass.
DB4_LO = np.array([
    -0.010597401785069032,
    0.032883011666885200,
    0.030841381835560764,
    -0.18703481171909308,
    -0.027983769416859854,
    0.63088076792985891,
    0.71484657055291565,
    0.23037781330889650,
])

BANDS = ("H", "V", "D")


def qmf_highpass(lo):
    """Quadrature-mirror high-pass ``g_k = (-1)^k h_{L-1-k}``."""
    lo = np.asarray(lo, float)
    return lo[::-1] * (-1.0) ** np.arange(lo.size)


@lru_cache(maxsize=None)
def analysis_matrix(N: int) -> np.ndarray:
    """Periodized one-level analysis operator of size ``N x N``."""
    if N < 2 or N % 2:
        raise ShapeError(f"analysis length must be even and >= 2, got {N}")
    lo, hi = DB4_LO, qmf_highpass(DB4_LO)
    half = N // 2
    A = np.zeros((N, N))
    for i in range(half):
        for k in range(lo.size):
            col = (2 * i + k) % N
            A[i, col] += lo[k]
            A[half + i, col] += hi[k]
    A.setflags(write=False)
    return A


@dataclass(frozen=True)
class CoeffLayout:
    """Index bookkeeping for the flat coefficient vector."""

    height: int
    width: int
    channels: int
    levels: int

    def __post_init__(self):
        f = 2 ** self.levels
        if self.levels < 1:
            raise ShapeError("need at least one level")
        if self.height % f or self.width % f:
            raise ShapeError(
                f"image {self.height}x{self.width} is not divisible by 2^{self.levels}")

    @property
    def n(self) -> int:
        return self.height * self.width * self.channels

    def band_shape(self, j: int) -> tuple[int, int]:
        return self.height >> j, self.width >> j

    @property
    def approx_size(self) -> int:
        h, w = self.band_shape(self.levels)
        return h * w * self.channels

    def level_offset(self, j: int) -> int:
        off = self.approx_size
        for jj in range(1, j):
            h, w = self.band_shape(jj)
            off += 3 * self.channels * h * w
        return off

    def detail_slice(self, j: int, b: int, c: int) -> slice:
        h, w = self.band_shape(j)
        start = self.level_offset(j) + (b * self.channels + c) * h * w
        return slice(start, start + h * w)

    def approx_slice(self, c: int) -> slice:
        h, w = self.band_shape(self.levels)
        return slice(c * h * w, (c + 1) * h * w)

    @property
    def scale_index(self) -> np.ndarray:
        """Per-coefficient scale ``j - 1`` (``-1`` on the approximation band)."""
        return _band_ids(self)[0]

    @property
    def band_channel_index(self) -> np.ndarray:
        """Per-coefficient ``b * C + c`` (``-1`` on the approximation band)."""
        return _band_ids(self)[1]

    @property
    def band_index(self) -> np.ndarray:
        return _band_ids(self)[2]


@lru_cache(maxsize=None)
def _band_ids(layout: CoeffLayout):
    n = layout.n
    scale = np.full(n, -1, dtype=np.intp)
    bc = np.full(n, -1, dtype=np.intp)
    band = np.full(n, -1, dtype=np.intp)
    for j in range(1, layout.levels + 1):
        for b in range(3):
            for c in range(layout.channels):
                s = layout.detail_slice(j, b, c)
                scale[s] = j - 1
                bc[s] = b * layout.channels + c
                band[s] = b
    for arr in (scale, bc, band):
        arr.setflags(write=False)
    return scale, bc, band


@dataclass(frozen=True)
class WaveletCoeffs:
    """Multilevel coefficients stored flat according to ``layout``."""

    data: np.ndarray
    layout: CoeffLayout

    def __post_init__(self):
        data = np.asarray(self.data, float).ravel()
        if data.size != self.layout.n:
            raise ShapeError(f"{data.size} coefficients for a layout of size {self.layout.n}")
        object.__setattr__(self, "data", data)

    @property
    def levels(self) -> int:
        return self.layout.levels

    def approx(self, c: int = 0) -> np.ndarray:
        h, w = self.layout.band_shape(self.layout.levels)
        return self.data[self.layout.approx_slice(c)].reshape(h, w)

    def detail(self, j: int, band, c: int = 0) -> np.ndarray:
        b = BANDS.index(band) if isinstance(band, str) else int(band)
        h, w = self.layout.band_shape(j)
        return self.data[self.layout.detail_slice(j, b, c)].reshape(h, w)

    def with_data(self, data) -> "WaveletCoeffs":
        return WaveletCoeffs(data, self.layout)


def _dwt2_channel(img, levels):
    out = []
    a = img
    for _ in range(levels):
        Ah = analysis_matrix(a.shape[0])
        Aw = analysis_matrix(a.shape[1])
        Y = Ah @ a @ Aw.T
        h, w = a.shape[0] // 2, a.shape[1] // 2
        out.append((Y[h:, :w], Y[:h, w:], Y[h:, w:]))
        a = Y[:h, :w]
    return a, out


def dwt2(x: Signal, levels: int) -> WaveletCoeffs:
    """Forward transform ``D x`` with ``levels`` detail scales."""
    H, W, C = x.shape
    layout = CoeffLayout(H, W, C, levels)
    img = x.image()
    flat = np.empty(layout.n)
    for c in range(C):
        approx, details = _dwt2_channel(img[:, :, c], levels)
        flat[layout.approx_slice(c)] = approx.ravel()
        for j, bands in enumerate(details, start=1):
            for b, band in enumerate(bands):
                flat[layout.detail_slice(j, b, c)] = band.ravel()
    return WaveletCoeffs(flat, layout)


def idwt2(w: WaveletCoeffs) -> Signal:
    """Synthesis ``D^T w``; the exact inverse of :func:`dwt2`."""
    lay = w.layout
    img = np.empty((lay.height, lay.width, lay.channels))
    for c in range(lay.channels):
        a = w.approx(c)
        for j in range(lay.levels, 0, -1):
            h, wd = lay.band_shape(j)
            Y = np.empty((2 * h, 2 * wd))
            Y[:h, :wd] = a
            Y[h:, :wd] = w.detail(j, 0, c)
            Y[:h, wd:] = w.detail(j, 1, c)
            Y[h:, wd:] = w.detail(j, 2, c)
            Ah = analysis_matrix(2 * h)
            Aw = analysis_matrix(2 * wd)
            a = Ah.T @ Y @ Aw
        img[:, :, c] = a
    return Signal(img.ravel(), img.shape)


def analysis(x, layout: CoeffLayout) -> np.ndarray:
    """Array-level ``D x`` for a flat (H, W, C) image vector."""
    sig = Signal(x, (layout.height, layout.width, layout.channels))
    return dwt2(sig, layout.levels).data


def synthesis(w, layout: CoeffLayout) -> np.ndarray:
    """Array-level ``D^T w`` returning a flat image vector."""
    return idwt2(WaveletCoeffs(w, layout)).data


def n_prior_weights(layout: CoeffLayout, kind: PriorKind) -> int:
    """Length of the weight vector ``(lambda_1..lambda_J, Lambda...)``."""
    nb = 3 * layout.channels if PriorKind(kind) is PriorKind.BANDS_CHANNELS else 3
    return layout.levels + nb


def _lambda_ids(layout: CoeffLayout, kind: PriorKind):
    if PriorKind(kind) is PriorKind.BANDS_CHANNELS:
        return layout.band_channel_index
    return layout.band_index


def theta_diag(layout: CoeffLayout, kind: PriorKind, weights) -> np.ndarray:
    """Per-coefficient weight ``lambda_j sqrt(Lambda)``; 1 on the approximation band.

    ``weights`` is the effective vector ``(lambda_1..lambda_J, Lambda...)``.
    """
    weights = np.asarray(weights, float)
    J = layout.levels
    lam, Lam = weights[:J], weights[J:]
    scale = layout.scale_index
    lid = _lambda_ids(layout, kind)
    if Lam.size != n_prior_weights(layout, kind) - J:
        raise ShapeError(f"expected {n_prior_weights(layout, kind) - J} band weights, got {Lam.size}")
    out = np.ones(layout.n)
    det = scale >= 0
    out[det] = lam[scale[det]] * np.sqrt(Lam[lid[det]])
    return out


def theta_diag_vjp(layout: CoeffLayout, kind: PriorKind, weights, v) -> np.ndarray:
    """Pull a per-coefficient cotangent back to the weight vector."""
    weights = np.asarray(weights, float)
    J = layout.levels
    lam, Lam = weights[:J], weights[J:]
    scale = layout.scale_index
    lid = _lambda_ids(layout, kind)
    det = scale >= 0
    s, l, vd = scale[det], lid[det], np.asarray(v, float)[det]
    sq = np.sqrt(Lam[l])
    g_lam = np.bincount(s, weights=vd * sq, minlength=J)
    g_Lam = np.bincount(l, weights=vd * lam[s] / (2.0 * sq), minlength=Lam.size)
    return np.concatenate([g_lam, g_Lam])


def theta_diag_jvp(layout: CoeffLayout, kind: PriorKind, weights, dweights) -> np.ndarray:
    """Push a weight-vector tangent forward to per-coefficient weights."""
    weights = np.asarray(weights, float)
    dweights = np.asarray(dweights, float)
    J = layout.levels
    lam, Lam = weights[:J], weights[J:]
    dlam, dLam = dweights[:J], dweights[J:]
    scale = layout.scale_index
    lid = _lambda_ids(layout, kind)
    det = scale >= 0
    s, l = scale[det], lid[det]
    sq = np.sqrt(Lam[l])
    out = np.zeros(layout.n)
    out[det] = dlam[s] * sq + lam[s] * dLam[l] / (2.0 * sq)
    return out


def weight_map_apply(w: WaveletCoeffs, p: HyperParams, power: int = 1) -> WaveletCoeffs:
    """Multiply detail coefficients by ``(lambda_j sqrt(Lambda))**power``.

    The approximation band is left untouched (weight 1).
    """
    if power not in (-2, -1, 1, 2):
        raise ValueError(f"power must be one of -2, -1, 1, 2, got {power}")
    if p.levels != w.levels:
        raise ShapeError(f"{p.levels} scale weights for {w.levels} levels")
    d = theta_diag(w.layout, p.prior_kind, p.weight_vector())
    return w.with_data(w.data * d ** power)
