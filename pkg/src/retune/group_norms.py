"""Group l2,1 norms on wavelet coefficients and block soft-thresholding.

Groups partition the detail coefficients; the approximation band belongs
to no group, is never penalized, and every operator here acts on it as
the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import HyperParams, PriorKind
from .wavelet import CoeffLayout, WaveletCoeffs, theta_diag


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Equal-size groups given as an ``(n_groups, group_size)`` index array."""

    index: np.ndarray
    n: int
    grouping: PriorKind | None = None

    @property
    def n_groups(self) -> int:
        return self.index.shape[0]

    @property
    def group_size(self) -> int:
        return self.index.shape[1]

    def blocks(self, u) -> np.ndarray:
        return np.asarray(u)[self.index]

    def norms(self, u) -> np.ndarray:
        b = self.blocks(u)
        return np.sqrt(np.einsum("ij,ij->i", b, b))


def from_index(index, n: int) -> GroupStructure:
    """Wrap an explicit index array (mainly for tests and toy problems)."""
    index = np.atleast_2d(np.asarray(index, dtype=np.intp))
    flat = index.ravel()
    if np.unique(flat).size != flat.size:
        raise ValueError("groups must be disjoint")
    index.setflags(write=False)
    return GroupStructure(index, n)


@lru_cache(maxsize=None)
def group_structure(layout: CoeffLayout, grouping=PriorKind.BANDS_CHANNELS) -> GroupStructure:
    """Groups for one coefficient layout.

    ``BANDS_CHANNELS``: one group per (scale, position) over all bands and
    channels (size ``3 C``).  ``BANDS``: one group per (scale, position,
    channel) over the three bands (size 3).
    """
    kind = PriorKind(grouping)
    C = layout.channels
    rows = []
    for j in range(1, layout.levels + 1):
        h, w = layout.band_shape(j)
        P = h * w
        base = layout.level_offset(j)
        pos = np.arange(P)
        # offset of (b, c) block inside the level
        bc = np.array([[(b * C + c) * P for c in range(C)] for b in range(3)])
        if kind is PriorKind.BANDS_CHANNELS:
            rows.append(base + pos[:, None] + bc.reshape(1, -1))
        else:
            for c in range(C):
                rows.append(base + pos[:, None] + bc[:, c].reshape(1, -1))
    index = np.concatenate(rows, axis=0)
    index.setflags(write=False)
    return GroupStructure(index, layout.n, kind)


def _data(u):
    return u.data if isinstance(u, WaveletCoeffs) else np.asarray(u, float)


def _wrap(like, data):
    return like.with_data(data) if isinstance(like, WaveletCoeffs) else data


def _structure(u, groups):
    if isinstance(groups, GroupStructure):
        return groups
    if isinstance(u, WaveletCoeffs):
        return group_structure(u.layout, PriorKind(groups or PriorKind.BANDS_CHANNELS))
    raise TypeError("arrays need an explicit GroupStructure")


def group_norm(u, groups=PriorKind.BANDS_CHANNELS) -> float:
    """Unweighted ``sum_g ||u_g||_2``."""
    gs = _structure(u, groups)
    return float(np.sum(gs.norms(_data(u))))


def weighted_norm(w: WaveletCoeffs, p: HyperParams) -> float:
    """Weighted prior ``sum_j lambda_j sum_k sqrt(sum Lambda w^2)``.

    Equal to the unweighted group norm of ``theta w``.
    """
    d = theta_diag(w.layout, p.prior_kind, p.weight_vector())
    gs = group_structure(w.layout, p.prior_kind)
    return float(np.sum(gs.norms(w.data * d)))


def prox_group_l21(u, t: float, groups=PriorKind.BANDS_CHANNELS):
    """Block soft-thresholding ``u_g max(0, 1 - t / ||u_g||)``."""
    if t <= 0:
        raise ValueError("threshold must be positive")
    gs = _structure(u, groups)
    x = _data(u)
    nrm = gs.norms(x)
    scale = np.where(nrm > t, 1.0 - t / np.where(nrm > 0, nrm, 1.0), 0.0)
    out = x.copy()
    out[gs.index] = gs.blocks(x) * scale[:, None]
    return _wrap(u, out)


def prox_vjp(u, t: float, v, groups=PriorKind.BANDS_CHANNELS):
    """``J^T v`` for the almost-everywhere Jacobian ``J`` of the prox at ``u``.

    The Jacobian is symmetric, so this is also the JVP.  Groups with
    ``||u_g|| <= t`` (the kink included) map to zero.
    """
    gs = _structure(u, groups)
    x = _data(u)
    vv = _data(v)
    ub = gs.blocks(x)
    vb = gs.blocks(vv)
    nrm = gs.norms(x)
    active = nrm > t
    safe = np.where(active, nrm, 1.0)
    a = np.where(active, 1.0 - t / safe, 0.0)
    c = np.where(active, t / safe ** 3, 0.0) * np.einsum("ij,ij->i", ub, vb)
    out = vv.copy()
    out[gs.index] = a[:, None] * vb + c[:, None] * ub
    return _wrap(u, out)


def prox_dt(u, t: float, groups=PriorKind.BANDS_CHANNELS):
    """Derivative of the prox with respect to the threshold ``t``."""
    gs = _structure(u, groups)
    x = _data(u)
    nrm = gs.norms(x)
    active = nrm > t
    out = np.zeros_like(x)
    out[gs.index] = -gs.blocks(x) * np.where(active, 1.0 / np.where(active, nrm, 1.0), 0.0)[:, None]
    return _wrap(u, out)


def kink_distance(u, t: float, groups=PriorKind.BANDS_CHANNELS) -> float:
    """Smallest ``| ||u_g|| - t |`` over groups; small values flag non-smooth points."""
    gs = _structure(u, groups)
    nrm = gs.norms(_data(u))
    return float(np.min(np.abs(nrm - t))) if nrm.size else np.inf
