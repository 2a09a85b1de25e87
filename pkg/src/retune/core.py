"""Shared containers, the outer loss, PSNR and the log reparametrization."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when two signals or coefficient sets do not line up."""


class InfinitePSNR(ArithmeticError):
    """Raised by :func:`psnr` when the estimate equals the reference."""


@dataclass(frozen=True)
class Signal:
    """A flat real array carrying (height, width, channels) metadata.

    ``data`` is stored in row-major (H, W, C) order, so
    ``data.reshape(shape)`` recovers the image.
    """

    data: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float).ravel()
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3:
            raise ShapeError(f"shape must be (H, W, C), got {shape}")
        if data.size != shape[0] * shape[1] * shape[2]:
            raise ShapeError(f"data length {data.size} does not match shape {shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("signal entries must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_image(cls, img) -> "Signal":
        img = np.asarray(img, dtype=float)
        if img.ndim == 2:
            img = img[:, :, None]
        return cls(img.ravel(), img.shape)

    @property
    def n(self) -> int:
        return self.data.size

    def image(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def with_data(self, data) -> "Signal":
        return Signal(data, self.shape)


def _as_pair(x, ref):
    xd = x.data if isinstance(x, Signal) else np.asarray(x, dtype=float)
    rd = ref.data if isinstance(ref, Signal) else np.asarray(ref, dtype=float)
    if isinstance(x, Signal) and isinstance(ref, Signal) and x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if xd.shape != rd.shape:
        raise ShapeError(f"shape mismatch: {xd.shape} vs {rd.shape}")
    return xd, rd


def mse_loss(x, ref) -> float:
    """Half squared Euclidean distance ``0.5 * ||x - ref||^2``.

    The 1/2 factor makes :func:`loss_gradient` exactly ``x - ref``.
    Accepts :class:`Signal` objects or plain arrays.
    """
    xd, rd = _as_pair(x, ref)
    r = (xd - rd).ravel()
    return 0.5 * float(np.dot(r, r))


def loss_gradient(x, ref):
    """Gradient of :func:`mse_loss` with respect to ``x``."""
    xd, rd = _as_pair(x, ref)
    g = xd - rd
    if isinstance(x, Signal):
        return x.with_data(g)
    return g


def psnr(x, ref, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, ``10 log10(peak^2 n / ||x - ref||^2)``."""
    xd, rd = _as_pair(x, ref)
    r = (xd - rd).ravel()
    err = float(np.dot(r, r))
    if err == 0.0:
        raise InfinitePSNR("identical inputs have infinite PSNR")
    return 10.0 * math.log10(peak * peak * r.size / err)


class PriorKind(enum.Enum):
    BANDS_CHANNELS = "bc"
    BANDS = "b"


@dataclass(frozen=True)
class HyperParams:
    """Log-parameterized positive hyperparameters.

    Effective values are ``exp`` of the stored logs, so every real
    setting yields strictly positive weights.  ``log_Lambda`` has one
    entry per (band, channel) for :attr:`PriorKind.BANDS_CHANNELS`
    (ordered band-major) and one per band for :attr:`PriorKind.BANDS`.
    """

    log_lambda: np.ndarray
    log_Lambda: np.ndarray
    log_tau: float = 0.0
    log_sigma: float = 0.0
    prior_kind: PriorKind = PriorKind.BANDS_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "log_lambda", np.atleast_1d(np.asarray(self.log_lambda, float)).copy())
        object.__setattr__(self, "log_Lambda", np.atleast_1d(np.asarray(self.log_Lambda, float)).copy())
        object.__setattr__(self, "prior_kind", PriorKind(self.prior_kind))

    @classmethod
    def uniform(cls, levels: int, channels: int, prior_kind=PriorKind.BANDS_CHANNELS,
                lam: float = 1.0, Lam: float = 1.0) -> "HyperParams":
        kind = PriorKind(prior_kind)
        nb = 3 * channels if kind is PriorKind.BANDS_CHANNELS else 3
        return cls(np.full(levels, math.log(lam)), np.full(nb, math.log(Lam)),
                   prior_kind=kind)

    @property
    def lam(self) -> np.ndarray:
        return np.exp(self.log_lambda)

    @property
    def Lam(self) -> np.ndarray:
        return np.exp(self.log_Lambda)

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    @property
    def levels(self) -> int:
        return self.log_lambda.size

    def weight_vector(self) -> np.ndarray:
        """Effective prior weights ``(lambda_1..lambda_J, Lambda...)``."""
        return np.concatenate([self.lam, self.Lam])

    def log_weight_vector(self) -> np.ndarray:
        return np.concatenate([self.log_lambda, self.log_Lambda])

    def with_log_weights(self, vec) -> "HyperParams":
        vec = np.asarray(vec, float)
        J = self.levels
        return HyperParams(vec[:J], vec[J:], self.log_tau, self.log_sigma, self.prior_kind)


def reparam_chain_factor(p) -> np.ndarray:
    """Diagonal factor ``d theta / d log(theta) = theta``.

    ``p`` is a :class:`HyperParams` (factor for the prior weights) or an
    array of log-parameters.  Multiply a theta-space gradient by this to
    obtain the log-space gradient.
    """
    if isinstance(p, HyperParams):
        return p.weight_vector()
    return np.exp(np.asarray(p, float))


@dataclass(frozen=True)
class Dataset:
    """Supervised pairs ``(clean, observed)`` sharing one shape."""

    pairs: tuple
    seed: int = 0

    def __post_init__(self):
        pairs = tuple((c, o) for c, o in self.pairs)
        if pairs:
            shape = pairs[0][0].shape
            for c, o in pairs:
                if c.shape != shape or o.shape != shape:
                    raise ShapeError("all pairs must share one shape")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def shape(self):
        return self.pairs[0][0].shape
