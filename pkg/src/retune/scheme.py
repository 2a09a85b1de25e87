"""Elementary forward-backward steps, truncated blocks and restarts.

A *step* is any object exposing

``step(x, theta)``
    one elementary update ``phi(x, theta)``;
``step.vjp(x, theta, v)``
    ``(v^T d_x phi, v^T d_theta phi)``;
``step.jvp(x, theta, dx, dtheta)``
    ``d_x phi dx + d_theta phi dtheta``;
``step.lipschitz(theta)``
    a :class:`LipschitzCert` or ``None`` when no certificate exists.

``theta`` is always the vector of *effective* (positive) parameters;
log-space conversion happens in the callers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import HyperParams, PriorKind, Signal
from .group_norms import group_norm, group_structure, prox_group_l21, prox_vjp
from .wavelet import (CoeffLayout, analysis, n_prior_weights, synthesis, theta_diag,
                      theta_diag_jvp, theta_diag_vjp)

log = logging.getLogger(__name__)


class StepSizeError(ValueError):
    """Stepsize outside ``(0, 2/L)``."""


class NonContractionError(RuntimeError):
    """Fixed-point iteration exceeded its budget."""


def lipschitz_omega(tau: float, mu: float, L: float) -> float:
    """``max(|1 - tau mu|, |1 - tau L|)`` for ``0 < tau < 2/L``."""
    if not 0.0 < tau < 2.0 / L:
        raise StepSizeError(f"tau={tau} outside (0, 2/L={2.0 / L})")
    return max(abs(1.0 - tau * mu), abs(1.0 - tau * L))


def optimal_tau(mu: float, L: float) -> float:
    return 2.0 / (mu + L)


@dataclass(frozen=True)
class LipschitzCert:
    mu: float
    L: float
    omega: float
    K: int = 1

    @property
    def delta_K(self) -> float:
        return self.omega ** self.K

    def for_depth(self, K: int) -> "LipschitzCert":
        return LipschitzCert(self.mu, self.L, self.omega, K)


class QuadraticStep:
    """Gradient step on ``f(x) = x^T H x / 2 - x^T (b + B c)``.

    With a fixed ``tau`` the parameters are ``theta = c``; with
    ``tau=None`` the stepsize is learned too and ``theta = (tau, c)``.
    The scalar model ``f(x) = (x - theta y)^2 / 2`` is ``H = 1, b = 0,
    B = y`` (see :func:`scalar_model`).
    """

    def __init__(self, H, b=None, B=None, tau=None):
        self.H = np.atleast_2d(np.asarray(H, float))
        n = self.H.shape[0]
        self.b = np.zeros(n) if b is None else np.asarray(b, float).ravel()
        self.B = np.zeros((n, 0)) if B is None else np.asarray(B, float).reshape(n, -1)
        self.tau = tau
        eig = np.linalg.eigvalsh(0.5 * (self.H + self.H.T))
        self.mu, self.L = float(eig[0]), float(eig[-1])

    @property
    def n_state(self) -> int:
        return self.H.shape[0]

    @property
    def n_theta(self) -> int:
        return self.B.shape[1] + (self.tau is None)

    def _split(self, theta):
        theta = np.atleast_1d(np.asarray(theta, float))
        if self.tau is None:
            return theta[0], theta[1:]
        return self.tau, theta

    def residual(self, x, theta):
        _, c = self._split(theta)
        return self.H @ x - self.b - self.B @ c

    def __call__(self, x, theta):
        tau, _ = self._split(theta)
        return x - tau * self.residual(x, theta)

    def vjp(self, x, theta, v):
        tau, _ = self._split(theta)
        vx = v - tau * (self.H.T @ v)
        vc = tau * (self.B.T @ v)
        if self.tau is None:
            vtau = -float(v @ self.residual(x, theta))
            return vx, np.concatenate([[vtau], vc])
        return vx, vc

    def jvp(self, x, theta, dx, dtheta):
        tau, _ = self._split(theta)
        dtheta = np.atleast_1d(np.asarray(dtheta, float))
        out = dx - tau * (self.H @ dx)
        if self.tau is None:
            out = out - dtheta[0] * self.residual(x, theta) + tau * (self.B @ dtheta[1:])
        else:
            out = out + tau * (self.B @ dtheta)
        return out

    def lipschitz(self, theta) -> LipschitzCert:
        tau, _ = self._split(theta)
        return LipschitzCert(self.mu, self.L, lipschitz_omega(float(tau), self.mu, self.L))

    def exact_solution(self, theta):
        _, c = self._split(theta)
        return np.linalg.solve(self.H, self.b + self.B @ c)


def scalar_model(y: float = 1.0, tau: float = 0.5) -> QuadraticStep:
    """The 1-D model ``phi(x, theta) = (1 - tau) x + tau theta y``."""
    return QuadraticStep([[1.0]], [0.0], [[y]], tau=tau)


class WaveletFBStep:
    """Forward-backward step on weighted wavelet coefficients ``u = theta D x``.

    Minimizes ``0.5 ||D^T theta^{-1} u - y||^2 + ||u||_{2,1}`` with the
    update ``prox_{tau ||.||_{2,1}}(u - tau (theta^{-2} u - theta^{-1} D y))``
    (``D D^T = I`` simplifies the gradient).  ``theta`` is the weight
    vector ``(lambda_1..lambda_J, Lambda...)``; ``tau`` stays fixed for
    the lifetime of the step.
    """

    def __init__(self, y: Signal, levels: int, prior_kind=PriorKind.BANDS_CHANNELS,
                 tau: float = 1.0):
        self.y = y
        self.layout = CoeffLayout(*y.shape, levels)
        self.kind = PriorKind(prior_kind)
        self.groups = group_structure(self.layout, self.kind)
        self.z = analysis(y.data, self.layout)
        self.tau = float(tau)

    @property
    def n_state(self) -> int:
        return self.layout.n

    @property
    def n_theta(self) -> int:
        return n_prior_weights(self.layout, self.kind)

    def diag(self, theta):
        theta = np.asarray(theta, float)
        key = theta.tobytes()
        memo = self.__dict__.get("_diag_memo")
        if memo is None or memo[0] != key:
            memo = (key, theta_diag(self.layout, self.kind, theta))
            self._diag_memo = memo
        return memo[1]

    def _pre(self, u, d):
        return u - self.tau * (u / d ** 2 - self.z / d)

    def __call__(self, u, theta):
        d = self.diag(theta)
        return prox_group_l21(self._pre(u, d), self.tau, self.groups)

    def vjp(self, u, theta, v):
        d = self.diag(theta)
        w = prox_vjp(self._pre(u, d), self.tau, v, self.groups)
        vx = w * (1.0 - self.tau / d ** 2)
        vd = w * self.tau * (2.0 * u / d ** 3 - self.z / d ** 2)
        return vx, theta_diag_vjp(self.layout, self.kind, theta, vd)

    def jvp(self, u, theta, du, dtheta):
        d = self.diag(theta)
        dd = theta_diag_jvp(self.layout, self.kind, theta, dtheta)
        ds = du * (1.0 - self.tau / d ** 2) + dd * self.tau * (2.0 * u / d ** 3 - self.z / d ** 2)
        return prox_vjp(self._pre(u, d), self.tau, ds, self.groups)

    def lipschitz(self, theta) -> LipschitzCert:
        d = self.diag(theta)
        mu, L = 1.0 / float(d.max()) ** 2, 1.0 / float(d.min()) ** 2
        return LipschitzCert(mu, L, lipschitz_omega(self.tau, mu, L))

    def energy(self, u, theta) -> float:
        d = self.diag(theta)
        r = u / d - self.z
        return 0.5 * float(r @ r) + group_norm(u, self.groups)

    def initial(self):
        """Restart initialization ``x_0 = D y``."""
        return self.z.copy()

    def readout(self, u, theta):
        """Image estimate ``D^T theta^{-1} u``."""
        return synthesis(u / self.diag(theta), self.layout)

    def readout_vjp(self, u, theta, r):
        """Pull an image-space cotangent back to ``(u, theta)``."""
        d = self.diag(theta)
        Dr = analysis(r, self.layout)
        vd = -u * Dr / d ** 2
        return Dr / d, theta_diag_vjp(self.layout, self.kind, theta, vd)

    def with_tau(self, tau: float) -> "WaveletFBStep":
        other = object.__new__(WaveletFBStep)
        other.__dict__.update(self.__dict__)
        other.tau = float(tau)
        return other


def _diag_from(p, layout=None):
    if isinstance(p, HyperParams):
        if layout is None:
            return None
        return theta_diag(layout, p.prior_kind, p.weight_vector())
    return np.asarray(p, float)


def default_tau(p, layout: CoeffLayout | None = None, rule: str = "optimal") -> float:
    """Stepsize from the weights.

    ``rule="optimal"`` gives ``2 / (1/max(theta)^2 + 1/min(theta)^2)``;
    ``rule="1.95/L"`` gives ``1.95 min(theta)^2``.  The per-coefficient
    weights include the approximation band's weight 1, so ``p`` is either
    a per-coefficient weight array, or :class:`HyperParams` with a layout.
    When ``layout`` is omitted for :class:`HyperParams`, the weights
    ``lambda_j sqrt(Lambda)`` of every (scale, band) pair plus 1 are used,
    which gives the same extremes.
    """
    d = _diag_from(p, layout)
    if d is None:
        lam, Lam = p.lam, p.Lam
        d = np.concatenate([(lam[:, None] * np.sqrt(Lam)[None, :]).ravel(), [1.0]])
    mu, L = 1.0 / float(d.max()) ** 2, 1.0 / float(d.min()) ** 2
    if rule == "optimal":
        return optimal_tau(mu, L)
    if rule == "1.95/L":
        return 1.95 / L
    raise ValueError(f"unknown stepsize rule {rule!r}")


def fb_step(u, p: HyperParams, y: Signal, levels: int | None = None, tau: float | None = None):
    """One forward-backward step on the weighted coefficients ``u``.

    ``u`` is a :class:`~retune.wavelet.WaveletCoeffs` or a flat array (then
    ``levels`` is required).  ``tau`` defaults to :func:`default_tau`.
    """
    from .wavelet import WaveletCoeffs
    J = u.levels if isinstance(u, WaveletCoeffs) else levels
    if J is None:
        raise ValueError("levels required for array input")
    layout = CoeffLayout(*y.shape, J)
    if tau is None:
        tau = default_tau(p, layout)
    step = WaveletFBStep(y, J, p.prior_kind, tau)
    theta = p.weight_vector()
    step.lipschitz(theta)  # raises StepSizeError when tau >= 2/L
    data = u.data if isinstance(u, WaveletCoeffs) else np.asarray(u, float)
    out = step(data, theta)
    return u.with_data(out) if isinstance(u, WaveletCoeffs) else out


@dataclass(frozen=True)
class SchemeSpec:
    """Elementary step plus the block depth ``K`` and restart count ``T``."""

    step: object
    K: int = 1
    T: int = 1

    def __post_init__(self):
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be >= 1")

    def certificate(self, theta) -> LipschitzCert | None:
        cert = self.step.lipschitz(theta)
        return None if cert is None else cert.for_depth(self.K)


def unroll_K(spec: SchemeSpec, x0, theta) -> np.ndarray:
    """Trajectory ``(x_0, x_1, ..., x_K)`` of one block, shape ``(K + 1, n)``."""
    x = np.asarray(x0, float)
    traj = np.empty((spec.K + 1, x.size))
    traj[0] = x
    for k in range(spec.K):
        traj[k + 1] = spec.step(traj[k], theta)
    return traj


def block(spec: SchemeSpec, x0, theta) -> np.ndarray:
    """``Phi_K(x0, theta)`` without storing the trajectory."""
    x = np.asarray(x0, float)
    for _ in range(spec.K):
        x = spec.step(x, theta)
    return x


def restart_T(spec: SchemeSpec, x0, theta, T: int | None = None):
    """``(x_{K(T-1)}, x_{KT})`` after ``T`` applications of ``Phi_K``."""
    T = spec.T if T is None else T
    if T < 1:
        raise ValueError("T must be >= 1")
    prev = np.asarray(x0, float)
    for _ in range(T - 1):
        prev = block(spec, prev, theta)
    return prev, block(spec, prev, theta)


def restart_path(spec: SchemeSpec, x0, theta, T: int) -> np.ndarray:
    """All restart states ``x_0, x_K, ..., x_{KT}``, shape ``(T + 1, n)``."""
    out = np.empty((T + 1, np.size(x0)))
    out[0] = x0
    for t in range(T):
        out[t + 1] = block(spec, out[t], theta)
    return out


def fixed_point_solve(spec: SchemeSpec, theta, x0=None, tol: float = 1e-10,
                      max_steps: int = 10 ** 6, delta_K: float | None = None):
    """Banach-Picard iteration of ``Phi_K`` to its fixed point.

    Stops when ``||x_{t+1} - x_t|| <= tol (1 - delta_K) / delta_K`` so
    that ``||x_{t+1} - x_hat|| <= tol``.  Without a certificate the raw
    residual is compared to ``tol``.  Raises :class:`NonContractionError`
    after ``max_steps`` elementary steps.
    """
    if delta_K is None:
        cert = spec.certificate(theta)
        delta_K = None if cert is None else cert.delta_K
    if delta_K is not None and delta_K >= 1.0:
        raise NonContractionError(f"delta_K = {delta_K} >= 1")
    x = np.zeros(spec.step.n_state) if x0 is None else np.asarray(x0, float)
    if delta_K == 0.0:
        return block(spec, x, theta)
    thresh = tol if delta_K is None else tol * (1.0 - delta_K) / delta_K
    steps = 0
    stall = 0
    best = np.inf
    while steps < max_steps:
        nxt = block(spec, x, theta)
        steps += spec.K
        dx = float(np.linalg.norm(nxt - x))
        x = nxt
        if dx <= thresh:
            return x
        # rounding floor: the residual stops shrinking once it hits eps-level noise
        if dx < best:
            best, stall = dx, 0
        else:
            stall += 1
        if stall >= 50 and dx <= 1e3 * np.finfo(float).eps * max(1.0, float(np.linalg.norm(x))):
            log.debug("fixed point stalled at residual %.3e (target %.3e)", dx, thresh)
            return x
    raise NonContractionError(f"no convergence after {max_steps} steps")
