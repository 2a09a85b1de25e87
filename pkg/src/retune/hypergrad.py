"""Hypergradient estimators: exact DEQ, Neumann, JFB, truncated backprop, ReTune.

Every estimator returns a theta-space gradient (effective parameters);
multiply by ``theta`` for the log-space gradient the trainer consumes.
Losses expose ``value(x, theta)`` and ``grad(x, theta) -> (g_x, g_theta)``
where ``g_theta`` is the direct dependence through a readout (zero for
losses defined on the state itself).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diff import block_jvp, block_vjp, dense_state_jacobian, dense_theta_jacobian
from .scheme import SchemeSpec, fixed_point_solve, restart_T, unroll_K


class SingularSystemError(np.linalg.LinAlgError):
    """``I - d_x Phi_K`` could not be inverted."""


class StateLoss:
    """``0.5 ||x - target||^2`` on the iterate itself."""

    def __init__(self, target):
        self.target = np.asarray(target, float)

    def value(self, x, theta=None) -> float:
        r = np.asarray(x) - self.target
        return 0.5 * float(r @ r)

    def grad(self, x, theta):
        return np.asarray(x) - self.target, np.zeros(np.size(theta))

    def hvp(self, x, theta, v):
        return np.asarray(v, float)

    def hessian_norm(self, theta=None) -> float:
        return 1.0


class ReadoutLoss:
    """``0.5 ||R(x, theta) - clean||^2`` through the step's readout ``R``.

    For the wavelet step ``R(u, theta) = D^T theta^{-1} u``.
    """

    def __init__(self, step, clean):
        self.step = step
        self.clean = np.asarray(getattr(clean, "data", clean), float)

    def value(self, x, theta) -> float:
        r = self.step.readout(x, theta) - self.clean
        return 0.5 * float(r @ r)

    def grad(self, x, theta):
        r = self.step.readout(x, theta) - self.clean
        return self.step.readout_vjp(x, theta, r)

    def hvp(self, x, theta, v):
        return np.asarray(v, float) / self.step.diag(theta) ** 2

    def hessian_norm(self, theta) -> float:
        return 1.0 / float(self.step.diag(theta).min()) ** 2


def initial_point(spec: SchemeSpec):
    init = getattr(spec.step, "initial", None)
    return init() if init is not None else np.zeros(spec.step.n_state)


def solve_fixed_point(spec: SchemeSpec, theta, tol: float = 1e-12, x0=None):
    return fixed_point_solve(spec, theta, initial_point(spec) if x0 is None else x0, tol=tol)


def g_deq_exact(spec: SchemeSpec, theta, loss, x_hat=None, max_n: int = 512):
    """``dL^T (I - d_x Phi_K)^{-1} d_theta Phi_K`` at the fixed point, by dense solve."""
    theta = np.atleast_1d(np.asarray(theta, float))
    x_hat = solve_fixed_point(spec, theta) if x_hat is None else x_hat
    traj = unroll_K(spec, x_hat, theta)
    J = dense_state_jacobian(spec, x_hat, theta, max_n=max_n)
    gx, gd = loss.grad(x_hat, theta)
    A = np.eye(J.shape[0]) - J.T
    try:
        w = np.linalg.solve(A, gx)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("I - d_x Phi_K is singular") from exc
    if not np.all(np.isfinite(w)):
        raise SingularSystemError("I - d_x Phi_K is numerically singular")
    return block_vjp(spec.step, traj, theta, w).wrt_theta + gd


def g_neumann(spec: SchemeSpec, theta, loss, P: int, x_hat=None):
    """Neumann-truncated inverse: ``v_P = sum_{p <= P} (J^T)^p dL`` by repeated VJPs."""
    if P < 0:
        raise ValueError("P must be >= 0")
    theta = np.atleast_1d(np.asarray(theta, float))
    x_hat = solve_fixed_point(spec, theta) if x_hat is None else x_hat
    traj = unroll_K(spec, x_hat, theta)
    gx, gd = loss.grad(x_hat, theta)
    acc = gx.copy()
    v = gx
    for _ in range(P):
        v = block_vjp(spec.step, traj, theta, v).wrt_x
        acc = acc + v
    return block_vjp(spec.step, traj, theta, acc).wrt_theta + gd


def g_jfb(spec: SchemeSpec, theta, loss, x_hat=None):
    """Jacobian-free gradient ``dL(x_hat)^T d_theta Phi_K(x_hat)``."""
    return g_neumann(spec, theta, loss, 0, x_hat=x_hat)


def g_trunc(spec: SchemeSpec, theta, loss, x0):
    """Full backprop through one block started at ``x0``."""
    theta = np.atleast_1d(np.asarray(theta, float))
    traj = unroll_K(spec, x0, theta)
    gx, gd = loss.grad(traj[-1], theta)
    return block_vjp(spec.step, traj, theta, gx).wrt_theta + gd


def g_retune(spec: SchemeSpec, theta, loss, x0, T: int | None = None):
    """ReTune gradient: restart ``T - 1`` blocks untracked, backprop the last one."""
    theta = np.atleast_1d(np.asarray(theta, float))
    T = spec.T if T is None else T
    prev, _ = restart_T(spec, x0, theta, T)
    traj = unroll_K(spec, prev, theta)
    gx, gd = loss.grad(traj[-1], theta)
    return block_vjp(spec.step, traj, theta, gx).wrt_theta + gd


def sensitivity_norm(spec: SchemeSpec, x, theta, method: str = "auto",
                     iters: int = 20, tol: float = 1e-6, seed: int = 0) -> float:
    """Spectral norm of ``d_theta Phi_K(x, theta)`` (an ``n x d`` operator).

    ``dense`` assembles the matrix from ``d`` JVPs; ``power`` runs power
    iteration on the JVP/VJP pair.  ``auto`` picks dense when
    ``n * d <= 65536``.
    """
    theta = np.atleast_1d(np.asarray(theta, float))
    traj = unroll_K(spec, x, theta)
    n, d = traj.shape[1], theta.size
    if method == "auto":
        method = "dense" if n * d <= 65536 else "power"
    if method == "dense":
        return float(np.linalg.norm(dense_theta_jacobian(spec, x, theta, traj=traj), 2))
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    return _power_norm(lambda r: block_jvp(spec.step, traj, theta, np.zeros(n), r),
                       lambda w: block_vjp(spec.step, traj, theta, w).wrt_theta,
                       d, iters, tol, seed)


def _power_norm(fwd, adj, d, iters, tol, seed):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(d)
    r /= np.linalg.norm(r)
    est = 0.0
    for _ in range(iters):
        s = adj(fwd(r))
        nrm = float(np.linalg.norm(s))
        if nrm == 0.0:
            return 0.0
        new = np.sqrt(nrm)
        r = s / nrm
        if abs(new - est) <= tol * max(new, 1e-300):
            est = new
            break
        est = new
    return float(est)


@dataclass
class HypergradReport:
    """All estimators at one ``theta`` with their errors and bounds (theta-space)."""

    theta: np.ndarray
    g_deq: np.ndarray
    g_neumann: np.ndarray
    P: int
    g_jfb: np.ndarray
    g_trunc: np.ndarray
    g_retune: np.ndarray
    delta_K: float
    bound_lemma1: float
    bound_theorem2: float
    extras: dict = field(default_factory=dict)

    @property
    def err_jfb(self) -> float:
        return float(np.linalg.norm(self.g_deq - self.g_jfb))

    @property
    def err_retune(self) -> float:
        return float(np.linalg.norm(self.g_deq - self.g_retune))

    @property
    def err_neumann(self) -> float:
        return float(np.linalg.norm(self.g_deq - self.g_neumann))

    def log_space(self, name: str) -> np.ndarray:
        return getattr(self, name) * self.theta

    def rows(self):
        """``(estimator, theta-space gradient, log-space gradient)`` triples."""
        for name in ("g_deq", "g_neumann", "g_jfb", "g_trunc", "g_retune"):
            yield name, getattr(self, name), self.log_space(name)


def compare(spec: SchemeSpec, theta, loss, x0, T: int | None = None, P: int = 5,
            L_theta: float | None = None) -> HypergradReport:
    """Evaluate every estimator and the JFB and ReTune error bounds at ``theta``."""
    from .bounds_lab import corollary_bound, lemma1_bound

    theta = np.atleast_1d(np.asarray(theta, float))
    T = spec.T if T is None else T
    x_hat = solve_fixed_point(spec, theta)
    cert = spec.certificate(theta)
    rep = HypergradReport(
        theta=theta,
        g_deq=g_deq_exact(spec, theta, loss, x_hat=x_hat),
        g_neumann=g_neumann(spec, theta, loss, P, x_hat=x_hat),
        P=P,
        g_jfb=g_jfb(spec, theta, loss, x_hat=x_hat),
        g_trunc=g_trunc(spec, theta, loss, x0),
        g_retune=g_retune(spec, theta, loss, x0, T),
        delta_K=cert.delta_K,
        bound_lemma1=lemma1_bound(spec, theta, loss, x_hat=x_hat),
        bound_theorem2=corollary_bound(spec, theta, loss, x0, T, x_hat=x_hat, L_theta=L_theta),
    )
    return rep
