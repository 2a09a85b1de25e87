"""Reverse-mode sweeps through unrolled blocks, dense Jacobians and FD oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scheme import SchemeSpec, unroll_K


@dataclass(frozen=True)
class Cotangent:
    """Adjoints ``v^T d_x`` and ``v^T d_theta`` of a step or block.

    ``wrt_theta`` is in theta-space (effective parameters).
    """

    wrt_x: np.ndarray
    wrt_theta: np.ndarray

    def log_space(self, theta) -> np.ndarray:
        """Gradient with respect to ``log(theta)``."""
        return self.wrt_theta * np.asarray(theta, float)


def step_vjp(step, x, theta, v) -> Cotangent:
    vx, vt = step.vjp(np.asarray(x, float), theta, np.asarray(v, float))
    return Cotangent(vx, np.atleast_1d(vt))


def block_vjp(step, traj, theta, v) -> Cotangent:
    """Pull ``v`` back through one stored block trajectory.

    ``traj`` is the ``(K + 1, n)`` output of :func:`~retune.scheme.unroll_K`;
    the returned ``wrt_theta`` is ``v^T d_theta Phi_K`` and ``wrt_x`` is
    ``v^T d_x Phi_K``, both at ``traj[0]``.
    """
    v = np.asarray(v, float)
    acc = None
    for k in range(traj.shape[0] - 2, -1, -1):
        v, vt = step.vjp(traj[k], theta, v)
        vt = np.atleast_1d(vt)
        acc = vt.copy() if acc is None else acc + vt
    return Cotangent(v, acc)


def block_jvp(step, traj, theta, dx0, dtheta) -> np.ndarray:
    """Forward tangent of ``Phi_K`` along ``(dx0, dtheta)``."""
    d = np.asarray(dx0, float)
    for k in range(traj.shape[0] - 1):
        d = step.jvp(traj[k], theta, d, dtheta)
    return d


def dense_state_jacobian(spec: SchemeSpec, x, theta, max_n: int = 512) -> np.ndarray:
    """``d_x Phi_K(x, theta)`` as an ``n x n`` matrix, row by row from VJPs."""
    traj = unroll_K(spec, x, theta)
    n = traj.shape[1]
    if n > max_n:
        raise ValueError(f"dense Jacobian refused for n = {n} > {max_n}")
    J = np.empty((n, n))
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        J[i] = block_vjp(spec.step, traj, theta, e).wrt_x
        e[i] = 0.0
    return J


def dense_theta_jacobian(spec: SchemeSpec, x, theta, traj=None) -> np.ndarray:
    """``d_theta Phi_K(x, theta)`` as an ``n x d`` matrix, column by column from JVPs."""
    theta = np.atleast_1d(np.asarray(theta, float))
    traj = unroll_K(spec, x, theta) if traj is None else traj
    n, d = traj.shape[1], theta.size
    M = np.empty((n, d))
    zero = np.zeros(n)
    e = np.zeros(d)
    for i in range(d):
        e[i] = 1.0
        M[:, i] = block_jvp(spec.step, traj, theta, zero, e)
        e[i] = 0.0
    return M


def fd_hypergrad(F, log_theta, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``F`` in log-parameter space."""
    log_theta = np.atleast_1d(np.asarray(log_theta, float))
    g = np.empty_like(log_theta)
    for i in range(log_theta.size):
        e = np.zeros_like(log_theta)
        e[i] = h
        g[i] = (F(log_theta + e) - F(log_theta - e)) / (2.0 * h)
    return g


def fd_jacobian_vector(fn, x, dx, h: float = 1e-6):
    """Central directional derivative ``(fn(x + h dx) - fn(x - h dx)) / 2h``."""
    x = np.asarray(x, float)
    return (np.asarray(fn(x + h * dx)) - np.asarray(fn(x - h * dx))) / (2.0 * h)
