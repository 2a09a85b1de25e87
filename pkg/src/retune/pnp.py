"""Forward-backward Plug-and-Play steps with a pluggable denoiser.

The stand-in denoiser is wavelet group soft-thresholding, which keeps
every derivative analytic.  A learned network could be mounted behind
the same ``evaluate`` / ``vjp`` / ``jvp`` interface.
"""

from __future__ import annotations

import numpy as np

from .core import HyperParams, PriorKind, Signal
from .forward_models import LinearOp, adjoint, apply, gram, gram_bounds, identity
from .group_norms import group_structure, prox_dt, prox_group_l21, prox_vjp
from .scheme import LipschitzCert, lipschitz_omega
from .wavelet import CoeffLayout, analysis, synthesis


class Denoiser:
    """Interface: ``evaluate(x, sigma)``, ``vjp(x, sigma, v)``, ``jvp(x, sigma, dx, dsigma)``."""

    lipschitz_hint: float | None = None

    def evaluate(self, x, sigma: float):
        raise NotImplementedError

    def vjp(self, x, sigma: float, v):
        raise NotImplementedError

    def jvp(self, x, sigma: float, dx, dsigma: float):
        raise NotImplementedError


class WaveletThresholdDenoiser(Denoiser):
    """``D^T prox_{sigma ||.||_{2,1}} D``: firmly nonexpansive, identity at ``sigma = 0``."""

    lipschitz_hint = 1.0

    def __init__(self, shape, levels: int, grouping=PriorKind.BANDS_CHANNELS):
        self.layout = CoeffLayout(*shape, levels)
        self.groups = group_structure(self.layout, PriorKind(grouping))

    def evaluate(self, x, sigma: float):
        data = x.data if isinstance(x, Signal) else np.asarray(x, float)
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        if sigma == 0:
            out = data.copy()
        else:
            w = analysis(data, self.layout)
            out = synthesis(prox_group_l21(w, sigma, self.groups), self.layout)
        return x.with_data(out) if isinstance(x, Signal) else out

    def vjp(self, x, sigma: float, v):
        w = analysis(np.asarray(x, float), self.layout)
        dv = analysis(np.asarray(v, float), self.layout)
        vx = synthesis(prox_vjp(w, sigma, dv, self.groups), self.layout)
        vs = float(prox_dt(w, sigma, self.groups) @ dv)
        return vx, vs

    def jvp(self, x, sigma: float, dx, dsigma: float):
        w = analysis(np.asarray(x, float), self.layout)
        dw = prox_vjp(w, sigma, analysis(np.asarray(dx, float), self.layout), self.groups)
        dw = dw + dsigma * prox_dt(w, sigma, self.groups)
        return synthesis(dw, self.layout)


class PnPStep:
    """``x -> D_sigma(x - tau A^T (A x - y))`` with ``theta = (sigma, tau)``."""

    def __init__(self, y: Signal, A: LinearOp, denoiser: Denoiser):
        self.y = y
        self.A = A
        self.denoiser = denoiser
        self.mu_A, self.L_A = gram_bounds(A)

    @property
    def n_state(self) -> int:
        return self.y.n

    n_theta = 2

    def _grad(self, x):
        return adjoint(self.A, apply(self.A, x) - self.y.data)

    def __call__(self, x, theta):
        sigma, tau = float(theta[0]), float(theta[1])
        return self.denoiser.evaluate(x - tau * self._grad(x), sigma)

    def vjp(self, x, theta, v):
        sigma, tau = float(theta[0]), float(theta[1])
        g = self._grad(x)
        wz, ws = self.denoiser.vjp(x - tau * g, sigma, v)
        vx = wz - tau * gram(self.A, wz)
        return vx, np.array([ws, -float(g @ wz)])

    def jvp(self, x, theta, dx, dtheta):
        sigma, tau = float(theta[0]), float(theta[1])
        g = self._grad(x)
        dz = dx - tau * gram(self.A, dx) - dtheta[1] * g
        return self.denoiser.jvp(x - tau * g, sigma, dz, float(dtheta[0]))

    def lipschitz(self, theta) -> LipschitzCert | None:
        """Certificate only when ``A^T A`` is invertible and ``tau < 2 / L_A``."""
        tau = float(theta[1])
        if self.mu_A <= 0 or not 0 < tau < 2.0 / self.L_A:
            return None
        hint = self.denoiser.lipschitz_hint
        if hint is None or hint > 1.0:
            return None
        return LipschitzCert(self.mu_A, self.L_A, hint * lipschitz_omega(tau, self.mu_A, self.L_A))

    def initial(self):
        """Restart initialization ``x_0 = A^T y``."""
        return adjoint(self.A, self.y.data)

    def readout(self, x, theta):
        return np.asarray(x, float)

    def readout_vjp(self, x, theta, r):
        return np.asarray(r, float), np.zeros(2)


def pnp_step(x: Signal, p: HyperParams, y: Signal, A: LinearOp | None, D: Denoiser) -> Signal:
    """One FB-PnP step ``D_sigma(x - tau A^T (A x - y))``; ``sigma = 0`` is allowed."""
    A = identity(y.shape) if A is None else A
    step = PnPStep(y, A, D)
    sigma = 0.0 if np.isneginf(p.log_sigma) else p.sigma
    return x.with_data(step(x.data, np.array([sigma, p.tau])))


def empirical_lipschitz(step, theta, rng, pairs: int = 16, scale: float = 1.0) -> float:
    """Largest sampled quotient ``||phi(a) - phi(b)|| / ||a - b||``."""
    n = step.n_state
    best = 0.0
    for _ in range(pairs):
        a = scale * rng.standard_normal(n)
        b = a + scale * rng.standard_normal(n)
        best = max(best, float(np.linalg.norm(step(a, theta) - step(b, theta)) / np.linalg.norm(a - b)))
    return best


def learn_sigma_tau(cfg, data, A: LinearOp, D: Denoiser, sigma0: float = 0.05, tau0: float = 1.0,
                    test=None):
    """Train ``theta = (sigma, tau)`` with :func:`~retune.bilevel.retune_train`.

    Returns ``(sigma, tau, history)``.
    """
    from .bilevel import PnPModel, retune_train

    model = PnPModel(A, D)
    log_theta = np.log([sigma0, tau0])
    final, history = retune_train(cfg, data, log_theta, model=model, test=test)
    sigma, tau = np.exp(final)
    return float(sigma), float(tau), history
