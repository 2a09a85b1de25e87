"""Outer training loop: restarted truncated unrolling with ADAM on log-parameters.

A *model* turns one dataset item and the current effective parameters
into an inner step, an outer loss and an initial point.  Three models
ship here: wavelet denoising (:class:`WaveletDenoiseModel`), FB-PnP
restoration (:class:`PnPModel`) and the 1-D scalar model
(:class:`ScalarModel`).  The trainer only ever sees log-parameters.
"""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, PriorKind, Signal, psnr
from .diff import block_vjp
from .hypergrad import ReadoutLoss, StateLoss, g_deq_exact, g_jfb, solve_fixed_point
from .scheme import (SchemeSpec, WaveletFBStep, default_tau, restart_T,
                     scalar_model, unroll_K)

log = logging.getLogger(__name__)


class CertificateLost(RuntimeError):
    """An outer update pushed ``delta_K`` to 1 or above."""


class Estimator(enum.Enum):
    RETUNE = "retune"
    TRUNC = "trunc"
    JFB = "jfb"
    DEQ = "deq"


class Optimizer(enum.Enum):
    GD = "gd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    K: int = 1
    T: int = 1
    eta: float = 5e-2
    epochs: int = 4
    batch_size: int = 4
    optimizer: Optimizer = Optimizer.ADAM
    seed: int = 0
    estimator: Estimator = Estimator.RETUNE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(state: AdamState, grad, eta: float, params, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected ADAM step.  Returns ``(new_params, new_state)``."""
    grad = np.asarray(grad, float)
    params = np.asarray(params, float)
    if grad.shape != params.shape or grad.shape != state.m.shape:
        raise ValueError("shape mismatch between params, grad and state")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    return params - eta * mhat / (np.sqrt(vhat) + eps), AdamState(m, v, t)


def run_epoch_protocol(cfg: TrainConfig, data) -> list[np.ndarray]:
    """Seeded per-epoch shuffles cut into full batches (a ragged tail is dropped)."""
    n = data if isinstance(data, int) else len(data)
    if cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {n}")
    rng = np.random.default_rng(cfg.seed)
    per_epoch = n // cfg.batch_size
    schedule = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for b in range(per_epoch):
            schedule.append(perm[b * cfg.batch_size:(b + 1) * cfg.batch_size])
    return schedule


# --- models -----------------------------------------------------------------

class WaveletDenoiseModel:
    """Weighted group-sparse wavelet denoising; ``tau`` follows the weights."""

    def __init__(self, levels: int, prior_kind=PriorKind.BANDS_CHANNELS, tau_rule: str = "optimal"):
        self.levels = levels
        self.kind = PriorKind(prior_kind)
        self.tau_rule = tau_rule

    def prepare(self, clean: Signal, noisy: Signal):
        return WaveletFBStep(noisy, self.levels, self.kind), clean

    def configure(self, prepared, theta):
        base, clean = prepared
        step = base.with_tau(default_tau(base.diag(theta), rule=self.tau_rule))
        return step, ReadoutLoss(step, clean), step.initial()


class PnPModel:
    """FB-PnP with ``theta = (sigma, tau)`` and a fixed degradation ``A``."""

    def __init__(self, A, denoiser):
        self.A = A
        self.denoiser = denoiser

    def prepare(self, clean: Signal, noisy: Signal):
        from .pnp import PnPStep
        return PnPStep(noisy, self.A, self.denoiser), clean

    def configure(self, prepared, theta):
        step, clean = prepared
        return step, StateLoss(clean.data), step.initial()


class ScalarModel:
    """``phi(x) = (1 - tau) x + tau theta y`` with loss ``(x - xbar)^2 / 2``."""

    def __init__(self, tau: float = 0.5):
        self.tau = tau

    def prepare(self, clean: Signal, noisy: Signal):
        return scalar_model(float(noisy.data[0]), self.tau), clean

    def configure(self, prepared, theta):
        step, clean = prepared
        return step, StateLoss(clean.data), np.zeros(1)


# --- gradients ----------------------------------------------------------------

def _forward(cfg: TrainConfig, step, loss, x0, theta):
    """Model output used by ``cfg``'s estimator (no gradient)."""
    if cfg.estimator in (Estimator.JFB, Estimator.DEQ):
        return solve_fixed_point(SchemeSpec(step, cfg.K), theta, x0=x0)
    _, cur = restart_T(SchemeSpec(step, cfg.K), x0, theta, cfg.T)
    return cur


def item_gradient(cfg: TrainConfig, step, loss, x0, theta):
    """``(loss value, theta-space gradient)`` for one item."""
    if cfg.estimator is Estimator.RETUNE:
        spec = SchemeSpec(step, cfg.K)
        prev, _ = restart_T(spec, x0, theta, cfg.T)
        traj = unroll_K(spec, prev, theta)
    elif cfg.estimator is Estimator.TRUNC:
        traj = unroll_K(SchemeSpec(step, cfg.K * cfg.T), x0, theta)
    else:
        spec = SchemeSpec(step, cfg.K)
        x_hat = solve_fixed_point(spec, theta, x0=x0)
        g = (g_jfb if cfg.estimator is Estimator.JFB else g_deq_exact)(spec, theta, loss, x_hat=x_hat)
        return loss.value(x_hat, theta), g
    out = traj[-1]
    gx, gd = loss.grad(out, theta)
    return loss.value(out, theta), block_vjp(step, traj, theta, gx).wrt_theta + gd


def _map(cfg, fn, items):
    if cfg.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _certificate(cfg, step, theta):
    cert = step.lipschitz(theta)
    if cert is None:
        from .pnp import empirical_lipschitz
        q = empirical_lipschitz(step, theta, np.random.default_rng(0), pairs=4)
        log.info("no certificate; sampled step quotient %.4f", q)
        return q ** cfg.K
    return cert.for_depth(cfg.K).delta_K


def evaluate(cfg: TrainConfig, data: Dataset, log_theta, model):
    """Mean outer loss and mean PSNR of the model output over ``data``."""
    theta = np.exp(np.asarray(log_theta, float))

    def one(pair):
        step, loss, x0 = model.configure(model.prepare(*pair), theta)
        out = _forward(cfg, step, loss, x0, theta)
        est = step.readout(out, theta) if hasattr(step, "readout") else out
        return loss.value(out, theta), psnr(est, pair[0].data)

    res = _map(cfg, one, list(data.pairs))
    return float(np.mean([r[0] for r in res])), float(np.mean([r[1] for r in res]))


@dataclass
class History:
    rows: list = field(default_factory=list)
    timing: bool = True

    COLUMNS = ("outer_step", "train_loss", "test_psnr_mean", "delta_K", "wall_ms")

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows], float)

    def to_csv(self) -> str:
        from .io import csv_text
        return csv_text(self.COLUMNS, [[r[c] for c in self.COLUMNS] for r in self.rows])


def retune_train(cfg: TrainConfig, data: Dataset, log_theta0, model, test: Dataset | None = None,
                 timing: bool = False):
    """Outer training loop over the seeded epoch schedule.

    ``log_theta0`` is the initial log-parameter vector (a
    :class:`~retune.core.HyperParams` is accepted for the wavelet model).
    Returns ``(final log-parameters, History)``.  ``wall_ms`` is recorded
    only when ``timing`` is set, so histories stay bitwise reproducible
    by default.
    """
    from .core import HyperParams
    if isinstance(log_theta0, HyperParams):
        log_theta0 = log_theta0.log_weight_vector()
    lt = np.array(log_theta0, float)
    prepared = [model.prepare(c, o) for c, o in data.pairs]
    state = AdamState.zeros(lt.size)
    hist = History(timing=timing)
    for ell, batch in enumerate(run_epoch_protocol(cfg, data)):
        t0 = time.perf_counter()
        theta = np.exp(lt)
        built = [model.configure(prepared[i], theta) for i in batch]
        delta = _certificate(cfg, built[0][0], theta)
        if delta >= 1.0 and built[0][0].lipschitz(theta) is not None:
            raise CertificateLost(f"delta_K = {delta} >= 1 at outer step {ell}")
        res = _map(cfg, lambda b: item_gradient(cfg, b[0], b[1], b[2], theta), built)
        values = np.array([r[0] for r in res])
        g = np.mean([r[1] for r in res], axis=0) * theta
        if cfg.optimizer is Optimizer.ADAM:
            lt, state = adam_update(state, g, cfg.eta, lt, cfg.beta1, cfg.beta2, cfg.eps)
        else:
            lt = lt - cfg.eta * g
        test_psnr = evaluate(cfg, test, lt, model)[1] if test is not None and len(test) else float("nan")
        wall = (time.perf_counter() - t0) * 1e3 if timing else float("nan")
        hist.append(outer_step=ell, train_loss=float(values.mean()), test_psnr_mean=test_psnr,
                    delta_K=float(delta), wall_ms=wall)
    return lt, hist
