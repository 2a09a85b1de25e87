"""Numerical certification of the JFB / ReTune approximation bounds.

Everything here runs on problems small enough for dense oracles.  Hard
inequalities: the Neumann-series matrix lemma, the JFB error bound, and
the Banach-Picard restart bound.  The ReTune bound carries an
``o(delta_K^T ||x_hat - x0||)`` remainder that is measured and reported,
never asserted.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import PriorKind, Signal
from .diff import dense_theta_jacobian
from .hypergrad import (StateLoss, g_deq_exact, g_jfb, g_retune, sensitivity_norm,
                        solve_fixed_point)
from .scheme import SchemeSpec, WaveletFBStep, default_tau, restart_path, unroll_K


class BoundViolation(AssertionError):
    """A hard inequality failed."""


class DegenerateSeries(ValueError):
    """A rate fit was requested on a series it cannot handle."""


def lemma_a1_check(H, slack: float = 1e-9) -> tuple[float, float]:
    """``(||I - (I - H)^{-1}||_2, omega / (1 - omega))`` with ``omega = ||H||_2``."""
    H = np.atleast_2d(np.asarray(H, float))
    omega = float(np.linalg.norm(H, 2))
    if omega >= 1.0:
        raise ValueError(f"||H||_2 = {omega} must be < 1")
    I = np.eye(H.shape[0])
    lhs = float(np.linalg.norm(I - np.linalg.inv(I - H), 2))
    bound = omega / (1.0 - omega)
    if lhs > bound + slack:
        raise BoundViolation(f"||I - (I-H)^-1|| = {lhs} > {bound}")
    return lhs, bound


def random_contraction(rng, n: int, omega: float) -> np.ndarray:
    """Gaussian matrix rescaled to spectral norm ``omega``."""
    H = rng.standard_normal((n, n))
    return H * (omega / np.linalg.norm(H, 2))


def lemma1_bound(spec: SchemeSpec, theta, loss, x_hat=None) -> float:
    """``delta_K / (1 - delta_K) ||dL(x_hat)|| ||d_theta Phi_K(x_hat)||``."""
    theta = np.atleast_1d(np.asarray(theta, float))
    x_hat = solve_fixed_point(spec, theta) if x_hat is None else x_hat
    delta = spec.certificate(theta).delta_K
    gx, _ = loss.grad(x_hat, theta)
    return delta / (1.0 - delta) * float(np.linalg.norm(gx)) * sensitivity_norm(spec, x_hat, theta)


def check_lemma1(spec: SchemeSpec, theta, loss, slack: float = 1e-9):
    """Assert ``||g - g_JF|| <= lemma1_bound``; returns ``(err, bound)``."""
    x_hat = solve_fixed_point(spec, theta)
    g = g_deq_exact(spec, theta, loss, x_hat=x_hat)
    gj = g_jfb(spec, theta, loss, x_hat=x_hat)
    err = float(np.linalg.norm(g - gj))
    bound = lemma1_bound(spec, theta, loss, x_hat=x_hat)
    if err > bound + slack:
        raise BoundViolation(f"JFB error {err} > bound {bound}")
    return err, bound


def _theta_jacobian_diff_norm(spec, x, theta, M_ref):
    M = dense_theta_jacobian(spec, x, theta)
    return float(np.linalg.norm(M - M_ref, 2))


def estimate_L_theta(spec: SchemeSpec, theta, x_hat, radius: float, samples: int = 32,
                     seed: int = 0, floor: float | None = None, ratio: float = 4.0) -> float:
    """Sampled local Lipschitz constant of ``x -> d_theta Phi_K(x, theta)`` at ``x_hat``.

    Probes ``x_hat + r d_i`` for ``samples`` seeded unit directions and the
    radii ``r = floor * ratio^m <= radius``.  The radius grid is anchored at
    ``floor`` rather than at ``radius``, so the probe sets are nested and
    the estimate never decreases as ``radius`` grows.
    """
    theta = np.atleast_1d(np.asarray(theta, float))
    x_hat = np.asarray(x_hat, float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if floor is None:
        floor = 1e-6 * max(1.0, float(np.linalg.norm(x_hat)))
    radii = []
    r = floor
    while r <= radius:
        radii.append(r)
        r *= ratio
    if not radii:
        return 0.0
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((samples, x_hat.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    M_ref = dense_theta_jacobian(spec, x_hat, theta)
    best = 0.0
    for d in dirs:
        for r in radii:
            q = _theta_jacobian_diff_norm(spec, x_hat + r * d, theta, M_ref) / r
            best = max(best, q)
    return best


@dataclass
class Theorem2Row:
    T: int
    delta_K: float
    err_jfb: float
    err_retune: float
    gap_jfb_retune: float
    bound_lemma1: float
    term1: float
    term2: float
    term3: float
    term4: float
    L_theta_hat: float
    radius: float = 0.0
    dist_prev: float = 0.0

    @property
    def bound(self) -> float:
        """The asserted part: terms 1 to 3."""
        return self.term1 + self.term2 + self.term3

    @property
    def local(self) -> bool:
        """``x_{K(T-1)}`` lies in the ball where ``L_theta`` was estimated."""
        return self.dist_prev <= self.radius

    @property
    def asymptotic(self) -> bool:
        """Local, and the measured remainder is below 10% of the asserted bound."""
        return self.local and self.term4 <= 0.1 * self.bound

    @property
    def holds(self) -> bool:
        return self.err_retune <= self.bound + 1e-9


def theorem2_report(spec: SchemeSpec, theta, loss, x0, T_values, L_theta: float | None = None,
                    x_hat=None, samples: int = 32, seed: int = 0,
                    radius: float | None = None) -> list[Theorem2Row]:
    """Error ``||g - g_R||`` and the four bound terms for each ``T``.

    Term 4 is the measured Taylor remainder of the loss gradient
    ``||dL(x_KT) - dL(x_hat) - d2L (x_KT - x_hat)|| ||d_theta Phi_K(x_{K(T-1)})||``,
    i.e. the quantity hidden inside the little-o.  ``L_theta`` is local:
    rows whose ``x_{K(T-1)}`` falls outside the estimation ball (default
    radius ``0.1 ||x_hat - x0||``) are reported with ``local = False``.
    """
    theta = np.atleast_1d(np.asarray(theta, float))
    x0 = np.asarray(x0, float)
    x_hat = solve_fixed_point(spec, theta) if x_hat is None else x_hat
    delta = spec.certificate(theta).delta_K
    dist0 = float(np.linalg.norm(x_hat - x0))
    radius = 0.1 * dist0 if radius is None else radius
    if L_theta is None:
        L_theta = estimate_L_theta(spec, theta, x_hat, radius, samples, seed) if radius > 0 else 0.0
    g = g_deq_exact(spec, theta, loss, x_hat=x_hat)
    gj = g_jfb(spec, theta, loss, x_hat=x_hat)
    gx_hat, _ = loss.grad(x_hat, theta)
    ngx = float(np.linalg.norm(gx_hat))
    s_hat = sensitivity_norm(spec, x_hat, theta)
    hess = loss.hessian_norm(theta)
    term1 = delta / (1.0 - delta) * ngx * s_hat
    err_jfb = float(np.linalg.norm(g - gj))
    T_values = [int(t) for t in T_values]
    path = restart_path(spec, x0, theta, max(T_values))
    rows = []
    for T in T_values:
        prev, cur = path[T - 1], path[T]
        gr = g_retune(spec, theta, loss, x0, T)
        s_prev = sensitivity_norm(spec, prev, theta)
        gx_cur, _ = loss.grad(cur, theta)
        rem = gx_cur - gx_hat - loss.hvp(x_hat, theta, cur - x_hat)
        rows.append(Theorem2Row(
            T=T, delta_K=delta, err_jfb=err_jfb,
            err_retune=float(np.linalg.norm(g - gr)),
            gap_jfb_retune=float(np.linalg.norm(gj - gr)),
            bound_lemma1=term1,
            term1=term1,
            term2=delta ** T * L_theta * dist0 * ngx,
            term3=delta ** T * dist0 * hess * s_prev,
            term4=float(np.linalg.norm(rem)) * s_prev,
            L_theta_hat=L_theta,
            radius=radius,
            dist_prev=float(np.linalg.norm(prev - x_hat)),
        ))
    return rows


def corollary_bound(spec: SchemeSpec, theta, loss, x0, T: int, x_hat=None,
                    L_theta: float | None = None, samples: int = 32, seed: int = 0) -> float:
    """Mean-squared-error specialization of the ReTune bound (no little-o term).

    ``delta/(1-delta) ||x_hat - xbar|| ||d_theta Phi_K(x_hat)||
    + delta^T ||x0 - x_hat|| (||d_theta Phi_K(x_{K(T-1)})|| + L_theta ||x_hat - xbar||)``
    """
    theta = np.atleast_1d(np.asarray(theta, float))
    x0 = np.asarray(x0, float)
    x_hat = solve_fixed_point(spec, theta) if x_hat is None else x_hat
    delta = spec.certificate(theta).delta_K
    dist0 = float(np.linalg.norm(x_hat - x0))
    if L_theta is None:
        L_theta = estimate_L_theta(spec, theta, x_hat, 0.1 * dist0, samples, seed) if dist0 > 0 else 0.0
    resid = float(np.linalg.norm(loss.grad(x_hat, theta)[0]))
    prev = restart_path(spec, x0, theta, T)[T - 1]
    hess = loss.hessian_norm(theta)
    return (delta / (1.0 - delta) * resid * sensitivity_norm(spec, x_hat, theta)
            + delta ** T * dist0 * (hess * sensitivity_norm(spec, prev, theta) + L_theta * resid))


def rate_fit(errors, xs) -> tuple[float, float]:
    """Least-squares slope of ``log(err)`` against ``xs`` and its ``r^2``."""
    e = np.asarray(errors, float)
    x = np.asarray(xs, float)
    if e.size < 4 or e.size != x.size:
        raise DegenerateSeries("need at least 4 matching points")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise DegenerateSeries("errors must be positive and finite")
    ly = np.log(e)
    if np.ptp(ly) == 0.0 or np.ptp(x) == 0.0:
        raise DegenerateSeries("constant series has no rate")
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ np.array([slope, icpt])
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    return float(slope), 1.0 - ss_res / ss_tot


def retune_gap_rate(rows, floor: float = 1e-10) -> tuple[float, float]:
    """Geometric rate of ``||g^JF - g^R||`` over the local rows of a report.

    Rows outside the locality ball carry the pre-asymptotic transient and
    gaps below ``floor`` times the largest one sit at rounding level, so
    both are left out.  Returns ``(nan, nan)`` when fewer than four
    points remain.
    """
    gaps = np.array([r.gap_jfb_retune for r in rows], float)
    Ts = np.array([r.T for r in rows], float)
    keep = np.array([r.local for r in rows], bool)
    if gaps.size and gaps.max() > 0:
        keep &= gaps > floor * gaps.max()
    else:
        keep[:] = False
    if keep.sum() < 4:
        return math.nan, math.nan
    return rate_fit(gaps[keep], Ts[keep])


# --- instance families ------------------------------------------------------

@dataclass(frozen=True)
class WaveletInstance:
    spec: SchemeSpec
    theta: np.ndarray
    loss: StateLoss
    x0: np.ndarray
    clean: Signal
    noisy: Signal

    @property
    def omega(self) -> float:
        return self.spec.step.lipschitz(self.theta).omega


def wavelet_instance(seed: int, K: int = 2, T: int = 1, shape=(8, 8, 1), levels: int = 2,
                     prior_kind=PriorKind.BANDS, amplitude: float = 40.0,
                     weight_center: float = 0.7, weight_spread: float = 0.005,
                     noise: float = 1.0) -> WaveletInstance:
    """A random strongly convex wavelet-denoising problem on ``n = prod(shape)``.

    Signals have amplitude ``amplitude`` against weights near
    ``weight_center`` so every group sits well inside its active region:
    the scheme is smooth around its fixed point.  The outer loss is the
    squared distance between the weighted-coefficient iterate and the
    weighted coefficients of the clean signal at the drawn weights (a
    fixed target, so the loss does not depend on theta).
    """
    rng = np.random.default_rng(seed)
    n = int(np.prod(shape))
    clean = Signal(amplitude * rng.standard_normal(n), shape)
    noisy = clean.with_data(clean.data + noise * rng.standard_normal(n))
    step = WaveletFBStep(noisy, levels, prior_kind)
    d = step.n_theta
    theta = weight_center * np.exp(weight_spread * rng.uniform(-1.0, 1.0, d))
    step = step.with_tau(default_tau(step.diag(theta)))
    spec = SchemeSpec(step, K, T)
    from .wavelet import analysis
    target = step.diag(theta) * analysis(clean.data, step.layout)
    return WaveletInstance(spec, theta, StateLoss(target), step.initial(), clean, noisy)


def quadratic_tau_instance(rng, n: int = 2, K: int = 3):
    """Quadratic inner problem with the stepsize as the only parameter."""
    from .scheme import QuadraticStep
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.linspace(1.0, 3.0, n)
    H = Q @ np.diag(eig) @ Q.T
    b = rng.standard_normal(n)
    step = QuadraticStep(H, b, None, tau=None)
    return SchemeSpec(step, K), H, b


# --- CSV ---------------------------------------------------------------------

CSV_COLUMNS = ("instance_id", "K", "T", "delta_K", "err_jfb", "err_retune", "bound_lemma1",
               "bound_th2_term1", "bound_th2_term2", "bound_th2_term3", "bound_th2_term4",
               "L_theta_hat", "slope", "r2")


def format_float(v) -> str:
    return repr(float(v))


def write_csv(rows, fh=None) -> str:
    """Write dict rows with :data:`CSV_COLUMNS`; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], (int, str)) else format_float(r[c]) for c in CSV_COLUMNS])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def theorem2_csv_rows(instance_id: int, K: int, rows, slope: float, r2: float):
    for r in rows:
        yield {
            "instance_id": instance_id, "K": K, "T": r.T, "delta_K": r.delta_K,
            "err_jfb": r.err_jfb, "err_retune": r.err_retune, "bound_lemma1": r.bound_lemma1,
            "bound_th2_term1": r.term1, "bound_th2_term2": r.term2,
            "bound_th2_term3": r.term3, "bound_th2_term4": r.term4,
            "L_theta_hat": r.L_theta_hat, "slope": slope, "r2": r2,
        }


def row_dict(row: Theorem2Row) -> dict:
    return asdict(row)
