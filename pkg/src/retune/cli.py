"""Command-line experiment harness.

Subcommands: ``bounds-check``, ``denoise-train``, ``restore-train`` and
``hypergrad-compare``.  Exit codes: 0 success, 1 a hard assertion
failed, 2 usage error.  Every flag may also come from a ``--config``
file of ``key = value`` lines; explicit flags win.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds_lab as bl
from .bilevel import (CertificateLost, PnPModel, TrainConfig, WaveletDenoiseModel, evaluate,
                      retune_train)
from .core import Dataset, HyperParams, PriorKind, Signal, psnr
from .io import csv_text, write_ppm

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _is_dyadic(size: int, levels: int) -> bool:
    return size > 0 and size % (2 ** levels) == 0


# --- bounds-check ---------------------------------------------------------------

def cmd_bounds_check(args) -> int:
    side = int(round(math.sqrt(args.n)))
    if side * side != args.n or not _is_dyadic(side, args.levels):
        raise UsageError(f"--n must be a square of a multiple of 2^{args.levels}")
    rng = np.random.default_rng(args.seed)
    for i in range(args.matrices):
        H = bl.random_contraction(rng, int(rng.integers(1, 21)), float(rng.uniform(0.1, 0.95)))
        try:
            bl.lemma_a1_check(H)
        except bl.BoundViolation as exc:
            print(f"FAIL Neumann-series inequality, matrix {i}: {exc}")
            return EXIT_FAIL
    print(f"Neumann-series inequality: {args.matrices} matrices ok")
    Ts = list(range(1, args.t_max + 1))
    rows, failures = [], []
    for i in range(args.instances):
        inst = bl.wavelet_instance(args.seed * 100003 + i, K=args.k, shape=(side, side, 1),
                                   levels=args.levels)
        spec, theta, loss = inst.spec, inst.theta, inst.loss
        try:
            bl.check_lemma1(spec, theta, loss)
        except bl.BoundViolation as exc:
            failures.append(f"instance {i}: {exc}")
        rep = bl.theorem2_report(spec, theta, loss, inst.x0, Ts, seed=args.seed)
        slope, r2 = bl.retune_gap_rate(rep)
        delta = rep[0].delta_K
        if not math.isnan(slope) and abs(slope / math.log(delta) - 1.0) > args.rate_tol:
            failures.append(f"instance {i}: slope {slope:.4f} vs log delta_K {math.log(delta):.4f}")
        for r in rep:
            if r.asymptotic and not r.holds:
                failures.append(f"instance {i} T={r.T}: ReTune error {r.err_retune} > bound {r.bound}")
        rows.extend(bl.theorem2_csv_rows(i, args.k, rep, slope, r2))
    text = bl.write_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(f"JFB and ReTune bounds: {args.instances} instances, K={args.k}, T=1..{args.t_max}")
    if failures:
        print("FAIL " + failures[0])
        return EXIT_FAIL
    print("all hard assertions hold")
    return EXIT_OK


# --- training -------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    return TrainConfig(K=args.k, T=args.t, eta=args.eta, epochs=args.epochs, batch_size=args.batch,
                       seed=args.seed, estimator=args.estimator, optimizer=args.optimizer,
                       threads=args.threads)


def _check_sizes(args):
    if not _is_dyadic(args.size, args.levels):
        raise UsageError(f"--size {args.size} is not a multiple of 2^{args.levels}")
    if args.n_train < 1 or args.n_test < 1:
        raise UsageError("--n-train and --n-test must be >= 1")
    if args.batch > args.n_train:
        raise UsageError("--batch exceeds --n-train")


def _user_images(args, count, offset):
    from .data import load_ppm_dir
    imgs = load_ppm_dir(args.data_dir)
    imgs = [im for im in imgs if im.shape[0] >= args.size and im.shape[1] >= args.size]
    if len(imgs) < offset + count:
        raise UsageError(f"--data-dir holds {len(imgs)} usable images, need {offset + count}")
    out = []
    for im in imgs[offset:offset + count]:
        im = im[:args.size, :args.size]
        if im.shape[2] == 1:
            im = np.repeat(im, 3, axis=2)
        out.append(im)
    return out


def _datasets(args, degrade):
    from .data import synth_image
    rng = np.random.default_rng(args.seed)
    if args.data_dir:
        clean = _user_images(args, args.n_train + args.n_test, 0)
    else:
        clean = [synth_image(rng, args.size) for _ in range(args.n_train + args.n_test)]
    pairs = []
    for img in clean:
        c = Signal.from_image(img)
        pairs.append((c, c.with_data(degrade(rng, c))))
    return (Dataset(tuple(pairs[:args.n_train]), args.seed),
            Dataset(tuple(pairs[args.n_train:]), args.seed))


def _write_history(args, hist, extra_rows):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(hist.to_csv())
    (out / "summary.csv").write_text(csv_text(("key", "value"), extra_rows))
    return out


def cmd_denoise_train(args) -> int:
    _check_sizes(args)
    from .data import add_noise
    noise = [float(s) for s in args.noise.split(",")]
    if len(noise) not in (1, 3):
        raise UsageError("--noise takes 1 or 3 comma-separated values")
    train, test = _datasets(args, lambda rng, c: add_noise(rng, c.image(), noise).ravel())
    kind = PriorKind(args.prior)
    model = WaveletDenoiseModel(args.levels, kind)
    p0 = HyperParams.uniform(args.levels, 3, kind, lam=args.lam0)
    cfg = _train_config(args)
    try:
        lt, hist = retune_train(cfg, train, p0, model, test=test, timing=args.timing)
    except CertificateLost as exc:
        print(f"FAIL {exc}")
        return EXIT_FAIL
    noisy_psnr = float(np.mean([psnr(o.data, c.data) for c, o in test.pairs]))
    train_loss, _ = evaluate(cfg, train, lt, model)
    _, test_psnr = evaluate(cfg, test, lt, model)
    rows = [("noisy_psnr", noisy_psnr), ("final_test_psnr", test_psnr),
            ("final_train_loss", train_loss), ("inner_steps_per_outer", cfg.K * cfg.T)]
    rows += [(f"log_theta_{i}", v) for i, v in enumerate(lt)]
    out = _write_history(args, hist, rows)
    c, o = test.pairs[0]
    step, _, x0 = model.configure(model.prepare(c, o), np.exp(lt))
    from .bilevel import _forward
    x = step.readout(_forward(cfg, step, None, x0, np.exp(lt)), np.exp(lt))
    write_ppm(out / "clean.ppm", c.image())
    write_ppm(out / "noisy.ppm", o.image())
    write_ppm(out / "restored.ppm", x.reshape(c.shape))
    print(f"noisy PSNR {noisy_psnr:.3f} dB, final test PSNR {test_psnr:.3f} dB, "
          f"final train loss {train_loss:.6g}")
    return EXIT_OK


def cmd_restore_train(args) -> int:
    _check_sizes(args)
    from .forward_models import adjoint, anisotropic_blur, apply, random_mask
    from .pnp import WaveletThresholdDenoiser
    shape = (args.size, args.size, 3)
    if args.task == "inpaint":
        if not 0 < args.keep_prob <= 1:
            raise UsageError("--keep-prob must lie in (0, 1]")
        A = random_mask(shape, args.keep_prob, np.random.default_rng(args.seed + 1))
    else:
        if args.kernel_width < 1 or args.kernel_width % 2 == 0:
            raise UsageError("--kernel-width must be a positive odd integer")
        A = anisotropic_blur(shape, args.kernel_width)
    sig = float(args.noise.split(",")[0])
    train, test = _datasets(args, lambda rng, c: apply(A, c.data) + sig * rng.standard_normal(c.n))
    D = WaveletThresholdDenoiser(shape, args.levels, PriorKind(args.prior))
    model = PnPModel(A, D)
    cfg = _train_config(args)
    lt0 = np.log([args.sigma0, args.tau0])
    try:
        lt, hist = retune_train(cfg, train, lt0, model, test=test, timing=args.timing)
    except CertificateLost as exc:
        print(f"FAIL {exc}")
        return EXIT_FAIL
    base = float(np.mean([psnr(adjoint(A, o.data), c.data) for c, o in test.pairs]))
    _, test_psnr = evaluate(cfg, test, lt, model)
    sigma, tau = np.exp(lt)
    rows = [("baseline_psnr", base), ("final_test_psnr", test_psnr), ("sigma", sigma), ("tau", tau)]
    out = _write_history(args, hist, rows)
    c, o = test.pairs[0]
    from .bilevel import _forward
    step, _, x0 = model.configure(model.prepare(c, o), np.exp(lt))
    x = _forward(cfg, step, None, x0, np.exp(lt))
    write_ppm(out / "clean.ppm", c.image())
    write_ppm(out / "observed.ppm", adjoint(A, o.data).reshape(c.shape))
    write_ppm(out / "restored.ppm", x.reshape(c.shape))
    print(f"baseline PSNR {base:.3f} dB, final test PSNR {test_psnr:.3f} dB, "
          f"sigma {sigma:.6g}, tau {tau:.6g}")
    return EXIT_OK


# --- hypergrad-compare ----------------------------------------------------------

def _compare_problem(args):
    from .hypergrad import StateLoss
    from .scheme import QuadraticStep, SchemeSpec, scalar_model
    if args.model == "scalar":
        spec = SchemeSpec(scalar_model(1.0, 0.5), args.k, args.t)
        return spec, np.array([2.0]), StateLoss(np.zeros(1)), np.zeros(1)
    rng = np.random.default_rng(args.seed)
    if args.model == "quadratic":
        n = args.n
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        H = Q @ np.diag(np.linspace(1.0, 3.0, n)) @ Q.T
        step = QuadraticStep(H, rng.standard_normal(n), rng.standard_normal((n, 3)), tau=0.5)
        spec = SchemeSpec(step, args.k, args.t)
        return spec, np.exp(rng.uniform(-0.5, 0.5, 3)), StateLoss(rng.standard_normal(n)), np.zeros(n)
    side = int(round(math.sqrt(args.n)))
    if side * side != args.n or not _is_dyadic(side, 2):
        raise UsageError("--n must be a square of a multiple of 4 for the wavelet model")
    inst = bl.wavelet_instance(args.seed, K=args.k, T=args.t, shape=(side, side, 1))
    return inst.spec, inst.theta, inst.loss, inst.x0


def cmd_hypergrad_compare(args) -> int:
    from .hypergrad import compare
    if args.n > args.max_n:
        raise UsageError(f"DEQ-exact needs a dense {args.n}x{args.n} solve; --max-n is {args.max_n}")
    spec, theta, loss, x0 = _compare_problem(args)
    rep = compare(spec, theta, loss, x0, args.t, P=args.p_neumann)
    errs = {"g_deq": 0.0, "g_neumann": rep.err_neumann, "g_jfb": rep.err_jfb,
            "g_trunc": float(np.linalg.norm(rep.g_deq - rep.g_trunc)), "g_retune": rep.err_retune}
    bounds = {"g_jfb": rep.bound_lemma1, "g_retune": rep.bound_theorem2}
    rows = []
    print(f"{'estimator':<10} {'err':>12} {'bound':>12}  theta-space gradient")
    for name, g, glog in rep.rows():
        b = bounds.get(name, math.nan)
        print(f"{name:<10} {errs[name]:12.6g} {b:12.6g}  " + " ".join(f"{v:.10g}" for v in g))
        for i in range(g.size):
            rows.append((name, i, g[i], glog[i], errs[name], b))
    text = csv_text(("estimator", "index", "grad_theta", "grad_log", "err", "bound"), rows)
    if args.out:
        Path(args.out).write_text(text)
    if rep.err_jfb > rep.bound_lemma1 + 1e-9 or rep.err_retune > rep.bound_theorem2 + 1e-9:
        print("FAIL an estimator error exceeds its bound")
        return EXIT_FAIL
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--config", default=None, help="file of 'key = value' defaults")


def _train_flags(p, k, t):
    p.add_argument("--prior", choices=["b", "bc"], default="bc")
    p.add_argument("--k", type=int, default=k)
    p.add_argument("--t", type=int, default=t)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--n-train", type=int, default=24)
    p.add_argument("--n-test", type=int, default=4)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--eta", type=float, default=5e-2)
    p.add_argument("--estimator", choices=["retune", "trunc", "jfb", "deq"], default="retune")
    p.add_argument("--optimizer", choices=["adam", "gd"], default="adam")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--data-dir", default=None, help="directory of PPM/PGM images instead of synthetic data")
    p.add_argument("--timing", action="store_true", help="record wall_ms (breaks bitwise reproducibility)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retune", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds-check", help="certify the hypergradient error bounds")
    _common(p)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--t-max", type=int, default=10)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--matrices", type=int, default=1000)
    p.add_argument("--rate-tol", type=float, default=0.1)
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_bounds_check)

    p = sub.add_parser("denoise-train", help="learn wavelet prior weights")
    _common(p)
    _train_flags(p, 10, 10)
    p.add_argument("--noise", default="0.1,0.25,0.5", help="per-channel noise levels")
    p.add_argument("--lam0", type=float, default=0.5, help="initial scale weight")
    p.set_defaults(func=cmd_denoise_train)

    p = sub.add_parser("restore-train", help="learn PnP sigma and tau")
    _common(p)
    _train_flags(p, 10, 10)
    p.add_argument("--task", choices=["inpaint", "deblur"], default="inpaint")
    p.add_argument("--keep-prob", type=float, default=0.1)
    p.add_argument("--kernel-width", type=int, default=5)
    p.add_argument("--learn", choices=["sigma-tau"], default="sigma-tau")
    p.add_argument("--noise", default="0.05")
    p.add_argument("--sigma0", type=float, default=0.05)
    p.add_argument("--tau0", type=float, default=1.0)
    p.set_defaults(func=cmd_restore_train)

    p = sub.add_parser("hypergrad-compare", help="all estimators side by side")
    _common(p)
    p.add_argument("--model", choices=["scalar", "quadratic", "wavelet"], default="scalar")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--t", type=int, default=2)
    p.add_argument("--p-neumann", type=int, default=5)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--max-n", type=int, default=512)
    p.add_argument("--out", default="hypergrad.csv")
    p.set_defaults(func=cmd_hypergrad_compare)
    return parser


def _validate(args):
    for name in ("k", "t", "t_max", "instances", "epochs", "batch", "threads"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
    if getattr(args, "p_neumann", 0) < 0:
        raise UsageError("--p-neumann must be >= 0")
    if getattr(args, "matrices", 0) < 0:
        raise UsageError("--matrices must be >= 0")


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    if args.config:
        sp = parser._subparsers._group_actions[0].choices[args.command]
        try:
            conf = read_config(args.config)
        except (OSError, UsageError) as exc:
            print(f"retune: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        known = {a.dest: a for a in sp._actions}
        unknown = sorted(set(conf) - set(known))
        if unknown:
            print(f"retune: error: unknown config keys {unknown}", file=sys.stderr)
            return EXIT_USAGE
        defaults = {}
        for k, v in conf.items():
            act = known[k]
            if isinstance(act, argparse._StoreTrueAction):
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[k] = act.type(v) if act.type else v
                except ValueError:
                    print(f"retune: error: bad value for {k}: {v!r}", file=sys.stderr)
                    return EXIT_USAGE
                if act.choices is not None and defaults[k] not in act.choices:
                    print(f"retune: error: {k} must be one of {act.choices}", file=sys.stderr)
                    return EXIT_USAGE
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    try:
        _validate(args)
        return args.func(args)
    except UsageError as exc:
        print(f"retune: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
