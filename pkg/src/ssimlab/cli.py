"""Command-line front end.

Subcommands::

    ssimlab func-convergence   [--function f1 --function f2] [--method ...] [--out DIR]
    ssimlab image-convergence  [--image PATH] [--sizes 40,80,160,320] [--out DIR]
    ssimlab compare A.pgm B.pgm [--window-size K | --whole-image]
    ssimlab verify-bounds      [--trials 1000] [--seed 0]

Exit codes: 0 success, 1 numerical or runtime failure, 2 usage or config error.
Shared options may also come from ``--config FILE`` (flat ``key=value`` lines,
``#`` comments); flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .bounds import BoundPreconditionError, check_lower_bound, run_sweep
from .harness import (
    BUNDLED_IMAGE,
    ConvergenceRun,
    ExperimentConfig,
    RateFitError,
    run_function_experiment,
    run_image_experiment,
)
from .imageio import ImageFormatError, load_image
from .interpolate import KernelFitError, Method
from .similarity import StabilityConstants, WeightWindow, wssim

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("ssimlab")


class UsageError(Exception):
    pass


def _g(x: float) -> str:
    return f"{x:.6g}"


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _parse_lambda(text: str):
    return "auto" if text == "auto" else float(text)


# config key -> (argparse dest, converter); list-valued keys take comma lists
_CONFIG_KEYS = {
    "function": ("function", lambda s: [t for t in s.replace(" ", "").split(",") if t]),
    "method": ("method", lambda s: [t for t in s.replace(" ", "").split(",") if t]),
    "steps": ("steps", str),
    "eval_step": ("eval_step", float),
    "window_size": ("window_size", int),
    "window_anchor": ("window_anchor", str),
    "boundary": ("boundary", str),
    "c1": ("c1", float),
    "c2": ("c2", float),
    "kernel_shape": ("kernel_shape", float),
    "lambda": ("lam", _parse_lambda),
    "sinc": ("sinc", str),
    "seed": ("seed", int),
    "out": ("out", str),
    "threads": ("threads", int),
    "image": ("image", str),
    "sizes": ("sizes", str),
    "image_size": ("image_size", int),
    "prefilter": ("prefilter", lambda s: s.lower() in ("1", "true", "yes", "on")),
    "max_kernel_nodes": ("max_kernel_nodes", int),
}


def read_config(path) -> dict:
    """Parse a flat ``key=value`` file into argparse destinations."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        dest, conv = _CONFIG_KEYS[key]
        try:
            out[dest] = conv(value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def _experiment_flags(p: argparse.ArgumentParser, methods: list[str]) -> None:
    p.add_argument("--config", help="key=value file with defaults for these flags")
    p.add_argument("--method", action="append", choices=methods, help="repeatable; default: all")
    p.add_argument("--window-size", type=int)
    p.add_argument("--window-anchor", choices=["corner", "center"])
    p.add_argument("--boundary", choices=["renormalize", "clip"])
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: results)")
    p.add_argument("--threads", type=int, help="worker threads (default: $SSIMLAB_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssimlab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fc = sub.add_parser("func-convergence", help="interpolate analytic test functions on refining grids")
    _experiment_flags(fc, [m.value for m in (Method.BILINEAR, Method.BICUBIC, Method.WENDLAND, Method.MATERN)])
    fc.add_argument("--function", action="append", choices=["f1", "f2"], help="repeatable; default: f1 and f2")
    fc.add_argument("--steps", help="comma-separated node steps, coarse to fine")
    fc.add_argument("--eval-step", type=float)
    fc.add_argument("--kernel-shape", type=float)
    fc.add_argument("--lambda", dest="lam", type=_parse_lambda, help="kernel ridge parameter or 'auto'")
    fc.add_argument("--sinc", choices=["normalized", "unnormalized"])
    fc.add_argument("--max-kernel-nodes", type=int)

    ic = sub.add_parser("image-convergence", help="downsample an image and interpolate it back")
    _experiment_flags(ic, [Method.BILINEAR.value, Method.BICUBIC.value])
    ic.add_argument("--image", help=f"PGM or PNG file (default: bundled {BUNDLED_IMAGE.name})")
    ic.add_argument("--sizes", help="comma-separated coarse grid sizes, increasing")
    ic.add_argument("--image-size", type=int, help="side length the image is resampled to")
    ic.add_argument("--prefilter", action="store_true", default=None, help="box-filter before downsampling")

    cp = sub.add_parser("compare", help="similarity indices and bound diagnostics for two images")
    cp.add_argument("image_a")
    cp.add_argument("image_b")
    cp.add_argument("--window-size", type=int, default=22)
    cp.add_argument("--window-anchor", choices=["corner", "center"], default="center")
    cp.add_argument("--boundary", choices=["renormalize", "clip"], default="renormalize")
    cp.add_argument("--whole-image", action="store_true", help="use one window covering the whole image")
    cp.add_argument("--c1", type=float, default=1e-4)
    cp.add_argument("--c2", type=float, default=9e-4)
    cp.add_argument("--R", type=float, help="bound on local L2 norms (default: max pixel value)")

    vb = sub.add_parser("verify-bounds", help="randomized check of every bound and identity")
    vb.add_argument("--trials", type=int, default=1000)
    vb.add_argument("--size", type=int, default=16)
    vb.add_argument("--window-size", type=int, default=3)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--c1", type=float, default=1e-4)
    vb.add_argument("--c2", type=float, default=9e-4)
    return parser


def _merge(args: argparse.Namespace) -> argparse.Namespace:
    if getattr(args, "config", None):
        for dest, value in read_config(args.config).items():
            if not hasattr(args, dest):
                raise UsageError(f"config key for {dest!r} does not apply to {args.command}")
            if getattr(args, dest) is None:
                setattr(args, dest, value)
    return args


def _experiment_config(args: argparse.Namespace, target: str, **extra) -> ExperimentConfig:
    kw = dict(target=target, **extra)
    for dest, field in (
        ("window_size", "window_size"), ("window_anchor", "window_anchor"), ("boundary", "boundary"),
        ("c1", "c1"), ("c2", "c2"), ("seed", "seed"), ("threads", "threads"),
    ):
        if getattr(args, dest, None) is not None:
            kw[field] = getattr(args, dest)
    if args.method:
        kw["methods"] = tuple(args.method)
    try:
        return ExperimentConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _summary(runs: list[ConvergenceRun]) -> str:
    head = ["target", "method", "r_bar", "R_bar", "c_f", "c_fg", "C_f", "C_fg", "c_bar", "C_bar"]
    body = [
        [r.target, r.method] + [_g(v) for v in (r.r_bar, r.R_bar, r.c_f, r.c_fg, r.C_f, r.C_fg, r.c_bar, r.C_bar)]
        for r in runs
    ]
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in [head] + body]
    return "\n".join(lines)


def _write_runs(runs: list[ConvergenceRun], out: str) -> None:
    for run in runs:
        csv_path, _ = run.write(out)
        logger.info("wrote %s", csv_path)


def cmd_func_convergence(args: argparse.Namespace) -> int:
    extra = {}
    if args.steps is not None:
        extra["steps"] = tuple(_float_list(args.steps))
    for dest, field in (("eval_step", "eval_step"), ("kernel_shape", "kernel_shape"), ("lam", "lam"),
                        ("sinc", "sinc"), ("max_kernel_nodes", "max_kernel_nodes")):
        if getattr(args, dest) is not None:
            extra[field] = getattr(args, dest)
    functions = args.function or ["f1", "f2"]
    runs = []
    for fn in functions:
        cfg = _experiment_config(args, fn, **extra)
        runs.extend(run_function_experiment(cfg))
    _write_runs(runs, args.out or "results")
    print(_summary(runs))
    return EXIT_OK


def cmd_image_convergence(args: argparse.Namespace) -> int:
    extra = {}
    if args.sizes is not None:
        extra["image_sizes"] = tuple(_int_list(args.sizes))
    if args.image_size is not None:
        extra["image_size"] = args.image_size
    if args.prefilter is not None:
        extra["prefilter"] = args.prefilter
    if not args.method:
        args.method = [Method.BILINEAR.value, Method.BICUBIC.value]
    target = args.image or "bundled"
    if args.image and not Path(args.image).is_file():
        raise UsageError(f"no such image: {args.image}")
    runs = run_image_experiment(_experiment_config(args, target, **extra))
    _write_runs(runs, args.out or "results")
    print(_summary(runs))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        a, b = load_image(args.image_a), load_image(args.image_b)
    except (OSError, ImageFormatError) as exc:
        raise UsageError(str(exc)) from exc
    if a.shape != b.shape:
        raise UsageError(f"image sizes differ: {a.shape[0]}x{a.shape[1]} vs {b.shape[0]}x{b.shape[1]}")
    try:
        c = StabilityConstants(args.c1, args.c2)
        if args.whole_image:
            w = WeightWindow.whole_image(a.shape)
        else:
            w = WeightWindow.uniform(min(args.window_size, min(a.shape)), args.window_anchor, args.boundary)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rep = wssim(a, b, w, c)
    eq = check_lower_bound(a, b, w, c, args.R)
    k = rep.constants
    items = [
        ("SSIM", rep.ssim),
        ("W-SSIM", rep.wssim),
        ("L1", rep.l1),
        ("L2", rep.l2),
        ("c_fg", k.c_fg),
        ("C_fg", k.C_fg),
        ("lower_bound", eq.lower.lhs),
        ("dissim_weighted", eq.lower.rhs),
        ("upper_bound", eq.upper.rhs),
        ("R", eq.R),
        ("w_max", eq.w_max),
        ("c_prime", eq.c_prime),
        ("c_prime_optimal", eq.c_prime_optimal),
    ]
    print(f"window  {w.describe()}")
    for name, value in items:
        print(f"{name:<16}{_g(value)}")
    print(f"{'condition':<16}{'holds' if eq.condition_holds else 'fails'}")
    print(f"{'bounds':<16}{'hold' if eq.holds else 'VIOLATED'}")
    return EXIT_OK if eq.holds else EXIT_FAIL


def cmd_verify_bounds(args: argparse.Namespace) -> int:
    try:
        c = StabilityConstants(args.c1, args.c2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = run_sweep(args.trials, args.size, args.seed, args.window_size, c)
    for name in res.failures:
        status = "ok" if res.failures[name] == 0 else f"FAILED {res.failures[name]}"
        print(f"{name:<22}{status:<12}worst margin {_g(res.worst[name])}")
    print(f"{res.trials} trials: {'all checks passed' if res.ok else 'FAILURES'}")
    return EXIT_OK if res.ok else EXIT_FAIL


_COMMANDS = {
    "func-convergence": cmd_func_convergence,
    "image-convergence": cmd_image_convergence,
    "compare": cmd_compare,
    "verify-bounds": cmd_verify_bounds,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", UserWarning)
    try:
        return _COMMANDS[args.command](_merge(args))
    except UsageError as exc:
        print(f"ssimlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RateFitError, KernelFitError, BoundPreconditionError, FloatingPointError,
            ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        print(f"ssimlab: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
