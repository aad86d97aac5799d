"""Refinement sweeps: interpolate, compare with SSIM / W-SSIM / L2, fit rates.

A run records, for one interpolation method and a ladder of grid steps,
the squared L2 error and both dissimilarity indices, then fits the log-log
slopes against the fill distance and the smallest constants ``c_bar``,
``C_bar`` that bound the dissimilarities by the squared L2 error.
"""
from __future__ import annotations

import io
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from threadpoolctl import threadpool_limits

from .grid import UNIT_SQUARE, GridSpec, ScalarField2D, SincConvention, TestFunction, f1, f2, sample
from .imageio import load_image
from .interpolate import (
    DerivativeSource,
    Method,
    NodeSet,
    bicubic_fit,
    bilinear_fit,
    cubic_matern,
    kernel_fit,
    wendland21,
)
from .similarity import Anchor, BoundaryPolicy, StabilityConstants, WeightWindow, wssim

__all__ = [
    "ConvergenceRun",
    "ExperimentConfig",
    "RateFitError",
    "Row",
    "fit_optimal_constant",
    "fit_rate",
    "run_function_experiment",
    "run_image_experiment",
    "DEFAULT_STEPS",
    "EXTENDED_STEPS",
]

logger = logging.getLogger(__name__)

DEFAULT_STEPS = (0.4, 0.2, 0.1, 0.05)
EXTENDED_STEPS = tuple(2.0 ** (-i + 2) / 5 for i in range(1, 10))
UNDERFLOW = 1e-15
CSV_HEADER = "method,step,h,l2sq,dissim_global,dissim_weighted,c_fg,C_fg"
BUNDLED_IMAGE = Path(__file__).parent / "data" / "cameraman256.pgm"


class RateFitError(ValueError):
    pass


def fit_rate(hs, errs) -> float:
    """Least-squares slope of ``log(err)`` against ``log(h)``."""
    hs = np.asarray(hs, dtype=np.float64)
    errs = np.asarray(errs, dtype=np.float64)
    if hs.shape != errs.shape:
        raise ValueError("hs and errs must have the same length")
    if hs.size < 2:
        raise RateFitError("need ≥ 2 refinement levels to fit a rate")
    if np.any(hs <= 0) or np.any(errs <= 0) or not np.all(np.isfinite(errs)):
        raise RateFitError("rate fit needs positive, finite step sizes and errors")
    lx, ly = np.log(hs), np.log(errs)
    lx = lx - lx.mean()
    if not np.any(lx):
        raise RateFitError("need ≥ 2 distinct step sizes to fit a rate")
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def fit_optimal_constant(hs, dissims, l2sqs) -> float:
    """Smallest ``C`` with ``dissim <= C * l2sq`` at every recorded step."""
    dissims = np.asarray(dissims, dtype=np.float64)
    l2sqs = np.asarray(l2sqs, dtype=np.float64)
    if not (len(hs) == len(dissims) == len(l2sqs)):
        raise ValueError("hs, dissims and l2sqs must have matching lengths")
    if len(dissims) == 0:
        raise ValueError("no steps recorded")
    zero = l2sqs <= 0
    if np.any(zero & (dissims > 0)):
        raise ValueError("zero L2 error with nonzero dissimilarity")
    if np.all(zero):
        return 0.0
    return float((dissims[~zero] / l2sqs[~zero]).max())


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run. Fields mirror the CLI flags."""

    target: str = "f2"  # f1, f2 or an image path
    methods: tuple[Method, ...] = (Method.BILINEAR, Method.BICUBIC, Method.WENDLAND, Method.MATERN)
    steps: tuple[float, ...] = DEFAULT_STEPS
    eval_step: float = 1e-2
    window_size: int = 22
    window_anchor: Anchor = Anchor.CENTER
    boundary: BoundaryPolicy = BoundaryPolicy.RENORMALIZE
    c1: float = 1e-4
    c2: float = 9e-4
    kernel_shape: float = 1.0
    lam: float = 0.0
    sinc: SincConvention = SincConvention.NORMALIZED
    image_sizes: tuple[int, ...] = (40, 80, 160, 320)
    image_size: int = 256
    prefilter: bool = False
    max_kernel_nodes: int = 6000
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(self, "steps", tuple(float(s) for s in self.steps))
        object.__setattr__(self, "image_sizes", tuple(int(n) for n in self.image_sizes))
        object.__setattr__(self, "window_anchor", Anchor(self.window_anchor))
        object.__setattr__(self, "boundary", BoundaryPolicy(self.boundary))
        object.__setattr__(self, "sinc", SincConvention(self.sinc))
        if not self.methods:
            raise ValueError("no interpolation methods selected")
        if not self.steps or any(s <= 0 for s in self.steps):
            raise ValueError("steps must be positive")
        if any(a <= b for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("steps must be strictly decreasing")
        if any(a >= b for a, b in zip(self.image_sizes, self.image_sizes[1:])):
            raise ValueError("image sizes must be strictly increasing")
        if self.eval_step <= 0 or self.window_size < 1:
            raise ValueError("eval_step and window_size must be positive")
        StabilityConstants(self.c1, self.c2)

    @property
    def constants(self) -> StabilityConstants:
        return StabilityConstants(self.c1, self.c2)

    @property
    def is_function(self) -> bool:
        return self.target in ("f1", "f2")

    def test_function(self) -> TestFunction:
        if self.target == "f1":
            return f1(self.sinc)
        if self.target == "f2":
            return f2()
        raise ValueError(f"{self.target!r} is not an analytic test function")

    def window(self, shape: tuple[int, int]) -> WeightWindow:
        # shrink to fit grids smaller than the window
        k = min(self.window_size, min(shape))
        return WeightWindow.uniform(k, self.window_anchor, self.boundary)

    def worker_count(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        return max(1, int(os.environ.get("SSIMLAB_THREADS", "1")))


@dataclass(frozen=True)
class Row:
    method: str
    step: float
    h: float
    l2sq: float
    dissim_global: float
    dissim_weighted: float
    c_fg: float
    C_fg: float
    c_f: float
    C_f: float

    def csv(self) -> str:
        return ",".join(
            [self.method]
            + [repr(float(v)) for v in (self.step, self.h, self.l2sq, self.dissim_global, self.dissim_weighted, self.c_fg, self.C_fg)]
        )


@dataclass
class ConvergenceRun:
    target: str
    method: str
    rows: list[Row]
    r_bar: float = math.nan
    R_bar: float = math.nan
    c_bar: float = math.nan
    C_bar: float = math.nan
    metadata: dict = field(default_factory=dict)

    @property
    def c_f(self) -> float:
        return float(np.mean([r.c_f for r in self.rows]))

    @property
    def c_fg(self) -> float:
        return float(np.mean([r.c_fg for r in self.rows]))

    @property
    def C_f(self) -> float:
        return float(np.mean([r.C_f for r in self.rows]))

    @property
    def C_fg(self) -> float:
        return float(np.mean([r.C_fg for r in self.rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            buf.write(r.csv() + "\n")
        return buf.getvalue()

    def metadata_text(self) -> str:
        lines = [f"{k}={_fmt_meta(v)}" for k, v in self.metadata.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir, stem: str | None = None) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{Path(self.target).stem}_{self.method}"
        csv_path = out / f"{stem}.csv"
        meta_path = out / f"{stem}.meta.txt"
        csv_path.write_text(self.to_csv())
        meta_path.write_text(self.metadata_text())
        return csv_path, meta_path


def _fmt_meta(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt_meta(x) for x in v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


def _clamp(d: float) -> float:
    # rounding can leave dissimilarities a hair below zero
    return 0.0 if -1e-14 < d < 0 else d


def _finalize(run: ConvergenceRun, strict: bool) -> ConvergenceRun:
    rows = run.rows
    hs = [r.h for r in rows]
    run.c_bar = fit_optimal_constant(hs, [r.dissim_global for r in rows], [r.l2sq for r in rows])
    run.C_bar = fit_optimal_constant(hs, [r.dissim_weighted for r in rows], [r.l2sq for r in rows])
    for attr, key in (("r_bar", "dissim_global"), ("R_bar", "dissim_weighted")):
        keep = [r for r in rows if getattr(r, key) > UNDERFLOW]
        dropped = [r.step for r in rows if getattr(r, key) <= UNDERFLOW]
        if dropped:
            run.metadata[f"excluded_{key}"] = dropped
        try:
            setattr(run, attr, fit_rate([r.h for r in keep], [getattr(r, key) for r in keep]))
        except RateFitError as exc:
            if len(rows) < 2:
                msg = "need ≥ 2 refinement levels to fit a rate"
            elif len(keep) < 2:
                msg = f"{key} is at or below {UNDERFLOW:g} on all but {len(keep)} level(s); nothing to fit"
            else:
                msg = str(exc)
            run.metadata[f"rate_error_{key}"] = msg
            if strict:
                raise RateFitError(f"{run.target}/{run.method}: {msg}") from exc
    run.metadata.update(
        r_bar=run.r_bar, R_bar=run.R_bar, c_bar=run.c_bar, C_bar=run.C_bar,
        c_f_mean=run.c_f, c_fg_mean=run.c_fg, C_f_mean=run.C_f, C_fg_mean=run.C_fg,
    )
    return run


def _base_metadata(cfg: ExperimentConfig, window: WeightWindow, method: Method) -> dict:
    meta = {
        "target": cfg.target,
        "method": method.value,
        "c1": cfg.c1,
        "c2": cfg.c2,
        "window_size": window.k,
        "window_anchor": window.anchor.value,
        "boundary": window.boundary_policy.value,
        "w_max": window.w_max,
        "seed": cfg.seed,
    }
    if method in (Method.WENDLAND, Method.MATERN):
        meta.update(kernel_shape=cfg.kernel_shape, **{"lambda": cfg.lam})
    if method is Method.BICUBIC:
        meta["derivatives"] = "exact" if cfg.is_function else "fd_4x4"
    return meta


def _row(method: Method, step: float, h: float, F: ScalarField2D, G: ScalarField2D,
         window: WeightWindow, c: StabilityConstants) -> Row:
    rep = wssim(F, G, window, c)
    k = rep.constants
    return Row(
        method.value, step, h, rep.l2**2, _clamp(rep.dissim_global), _clamp(rep.dissim_weighted),
        k.c_fg, k.C_fg, k.c_f, k.C_f,
    )


def _fit_function(method: Method, f: TestFunction, step: float, cfg: ExperimentConfig):
    grid = GridSpec.covering(UNIT_SQUARE, step)
    samples = sample(f, grid)
    if method is Method.BILINEAR:
        return bilinear_fit(samples)
    if method is Method.BICUBIC:
        return bicubic_fit(samples, DerivativeSource.EXACT, f)
    kernel = wendland21(cfg.kernel_shape) if method is Method.WENDLAND else cubic_matern(cfg.kernel_shape)
    return kernel_fit(NodeSet.from_grid(grid), samples.values, kernel, cfg.lam)


def _map_ordered(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_function_experiment(cfg: ExperimentConfig, strict: bool = True) -> list[ConvergenceRun]:
    """One :class:`ConvergenceRun` per configured method on an analytic target."""
    f = cfg.test_function()
    eval_grid = GridSpec.uniform(UNIT_SQUARE, cfg.eval_step)
    if cfg.eval_step >= min(cfg.steps):
        warnings.warn(
            f"evaluation step {cfg.eval_step:g} is not finer than the smallest node step {min(cfg.steps):g}",
            stacklevel=2,
        )
    F = sample(f, eval_grid)
    X, Y = eval_grid.mesh()
    window = cfg.window(F.shape)
    c = cfg.constants
    runs = []
    with threadpool_limits(limits=1):
        for method in cfg.methods:
            meta = _base_metadata(cfg, window, method)
            meta.update(sinc=cfg.sinc.value, eval_step=cfg.eval_step, steps=list(cfg.steps))
            skipped = []

            def one(step, method=method):
                if method in (Method.WENDLAND, Method.MATERN):
                    n = math.ceil(1 / step - 1e-9) + 1
                    if n * n > cfg.max_kernel_nodes:
                        return None
                try:
                    interp = _fit_function(method, f, step, cfg)
                except Exception as exc:
                    raise RuntimeError(f"{method.value} failed at step {step:g}: {exc}") from exc
                G = F.with_values(interp(X, Y))
                return _row(method, step, math.sqrt(2) * step / 2, F, G, window, c)

            rows = []
            for step, row in zip(cfg.steps, _map_ordered(one, cfg.steps, cfg.worker_count())):
                if row is None:
                    skipped.append(step)
                else:
                    rows.append(row)
            if skipped:
                meta["skipped_steps"] = skipped
                logger.info("%s: skipped steps %s (node cap %d)", method.value, skipped, cfg.max_kernel_nodes)
            run = ConvergenceRun(cfg.target, method.value, rows, metadata=meta)
            runs.append(_finalize(run, strict))
    return runs


def _prepare_image(cfg: ExperimentConfig) -> ScalarField2D:
    path = BUNDLED_IMAGE if cfg.target in ("bundled", "cameraman") else Path(cfg.target)
    img = load_image(path)
    n = cfg.image_size
    if img.shape != (n, n):
        warnings.warn(f"image {path} is {img.shape[0]}x{img.shape[1]}; resampling to {n}x{n}", stacklevel=3)
        grid = GridSpec.uniform(UNIT_SQUARE, 1 / (n - 1))
        X, Y = grid.mesh()
        img = ScalarField2D(grid, np.clip(bilinear_fit(img)(X, Y), 0, 1), nonneg_checked=True)
    return img


def downsample(img: ScalarField2D, n: int, prefilter: bool = False) -> ScalarField2D:
    """Sample the bilinear model of ``img`` at the nodes of an ``n x n`` grid.

    No anti-alias filter is applied unless ``prefilter`` is set, in which
    case a box filter of the size ratio smooths the image first.
    """
    values = img.values
    ratio = img.shape[0] / n
    if prefilter and ratio > 1:
        values = ndimage.uniform_filter(values, size=max(1, round(ratio)), mode="nearest")
    grid = GridSpec.uniform(UNIT_SQUARE, 1 / (n - 1))
    X, Y = grid.mesh()
    return ScalarField2D(grid, bilinear_fit(img.with_values(values))(X, Y))


def run_image_experiment(
    cfg: ExperimentConfig,
    strict: bool = True,
    reconstruct=None,
) -> list[ConvergenceRun]:
    """Downsample an image, interpolate back to full size, and measure decay.

    ``reconstruct(method, coarse, X, Y)`` may replace the interpolation step
    (used to check degenerate runs).
    """
    img = _prepare_image(cfg)
    X, Y = img.grid.mesh()
    window = cfg.window(img.shape)
    c = cfg.constants
    methods = [m for m in cfg.methods if m in (Method.BILINEAR, Method.BICUBIC)]
    if not methods:
        raise ValueError("image experiments support bilinear and bicubic only")
    runs = []
    with threadpool_limits(limits=1):
        for method in methods:
            meta = _base_metadata(cfg, window, method)
            meta.update(image=str(cfg.target), image_sizes=list(cfg.image_sizes),
                        downsample="bilinear point sampling", prefilter=cfg.prefilter)

            def one(n, method=method):
                coarse = downsample(img, n, cfg.prefilter)
                if reconstruct is not None:
                    values = reconstruct(method, coarse, X, Y)
                elif method is Method.BILINEAR:
                    values = bilinear_fit(coarse)(X, Y)
                else:
                    values = bicubic_fit(coarse, DerivativeSource.FD_4X4)(X, Y)
                G = img.with_values(np.clip(values, 0.0, 1.0))
                step = 1.0 / n
                return _row(method, step, math.sqrt(2) * step / 2, img, G, window, c)

            rows = _map_ordered(one, cfg.image_sizes, cfg.worker_count())
            run = ConvergenceRun(Path(str(cfg.target)).stem, method.value, rows, metadata=meta)
            runs.append(_finalize(run, strict))
    return runs
