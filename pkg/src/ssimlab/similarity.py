"""Global SSIM, windowed local statistics, the local SSIM map and W-SSIM.

The global index uses the two-factor form ``M * S`` with a luminance factor
``M = (2 mu_f mu_g + c1) / (mu_f^2 + mu_g^2 + c1)`` and a contrast/structure
factor ``S = (2 s_fg + c2) / (s_ff + s_gg + c2)``. Means and (co)variances are
averages over the nodes of the fields, so for sampled functions the index is
a quadrature approximation of its continuous counterpart.

Dissimilarities ``1 - SSIM`` are evaluated through

    1 - M S = (1 - S) + S (1 - M),
    1 - S = var(f - g) / (s_ff + s_gg + c2),
    1 - M = (mu_f - mu_g)^2 / (mu_f^2 + mu_g^2 + c1),

which keeps full relative accuracy when the two fields are close.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import correlate2d

from .grid import GridSpec, ScalarField2D, TestFunction, _check_same_grid, _pmean, sample

if TYPE_CHECKING:
    from .bounds import BoundConstants

__all__ = [
    "Anchor",
    "BoundaryPolicy",
    "GlobalStats",
    "LocalStats",
    "SimilarityReport",
    "StabilityConstants",
    "WeightWindow",
    "cssim_approx",
    "dissimilarity",
    "global_stats",
    "local_stats",
    "ssim_global",
    "wssim",
]


@dataclass(frozen=True)
class StabilityConstants:
    c1: float = 1e-4
    c2: float = 9e-4

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError(f"stability constants must be positive, got c1={self.c1}, c2={self.c2}")

    @classmethod
    def for_range(cls, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03):
        return cls((k1 * data_range) ** 2, (k2 * data_range) ** 2)


DEFAULT_CONSTANTS = StabilityConstants()


class Anchor(str, Enum):
    CORNER = "corner"
    CENTER = "center"


class BoundaryPolicy(str, Enum):
    RENORMALIZE = "renormalize"
    CLIP_CONSTANT = "clip"


@dataclass(frozen=True, eq=False)
class WeightWindow:
    """A ``k x k`` non-negative filter with unit sum.

    With ``corner`` anchoring the window of pixel ``(i, j)`` covers rows
    ``i .. i+k-1``; with ``center`` anchoring it covers ``i-k//2 .. i-k//2+k-1``
    (for even ``k`` the extra row/column lies before the pixel).

    ``renormalize`` clips the window at the image border and rescales the
    remaining weights to unit sum, so every pixel gets a local SSIM value.
    ``clip`` only evaluates pixels whose window fits entirely.
    """

    weights: np.ndarray
    anchor: Anchor = Anchor.CENTER
    boundary_policy: BoundaryPolicy = BoundaryPolicy.RENORMALIZE

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise ValueError(f"weights must be a square k x k array, got shape {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        total = w.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "anchor", Anchor(self.anchor))
        object.__setattr__(self, "boundary_policy", BoundaryPolicy(self.boundary_policy))

    @classmethod
    def uniform(cls, k: int, anchor="center", boundary_policy="renormalize") -> "WeightWindow":
        if k < 1:
            raise ValueError(f"window size must be >= 1, got {k}")
        return cls(np.full((k, k), 1.0 / (k * k)), Anchor(anchor), BoundaryPolicy(boundary_policy))

    @classmethod
    def whole_image(cls, shape: tuple[int, int]) -> "WeightWindow":
        """Uniform window that covers the entire image from every pixel.

        Local statistics then equal the global ones at each pixel.
        """
        k = 2 * max(shape) - 1
        return cls.uniform(k, Anchor.CENTER, BoundaryPolicy.RENORMALIZE)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def offset(self) -> int:
        return 0 if self.anchor is Anchor.CORNER else self.k // 2

    @property
    def w_max(self) -> float:
        return float(self.weights.max())

    def _row_ranges(self, n: int):
        # window rows of pixel i, clipped to the image, in window-local coordinates
        o, k = self.offset, self.k
        for i in range(n):
            lo, hi = i - o, i - o + k
            yield max(0, -lo), k - max(0, hi - n)

    def effective_w_max(self, shape: tuple[int, int]) -> float:
        """Largest single weight any pixel sees after the boundary policy is applied."""
        p, q = shape
        if self.boundary_policy is BoundaryPolicy.CLIP_CONSTANT:
            return self.w_max
        if np.all(self.weights == self.weights[0, 0]):
            # uniform: the smallest clipped block holds the largest weight
            rows = min(r1 - r0 for r0, r1 in self._row_ranges(p))
            cols = min(c1 - c0 for c0, c1 in self._row_ranges(q))
            return 1.0 / (rows * cols)
        best = 0.0
        for r0, r1 in set(self._row_ranges(p)):
            for c0, c1 in set(self._row_ranges(q)):
                block = self.weights[r0:r1, c0:c1]
                s = block.sum()
                if s > 0:
                    best = max(best, float(block.max() / s))
        return best

    def describe(self) -> str:
        return f"{self.k}x{self.k} {self.anchor.value}-anchored, boundary={self.boundary_policy.value}"


@dataclass(frozen=True)
class GlobalStats:
    mu_f: float
    mu_g: float
    sigma_ff: float
    sigma_gg: float
    sigma_fg: float
    sigma_hh: float
    c1: float
    c2: float

    @property
    def M(self) -> float:
        return (2 * self.mu_f * self.mu_g + self.c1) / (self.mu_f * self.mu_f + self.mu_g * self.mu_g + self.c1)

    @property
    def S(self) -> float:
        return (2 * self.sigma_fg + self.c2) / (self.sigma_ff + self.sigma_gg + self.c2)

    @property
    def one_minus_M(self) -> float:
        return (self.mu_f - self.mu_g) * (self.mu_f - self.mu_g) / (self.mu_f * self.mu_f + self.mu_g * self.mu_g + self.c1)

    @property
    def one_minus_S(self) -> float:
        return self.sigma_hh / (self.sigma_ff + self.sigma_gg + self.c2)

    @property
    def ssim(self) -> float:
        return self.M * self.S

    @property
    def dissimilarity(self) -> float:
        return self.one_minus_S + self.S * self.one_minus_M


def _require_nonneg(*fields: ScalarField2D):
    for f in fields:
        if f.values.size and f.values.min() < 0:
            raise ValueError(f"field has negative values (min {f.values.min():g})")


def global_stats(
    f: ScalarField2D, g: ScalarField2D, c: StabilityConstants = DEFAULT_CONSTANTS
) -> GlobalStats:
    """Means, variances and covariance of two fields under the node-average measure."""
    _check_same_grid(f, g)
    mu_f, mu_g = _pmean(f.values), _pmean(g.values)
    fc = f.values - mu_f
    gc = g.values - mu_g
    hc = fc - gc
    return GlobalStats(
        mu_f,
        mu_g,
        _pmean(fc * fc),
        _pmean(gc * gc),
        _pmean(fc * gc),
        _pmean(hc * hc),
        c.c1,
        c.c2,
    )


def ssim_global(
    f: ScalarField2D,
    g: ScalarField2D,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    require_nonneg: bool = False,
) -> float:
    if require_nonneg or f.nonneg_checked or g.nonneg_checked:
        _require_nonneg(f, g)
    return global_stats(f, g, c).ssim


def dissimilarity(
    f: ScalarField2D, g: ScalarField2D, c: StabilityConstants = DEFAULT_CONSTANTS
) -> float:
    """``1 - ssim_global(f, g)`` evaluated without cancellation."""
    return global_stats(f, g, c).dissimilarity


@dataclass(frozen=True, eq=False)
class LocalStats:
    """Per-pixel weighted statistics.

    ``mask`` marks the pixels where the local quantities are defined; under
    the ``clip`` policy pixels whose window leaves the image are masked out
    and hold NaN.
    """

    mu_f: np.ndarray
    mu_g: np.ndarray
    sigma_ff: np.ndarray
    sigma_gg: np.ndarray
    sigma_fg: np.ndarray
    mu_h: np.ndarray
    sigma_hh: np.ndarray
    mask: np.ndarray

    def M(self, c: StabilityConstants) -> np.ndarray:
        return (2 * self.mu_f * self.mu_g + c.c1) / (self.mu_f * self.mu_f + self.mu_g * self.mu_g + c.c1)

    def S(self, c: StabilityConstants) -> np.ndarray:
        return (2 * self.sigma_fg + c.c2) / (self.sigma_ff + self.sigma_gg + c.c2)

    def q_map(self, c: StabilityConstants) -> np.ndarray:
        return self.M(c) * self.S(c)

    def one_minus_q(self, c: StabilityConstants) -> np.ndarray:
        one_minus_S = self.sigma_hh / (self.sigma_ff + self.sigma_gg + c.c2)
        one_minus_M = self.mu_h * self.mu_h / (self.mu_f * self.mu_f + self.mu_g * self.mu_g + c.c1)
        return one_minus_S + self.S(c) * one_minus_M


def _window_sum(a: np.ndarray, w: WeightWindow) -> np.ndarray:
    o, k = w.offset, w.k
    padded = np.pad(a, ((o, k - 1 - o), (o, k - 1 - o)))
    w00 = w.weights[0, 0]
    if np.all(w.weights == w00):
        # uniform window: separable box sums, O(k) per pixel instead of O(k^2)
        rows = sliding_window_view(padded, k, axis=0).sum(axis=-1)
        return sliding_window_view(rows, k, axis=1).sum(axis=-1) * w00
    return correlate2d(padded, w.weights, mode="valid")


def _valid_mask(shape: tuple[int, int], w: WeightWindow) -> np.ndarray:
    if w.boundary_policy is BoundaryPolicy.RENORMALIZE:
        return np.ones(shape, dtype=bool)
    o, k = w.offset, w.k

    def axis(n):
        i = np.arange(n)
        return (i - o >= 0) & (i - o + k <= n)

    return np.outer(axis(shape[0]), axis(shape[1]))


def local_stats(f: ScalarField2D, g: ScalarField2D, w: WeightWindow) -> LocalStats:
    _check_same_grid(f, g)
    p, q = f.shape
    if w.k > max(p, q) * 2 - 1 or (
        w.boundary_policy is BoundaryPolicy.CLIP_CONSTANT and w.k > min(p, q)
    ):
        raise ValueError(f"window of size {w.k} is larger than the {p}x{q} image")
    mask = _valid_mask((p, q), w)
    if not mask.any():
        raise ValueError(f"window of size {w.k} does not fit in the {p}x{q} image")

    # shifting by the global mean first limits cancellation in E[xy] - E[x]E[y]
    mf, mg = _pmean(f.values), _pmean(g.values)
    F = f.values - mf
    G = g.values - mg
    H = F - G
    norm = _window_sum(np.ones((p, q)), w)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = lambda a: _window_sum(a, w) / norm  # noqa: E731
        mu_F, mu_G, mu_H = mean(F), mean(G), mean(H)
        s_ff = np.maximum(mean(F * F) - mu_F * mu_F, 0.0)
        s_gg = np.maximum(mean(G * G) - mu_G * mu_G, 0.0)
        s_fg = mean(F * G) - mu_F * mu_G
        s_hh = np.maximum(mean(H * H) - mu_H * mu_H, 0.0)
    out = [mu_F + mf, mu_G + mg, s_ff, s_gg, s_fg, mu_H + (mf - mg), s_hh]
    if not mask.all():
        for a in out:
            a[~mask] = np.nan
    return LocalStats(*out, mask=mask)


@dataclass(frozen=True, eq=False)
class SimilarityReport:
    ssim: float
    wssim: float
    q_map: np.ndarray
    l1: float
    l2: float
    dissim_global: float
    dissim_weighted: float
    constants: "BoundConstants"
    window: WeightWindow
    c: StabilityConstants


def wssim(
    f: ScalarField2D,
    g: ScalarField2D,
    w: WeightWindow,
    c: StabilityConstants = DEFAULT_CONSTANTS,
) -> SimilarityReport:
    """Mean of the local SSIM map over the pixels where it is defined."""
    from .bounds import compute_constants
    from .grid import l1_distance, l2_distance

    ls = local_stats(f, g, w)
    q = ls.q_map(c)
    gs = global_stats(f, g, c)
    return SimilarityReport(
        ssim=gs.ssim,
        wssim=_pmean(q[ls.mask]),
        q_map=q,
        l1=l1_distance(f, g),
        l2=l2_distance(f, g),
        dissim_global=gs.dissimilarity,
        dissim_weighted=_pmean(ls.one_minus_q(c)[ls.mask]),
        constants=compute_constants(f, g, w, c, local=ls, glob=gs),
        window=w,
        c=c,
    )


def wssim_value(
    f: ScalarField2D,
    g: ScalarField2D,
    w: WeightWindow,
    c: StabilityConstants = DEFAULT_CONSTANTS,
) -> float:
    ls = local_stats(f, g, w)
    return _pmean(ls.q_map(c)[ls.mask])


def cssim_approx(
    f_exact: TestFunction | Callable,
    g: Callable,
    eval_grid: GridSpec,
    c: StabilityConstants = DEFAULT_CONSTANTS,
) -> float:
    """Approximate the continuous SSIM of two functions by the SSIM of their
    samples on ``eval_grid``.

    This is node-average quadrature of the defining integrals; for bounded
    continuous inputs the bias is O(step).
    """
    return ssim_global(sample(f_exact, eval_grid), sample(g, eval_grid), c)
