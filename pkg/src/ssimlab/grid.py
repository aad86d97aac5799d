"""Rectangular grids, sampled fields, normalized quadrature and test functions.

Fields are sampled on tensor grids over a rectangle ``[a, b] x [c, d]`` and
stored as 2-D arrays indexed ``values[i, j] = f(x_i, y_j)``. All integrals
are taken against the normalized measure of the node set, i.e. a plain
average over nodes, which is the quadrature rule that makes the discrete
and continuous similarity indices coincide.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

__all__ = [
    "Domain2D",
    "GridSpec",
    "NodeLayout",
    "ScalarField2D",
    "SincConvention",
    "TestFunction",
    "psum",
    "sample",
    "mean",
    "covariance",
    "variance",
    "l1_distance",
    "l2_distance",
    "f1",
    "f2",
    "constant",
]

_DIVIDES_RTOL = 1e-9


def psum(a) -> float:
    """Pairwise sum of all entries of ``a``.

    numpy reduces contiguous 1-D data with a fixed pairwise tree, so the
    result does not depend on thread count.
    """
    return float(np.add.reduce(np.ascontiguousarray(a, dtype=np.float64).ravel()))


def _pmean(a) -> float:
    a = np.asarray(a)
    if a.size == 0:
        raise ValueError("empty field")
    return psum(a) / a.size


@dataclass(frozen=True)
class Domain2D:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a < self.b and self.c < self.d):
            raise ValueError(f"invalid domain [{self.a},{self.b}]x[{self.c},{self.d}]")

    @property
    def area(self) -> float:
        return (self.b - self.a) * (self.d - self.c)

    def contains(self, x, y, tol: float = 1e-12):
        x = np.asarray(x)
        y = np.asarray(y)
        tx = tol * max(1.0, abs(self.a), abs(self.b))
        ty = tol * max(1.0, abs(self.c), abs(self.d))
        return (x >= self.a - tx) & (x <= self.b + tx) & (y >= self.c - ty) & (y <= self.d + ty)


UNIT_SQUARE = Domain2D(0.0, 1.0, 0.0, 1.0)


class NodeLayout(str, Enum):
    VERTEX = "vertex"
    INTERIOR = "interior"


def _intervals(length: float, step: float) -> int:
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    m = length / step
    n = int(round(m))
    if n < 1 or abs(m - n) > _DIVIDES_RTOL * max(1.0, m):
        raise ValueError(f"step {step} does not divide side length {length}")
    return n


@dataclass(frozen=True)
class GridSpec:
    """Equispaced tensor grid over a domain.

    ``vertex`` layout includes the boundary nodes; ``interior`` drops them,
    leaving ``m - 1`` nodes per axis for ``m`` subintervals.
    """

    domain: Domain2D
    step_x: float
    step_y: float
    node_layout: NodeLayout = NodeLayout.VERTEX

    def __post_init__(self):
        object.__setattr__(self, "node_layout", NodeLayout(self.node_layout))
        mx = _intervals(self.domain.b - self.domain.a, self.step_x)
        my = _intervals(self.domain.d - self.domain.c, self.step_y)
        nx, ny = self._count(mx), self._count(my)
        if nx < 2 or ny < 2:
            raise ValueError(f"grid needs >= 2 nodes per axis, got {nx}x{ny}")

    @classmethod
    def uniform(cls, domain: Domain2D, step: float, node_layout="vertex") -> "GridSpec":
        return cls(domain, step, step, NodeLayout(node_layout))

    @classmethod
    def covering(cls, domain: Domain2D, step: float) -> "GridSpec":
        """Vertex grid of spacing ``step`` anchored at ``(a, c)`` whose last
        node is the first one at or beyond the upper domain edge."""
        nx = math.ceil((domain.b - domain.a) / step - _DIVIDES_RTOL)
        ny = math.ceil((domain.d - domain.c) / step - _DIVIDES_RTOL)
        ext = Domain2D(domain.a, domain.a + nx * step, domain.c, domain.c + ny * step)
        return cls(ext, step, step, NodeLayout.VERTEX)

    def _count(self, m: int) -> int:
        return m + 1 if self.node_layout is NodeLayout.VERTEX else m - 1

    @property
    def intervals(self) -> tuple[int, int]:
        return (
            _intervals(self.domain.b - self.domain.a, self.step_x),
            _intervals(self.domain.d - self.domain.c, self.step_y),
        )

    @property
    def shape(self) -> tuple[int, int]:
        mx, my = self.intervals
        return self._count(mx), self._count(my)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        mx, my = self.intervals
        dom = self.domain
        ix = np.arange(mx + 1, dtype=np.float64)
        iy = np.arange(my + 1, dtype=np.float64)
        xs = dom.a + ix * (dom.b - dom.a) / mx
        ys = dom.c + iy * (dom.d - dom.c) / my
        # pin the last node to the edge exactly
        xs[-1], ys[-1] = dom.b, dom.d
        if self.node_layout is NodeLayout.INTERIOR:
            xs, ys = xs[1:-1], ys[1:-1]
        return xs, ys

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = self.axes()
        return np.meshgrid(xs, ys, indexing="ij")


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    grid: GridSpec
    values: np.ndarray
    nonneg_checked: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.nonneg_checked and v.size and v.min() < 0:
            raise ValueError(f"field has negative values (min {v.min():g})")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def from_array(cls, values, domain: Domain2D = UNIT_SQUARE, nonneg_checked=False):
        """Wrap a pixel array as a vertex-layout field over ``domain``."""
        values = np.asarray(values, dtype=np.float64)
        p, q = values.shape
        grid = GridSpec(
            domain,
            (domain.b - domain.a) / (p - 1),
            (domain.d - domain.c) / (q - 1),
            NodeLayout.VERTEX,
        )
        return cls(grid, values, nonneg_checked)

    def with_values(self, values) -> "ScalarField2D":
        return ScalarField2D(self.grid, values, self.nonneg_checked)


class SincConvention(str, Enum):
    NORMALIZED = "normalized"
    UNNORMALIZED = "unnormalized"


Fn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TestFunction:
    """Analytic bivariate function with exact first and mixed partials."""

    __test__ = False  # not a pytest class

    id: str
    eval: Fn
    d_x: Fn | None = None
    d_y: Fn | None = None
    d_xy: Fn | None = None
    sinc_convention: SincConvention = SincConvention.NORMALIZED
    meta: dict = field(default_factory=dict)

    def __call__(self, x, y):
        return self.eval(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))

    @property
    def has_partials(self) -> bool:
        return self.d_x is not None and self.d_y is not None and self.d_xy is not None


def _sinc_pair(convention: SincConvention):
    """Return ``(s, ds)``: the sinc function and its derivative."""
    scale = math.pi if SincConvention(convention) is SincConvention.NORMALIZED else 1.0

    def s(x):
        t = scale * np.asarray(x, dtype=np.float64)
        out = np.ones_like(t)
        nz = t != 0
        out[nz] = np.sin(t[nz]) / t[nz]
        return out

    def ds(x):
        t = scale * np.asarray(x, dtype=np.float64)
        out = np.empty_like(t)
        small = np.abs(t) < 0.1
        ts = t[small]
        # Taylor series of (sin t / t)' ; truncation error < 1e-16 for |t| < 0.1
        out[small] = ts * (-1.0 / 3 + ts**2 * (1.0 / 30 + ts**2 * (-1.0 / 840 + ts**2 / 45360)))
        tl = t[~small]
        out[~small] = (np.cos(tl) - np.sin(tl) / tl) / tl
        return scale * out

    return s, ds


def f1(sinc_convention: SincConvention | str = SincConvention.NORMALIZED) -> TestFunction:
    """``2 (x y)^2 - sinc(x) sinc(y) + 1``."""
    conv = SincConvention(sinc_convention)
    s, ds = _sinc_pair(conv)

    def ev(x, y):
        return 2.0 * (x * y) ** 2 - s(x) * s(y) + 1.0

    def dx(x, y):
        return 4.0 * x * y**2 - ds(x) * s(y)

    def dy(x, y):
        return 4.0 * x**2 * y - s(x) * ds(y)

    def dxy(x, y):
        return 8.0 * x * y - ds(x) * ds(y)

    return TestFunction("f1", ev, dx, dy, dxy, conv)


def f2() -> TestFunction:
    """``exp(-(x + y)) - 3 x + y + 5``."""

    def ev(x, y):
        return np.exp(-(x + y)) - 3.0 * x + y + 5.0

    def dx(x, y):
        return -np.exp(-(x + y)) - 3.0

    def dy(x, y):
        return -np.exp(-(x + y)) + 1.0

    def dxy(x, y):
        return np.exp(-(x + y))

    return TestFunction("f2", ev, dx, dy, dxy)


def constant(value: float) -> TestFunction:
    zero = lambda x, y: np.zeros(np.broadcast(x, y).shape)  # noqa: E731
    return TestFunction(
        "custom",
        lambda x, y: np.full(np.broadcast(x, y).shape, float(value)),
        zero,
        zero,
        zero,
        meta={"constant": value},
    )


def sample(f: TestFunction | Callable, grid: GridSpec) -> ScalarField2D:
    X, Y = grid.mesh()
    vals = np.asarray(f(X, Y), dtype=np.float64)
    return ScalarField2D(grid, np.broadcast_to(vals, X.shape))


def _check_same_grid(f: ScalarField2D, g: ScalarField2D):
    if f.grid != g.grid or f.shape != g.shape:
        raise ValueError(f"grid mismatch: {f.grid} vs {g.grid}")


def mean(f: ScalarField2D) -> float:
    return _pmean(f.values)


def covariance(f: ScalarField2D, g: ScalarField2D) -> float:
    _check_same_grid(f, g)
    fc = f.values - mean(f)
    gc = g.values - mean(g)
    return _pmean(fc * gc)


def variance(f: ScalarField2D) -> float:
    return covariance(f, f)


def l2_distance(f: ScalarField2D, g: ScalarField2D) -> float:
    _check_same_grid(f, g)
    d = np.abs(f.values - g.values)
    m = float(d.max(initial=0.0))
    if m == 0.0 or not math.isfinite(m):
        return m
    # scale by the largest entry so squares neither underflow nor overflow
    d = d / m
    return m * math.sqrt(_pmean(d * d))


def l1_distance(f: ScalarField2D, g: ScalarField2D) -> float:
    _check_same_grid(f, g)
    return _pmean(np.abs(f.values - g.values))
