"""Bilinear, Hermite bicubic and kernel-based interpolation on the plane.

The two gridded engines work cell by cell in local coordinates
``u = (x - x_i) / hx``, ``v = (y - y_j) / hy``; cells are half-open, so a
point on an interior grid line belongs to the cell that starts there.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from .grid import Domain2D, GridSpec, ScalarField2D, TestFunction

__all__ = [
    "BicubicInterpolant",
    "BilinearInterpolant",
    "DerivativeSource",
    "Interpolant",
    "KernelFitError",
    "KernelInterpolant",
    "KernelSpec",
    "Method",
    "NodeSet",
    "bicubic_fit",
    "bilinear_fit",
    "cubic_matern",
    "fd_derivatives",
    "fill_distance",
    "kernel_fit",
    "wendland21",
]

logger = logging.getLogger(__name__)


class Method(str, Enum):
    BILINEAR = "bilinear"
    BICUBIC = "bicubic"
    WENDLAND = "wendland"
    MATERN = "matern"
    KERNEL = "kernel"


@dataclass(frozen=True, eq=False)
class NodeSet:
    points: np.ndarray
    domain: Domain2D
    pairwise_distinct: bool = False

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("empty node set")
        if not np.all(self.domain.contains(pts[:, 0], pts[:, 1])):
            raise ValueError("node outside the domain")
        if self.pairwise_distinct and _has_duplicates(pts):
            raise ValueError("node set has duplicate points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_grid(cls, grid: GridSpec) -> "NodeSet":
        X, Y = grid.mesh()
        return cls(np.column_stack([X.ravel(), Y.ravel()]), grid.domain, True)

    def __len__(self):
        return len(self.points)


def _has_duplicates(pts: np.ndarray) -> bool:
    if len(pts) < 2:
        return False
    d, _ = cKDTree(pts).query(pts, k=2)
    return bool(np.any(d[:, 1] == 0.0))


def fill_distance(X: NodeSet, dom: Domain2D, probe_grid: GridSpec) -> float:
    """Largest distance from a probe point to its nearest node."""
    if len(X) == 0:
        raise ValueError("empty node set")
    PX, PY = probe_grid.mesh()
    probes = np.column_stack([PX.ravel(), PY.ravel()])
    probes = probes[dom.contains(probes[:, 0], probes[:, 1])]
    d, _ = cKDTree(X.points).query(probes, k=1)
    return float(d.max())


class Interpolant:
    """Common evaluation interface: ``interp(x, y)`` on broadcastable arrays."""

    method: Method
    nodes: NodeSet
    metadata: dict

    def __call__(self, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        out = self._eval(x.ravel(), y.ravel())
        return out.reshape(x.shape)

    def _eval(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def fill_distance(self, probe_grid: GridSpec | None = None) -> float:
        if "fill_distance" in self.metadata and probe_grid is None:
            return self.metadata["fill_distance"]
        if probe_grid is None:
            raise ValueError("probe grid required for scattered nodes")
        return fill_distance(self.nodes, self.nodes.domain, probe_grid)


class _GridInterpolant(Interpolant):
    def __init__(self, samples: ScalarField2D):
        self.grid = samples.grid
        self.xs, self.ys = samples.grid.axes()
        self.nodes = NodeSet.from_grid(samples.grid)
        self.domain = Domain2D(self.xs[0], self.xs[-1], self.ys[0], self.ys[-1])
        self.hx = np.diff(self.xs)
        self.hy = np.diff(self.ys)
        self.metadata = {}
        if np.allclose(self.hx, self.hx[0]) and np.allclose(self.hy, self.hx[0]):
            self.metadata["fill_distance"] = math.sqrt(2) * float(self.hx[0]) / 2

    def _locate(self, x, y):
        if not np.all(self.domain.contains(x, y, tol=1e-10)):
            bad = ~self.domain.contains(x, y, tol=1e-10)
            raise ValueError(
                f"{int(bad.sum())} evaluation point(s) outside the interpolation domain, "
                f"e.g. ({x[bad][0]:g}, {y[bad][0]:g})"
            )
        i = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        j = np.clip(np.searchsorted(self.ys, y, side="right") - 1, 0, len(self.ys) - 2)
        u = (x - self.xs[i]) / self.hx[i]
        v = (y - self.ys[j]) / self.hy[j]
        return i, j, u, v


class BilinearInterpolant(_GridInterpolant):
    """Per-cell ``c0 + c1 u + c2 v + c3 u v`` matching the four corner values."""

    method = Method.BILINEAR

    # rows: corners (0,0), (0,1), (1,0), (1,1) of the unit cell; columns: 1, u, v, uv
    SYSTEM = np.array(
        [[1, 0, 0, 0], [1, 0, 1, 0], [1, 1, 0, 0], [1, 1, 1, 1]], dtype=np.float64
    )

    def __init__(self, samples: ScalarField2D):
        super().__init__(samples)
        F = samples.values
        f00, f01, f10, f11 = F[:-1, :-1], F[:-1, 1:], F[1:, :-1], F[1:, 1:]
        # closed-form solution of SYSTEM @ c = (f00, f01, f10, f11)
        self.coeffs = np.stack([f00, f10 - f00, f01 - f00, f11 - f10 - f01 + f00], axis=-1)

    def _eval(self, x, y):
        i, j, u, v = self._locate(x, y)
        c = self.coeffs[i, j]
        return c[:, 0] + c[:, 1] * u + c[:, 2] * v + c[:, 3] * u * v


def bilinear_fit(samples: ScalarField2D) -> BilinearInterpolant:
    if min(samples.shape) < 2:
        raise ValueError("bilinear interpolation needs at least 2x2 nodes")
    return BilinearInterpolant(samples)


class DerivativeSource(str, Enum):
    EXACT = "exact"
    FD_4X4 = "fd_4x4"


def fd_derivatives(samples: ScalarField2D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Second-order finite-difference estimates of ``f_x, f_y, f_xy`` at the nodes.

    Centered differences inside the grid, second-order one-sided differences
    on the border rows and columns; ``f_xy`` differentiates ``f_x`` along y.
    """
    xs, ys = samples.grid.axes()
    F = samples.values
    fx = np.gradient(F, xs, axis=0, edge_order=2)
    fy = np.gradient(F, ys, axis=1, edge_order=2)
    fxy = np.gradient(fx, ys, axis=1, edge_order=2)
    return fx, fy, fxy


# Hermite basis: p(t) = [1 t t^2 t^3] @ _HERMITE @ [p0, p1, p0', p1']
_HERMITE = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [-3, 3, -2, -1], [2, -2, 1, 1]], dtype=np.float64
)


class BicubicInterpolant(_GridInterpolant):
    """Per-cell tensor cubic matching values, ``f_x``, ``f_y`` and ``f_xy`` at
    the four cell corners."""

    method = Method.BICUBIC

    def __init__(self, samples: ScalarField2D, fx, fy, fxy, source: DerivativeSource):
        super().__init__(samples)
        self.metadata["derivatives"] = DerivativeSource(source).value
        F = samples.values
        hx = self.hx[:, None]
        hy = self.hy[None, :]

        def corners(a):
            return a[:-1, :-1], a[:-1, 1:], a[1:, :-1], a[1:, 1:]

        f00, f01, f10, f11 = corners(F)
        u00, u01, u10, u11 = (d * hx for d in corners(fx))
        v00, v01, v10, v11 = (d * hy for d in corners(fy))
        w00, w01, w10, w11 = (d * hx * hy for d in corners(fxy))
        G = np.stack(
            [
                np.stack([f00, f01, v00, v01], -1),
                np.stack([f10, f11, v10, v11], -1),
                np.stack([u00, u01, w00, w01], -1),
                np.stack([u10, u11, w10, w11], -1),
            ],
            -2,
        )
        # A = H G H^T, p(u, v) = [1 u u^2 u^3] A [1 v v^2 v^3]^T
        self.coeffs = np.einsum("ab,ijbc,dc->ijad", _HERMITE, G, _HERMITE)

    def _eval(self, x, y):
        i, j, u, v = self._locate(x, y)
        U = np.stack([np.ones_like(u), u, u * u, u * u * u], -1)
        V = np.stack([np.ones_like(v), v, v * v, v * v * v], -1)
        return np.einsum("na,nab,nb->n", U, self.coeffs[i, j], V)


def bicubic_fit(
    samples: ScalarField2D,
    derivs: DerivativeSource | str = DerivativeSource.FD_4X4,
    f: TestFunction | None = None,
) -> BicubicInterpolant:
    """Hermite bicubic interpolant.

    With ``derivs="exact"`` the partials come from ``f``; otherwise they are
    estimated from the samples by :func:`fd_derivatives`.
    """
    source = DerivativeSource(derivs)
    if source is DerivativeSource.EXACT:
        if f is None or not f.has_partials:
            raise ValueError("exact derivatives need a TestFunction with partials")
        if min(samples.shape) < 2:
            raise ValueError("bicubic interpolation needs at least 2x2 nodes")
        X, Y = samples.grid.mesh()
        fx, fy, fxy = (np.broadcast_to(np.asarray(d(X, Y), dtype=np.float64), X.shape) for d in (f.d_x, f.d_y, f.d_xy))
    else:
        if min(samples.shape) < 4:
            raise ValueError("finite-difference bicubic interpolation needs at least 4x4 nodes")
        fx, fy, fxy = fd_derivatives(samples)
    return BicubicInterpolant(samples, fx, fy, fxy, source)


@dataclass(frozen=True)
class KernelSpec:
    """Radial kernel ``K(x, y) = radial(shape * |x - y|)``."""

    id: str
    radial: Callable[[np.ndarray], np.ndarray]
    shape: float = 1.0
    tau: float = math.nan
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.shape > 0:
            raise ValueError(f"kernel shape must be positive, got {self.shape}")

    def __call__(self, r):
        return self.radial(self.shape * np.asarray(r, dtype=np.float64))


def _wendland21(r):
    r = np.asarray(r, dtype=np.float64)
    t = np.maximum(1.0 - r, 0.0)
    return t**4 * (4.0 * r + 1.0)


def _cubic_matern(r):
    r = np.asarray(r, dtype=np.float64)
    return np.exp(-r) * (15.0 + r * (15.0 + r * (6.0 + r)))


def wendland21(shape: float = 1.0) -> KernelSpec:
    """Wendland kernel ``(1 - r)_+^4 (4 r + 1)``, native space of order 5/2 in 2-D."""
    return KernelSpec("wendland21", _wendland21, shape, 2.5)


def cubic_matern(shape: float = 1.0) -> KernelSpec:
    """Cubic Matern kernel ``exp(-r) (15 + 15 r + 6 r^2 + r^3)``, order 9/2 in 2-D."""
    return KernelSpec("cubic_matern", _cubic_matern, shape, 4.5)


class KernelFitError(RuntimeError):
    pass


class KernelInterpolant(Interpolant):
    _CHUNK = 4096

    def __init__(self, nodes: NodeSet, alpha: np.ndarray, kernel: KernelSpec, lam: float, method: Method):
        self.nodes = nodes
        self.alpha = alpha
        self.kernel = kernel
        self.method = method
        self.metadata = {"kernel": kernel.id, "shape": kernel.shape, "lambda": lam}

    def _eval(self, x, y):
        pts = np.column_stack([x, y])
        out = np.empty(len(pts))
        X = self.nodes.points
        for s in range(0, len(pts), self._CHUNK):
            block = pts[s : s + self._CHUNK]
            D = np.sqrt(((block[:, None, :] - X[None, :, :]) ** 2).sum(-1))
            # extended-precision accumulation: alpha can be large and the sum cancels
            out[s : s + self._CHUNK] = (self.kernel(D).astype(np.longdouble) @ self.alpha).astype(np.float64)
        return out


def kernel_matrix(X: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    D = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    K = kernel(D)
    # exact symmetry regardless of evaluation order
    iu = np.triu_indices(len(X), 1)
    K[(iu[1], iu[0])] = K[iu]
    return K


def kernel_fit(
    X: NodeSet,
    values,
    k: KernelSpec,
    lam: float | str = 0.0,
    refine_steps: int = 3,
) -> KernelInterpolant:
    """Solve ``(K + lam I) alpha = values`` by Cholesky and return the interpolant.

    ``lam="auto"`` uses ``1e-12 * trace(K) / n``. A few steps of iterative
    refinement with extended-precision residuals tighten the nodal residual
    on ill-conditioned systems; coefficients are kept in ``np.longdouble``.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    pts = X.points
    if len(vals) != len(pts):
        raise ValueError(f"{len(vals)} values for {len(pts)} nodes")
    if _has_duplicates(pts):
        raise ValueError("kernel interpolation needs pairwise distinct nodes")
    K = kernel_matrix(pts, k)
    if lam == "auto":
        lam = 1e-12 * float(np.trace(K)) / len(pts)
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"regularization must be >= 0, got {lam}")
    A = K + lam * np.eye(len(pts)) if lam else K
    try:
        cf = linalg.cho_factor(A, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        cond = np.linalg.cond(A)
        raise KernelFitError(
            f"Cholesky factorization of the {len(pts)}x{len(pts)} kernel matrix failed "
            f"(condition estimate {cond:.3e}); try a positive lambda"
        ) from exc
    # mixed-precision refinement: residuals in extended precision drive the
    # nodal mismatch well below what double arithmetic alone allows
    A_ext = A.astype(np.longdouble)
    v_ext = vals.astype(np.longdouble)
    alpha = linalg.cho_solve(cf, vals).astype(np.longdouble)
    for _ in range(refine_steps):
        r = v_ext - A_ext @ alpha
        alpha = alpha + linalg.cho_solve(cf, r.astype(np.float64))
    method = {"wendland21": Method.WENDLAND, "cubic_matern": Method.MATERN}.get(k.id, Method.KERNEL)
    return KernelInterpolant(X, alpha, k, lam, method)
