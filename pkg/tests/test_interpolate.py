import math

import numpy as np
import pytest

from ssimlab.grid import UNIT_SQUARE, Domain2D, GridSpec, ScalarField2D, TestFunction, f1, f2, sample
from ssimlab.interpolate import (
    BilinearInterpolant,
    KernelFitError,
    KernelSpec,
    NodeSet,
    bicubic_fit,
    bilinear_fit,
    cubic_matern,
    fd_derivatives,
    fill_distance,
    kernel_fit,
    kernel_matrix,
    wendland21,
)


def probe(n=37, domain=UNIT_SQUARE, seed=0):
    r = np.random.default_rng(seed)
    return (r.uniform(domain.a, domain.b, n), r.uniform(domain.c, domain.d, n))


def polynomial(coeffs):
    """Tensor polynomial sum_{a,b} C[a,b] x^a y^b with exact partials."""
    C = np.asarray(coeffs, dtype=np.float64)
    P = np.polynomial.polynomial

    def ev(x, y):
        return P.polyval2d(x, y, C)

    def dx(x, y):
        return P.polyval2d(x, y, P.polyder(C, axis=0))

    def dy(x, y):
        return P.polyval2d(x, y, P.polyder(C, axis=1))

    def dxy(x, y):
        return P.polyval2d(x, y, P.polyder(P.polyder(C, axis=0), axis=1))

    return TestFunction("poly", ev, dx, dy, dxy)


# bilinear

def test_bilinear_reproduces_bilinear_polynomials():
    f = polynomial([[3, -1], [2, 5]])  # 3 + 2x - y + 5xy
    g = bilinear_fit(sample(f, GridSpec.uniform(UNIT_SQUARE, 0.2)))
    x, y = probe()
    np.testing.assert_allclose(g(x, y), f(x, y), rtol=0, atol=1e-12)


def test_bilinear_interpolates_nodes():
    grid = GridSpec.covering(UNIT_SQUARE, 0.4)
    S = sample(f1(), grid)
    X, Y = grid.mesh()
    np.testing.assert_allclose(bilinear_fit(S)(X, Y), S.values, rtol=0, atol=1e-12)


def test_bilinear_midpoint_of_x_squared():
    g = bilinear_fit(sample(lambda x, y: x * x, GridSpec.covering(UNIT_SQUARE, 0.4)))
    assert g(0.2, 0.1) == pytest.approx(0.08, abs=1e-15)


def test_bilinear_closed_form_solves_the_corner_system(rng):
    S = ScalarField2D.from_array(rng.random((2, 2)))
    g = BilinearInterpolant(S)
    F = S.values
    rhs = np.array([F[0, 0], F[0, 1], F[1, 0], F[1, 1]])
    np.testing.assert_allclose(g.coeffs[0, 0], np.linalg.solve(BilinearInterpolant.SYSTEM, rhs), atol=1e-15)


def test_grid_interpolant_rejects_points_outside_domain():
    g = bilinear_fit(sample(f2(), GridSpec.uniform(UNIT_SQUARE, 0.25)))
    with pytest.raises(ValueError, match="outside"):
        g(np.array([0.5, 1.01]), np.array([0.5, 0.5]))


def test_cell_lookup_is_half_open_with_closed_right_edge():
    g = bilinear_fit(sample(lambda x, y: np.abs(x - 0.5), GridSpec.uniform(UNIT_SQUARE, 0.5)))
    # x = 0.5 belongs to the right cell; x = 1 falls back to the last cell
    assert g(0.5, 0.3) == 0.0
    assert g(1.0, 1.0) == 0.5
    assert g(0.75, 0.0) == 0.25


# bicubic

@pytest.mark.parametrize("seed", range(3))
def test_bicubic_reproduces_tensor_cubics(seed):
    C = np.random.default_rng(seed).uniform(-2, 2, (4, 4))
    f = polynomial(C)
    g = bicubic_fit(sample(f, GridSpec.uniform(UNIT_SQUARE, 0.25)), "exact", f)
    x, y = probe(seed=seed)
    np.testing.assert_allclose(g(x, y), f(x, y), rtol=0, atol=1e-10)


@pytest.mark.parametrize("derivs", ["exact", "fd_4x4"])
def test_bicubic_interpolates_nodes(derivs):
    grid = GridSpec.uniform(UNIT_SQUARE, 0.2)
    S = sample(f1(), grid)
    X, Y = grid.mesh()
    np.testing.assert_allclose(bicubic_fit(S, derivs, f1())(X, Y), S.values, rtol=0, atol=1e-10)


X3Y3 = np.zeros((4, 4))
X3Y3[3, 3] = 1.0


def hermite_1d(t, p0, p1, m0, m1, h):
    """Cubic Hermite on [0, 1] with slopes scaled to a cell of width h."""
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1


def tensor_hermite_oracle(f, x0, x1, y0, y1, x, y):
    """Hermite along x for f and f_y at both cell rows, then along y."""
    hx, hy = x1 - x0, y1 - y0
    u, v = (x - x0) / hx, (y - y0) / hy

    def along_x(fun, dfun, yy):
        return hermite_1d(u, fun(x0, yy), fun(x1, yy), dfun(x0, yy), dfun(x1, yy), hx)

    p0 = along_x(f.eval, f.d_x, y0)
    p1 = along_x(f.eval, f.d_x, y1)
    m0 = along_x(f.d_y, f.d_xy, y0)
    m1 = along_x(f.d_y, f.d_xy, y1)
    return hermite_1d(v, p0, p1, m0, m1, hy)


@pytest.mark.parametrize(
    "f",
    [
        polynomial(X3Y3),
        TestFunction(
            "exp_sin",
            lambda x, y: np.exp(x) * np.sin(3 * y),
            lambda x, y: np.exp(x) * np.sin(3 * y),
            lambda x, y: 3 * np.exp(x) * np.cos(3 * y),
            lambda x, y: 3 * np.exp(x) * np.cos(3 * y),
        ),
    ],
    ids=["x3y3", "exp_sin"],
)
def test_bicubic_matches_one_dimensional_hermite_oracle(f):
    grid = GridSpec.uniform(Domain2D(0, 1, 0, 0.5), 0.25)
    g = bicubic_fit(sample(f, grid), "exact", f)
    x = np.linspace(0.25, 0.5, 7)
    y = np.linspace(0.25, 0.5, 7)[:, None]
    expect = tensor_hermite_oracle(f, 0.25, 0.5, 0.25, 0.5, x, y)
    np.testing.assert_allclose(g(x, y), expect, rtol=0, atol=1e-12)


def test_x3y3_polynomial_fixture_is_x3y3():
    f = polynomial(X3Y3)
    assert f(0.5, 2.0) == pytest.approx(0.125 * 8.0)


def test_fd_derivatives_are_second_order():
    f = f2()
    errs = []
    for s in (0.1, 0.05):
        grid = GridSpec.uniform(UNIT_SQUARE, s)
        X, Y = grid.mesh()
        fx, fy, fxy = fd_derivatives(sample(f, grid))
        errs.append(max(np.abs(fx - f.d_x(X, Y)).max(), np.abs(fy - f.d_y(X, Y)).max(), np.abs(fxy - f.d_xy(X, Y)).max()))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.3)


def test_fd_bicubic_needs_four_by_four():
    with pytest.raises(ValueError):
        bicubic_fit(sample(f2(), GridSpec.uniform(UNIT_SQUARE, 0.5)), "fd_4x4")


# kernels

def test_wendland_values():
    k = wendland21()
    assert k(0.0) == 1.0
    assert k(1.0) == 0.0
    assert k(1.5) == 0.0
    assert k(0.5) == 0.1875


def test_matern_values():
    k = cubic_matern()
    assert k(0.0) == 15.0
    assert k(1.0) == pytest.approx(math.exp(-1) * 37, rel=1e-15)


def test_kernel_shape_scales_distance():
    assert wendland21(2.0)(0.25) == wendland21(1.0)(0.5)
    with pytest.raises(ValueError):
        KernelSpec("bad", lambda r: r, shape=0.0)


@pytest.mark.parametrize("kernel", [wendland21(), cubic_matern()], ids=["wendland", "matern"])
def test_single_node_kernel_system(kernel):
    X = NodeSet(np.array([[0.3, 0.6]]), UNIT_SQUARE, True)
    g = kernel_fit(X, [2.5], kernel)
    assert g.alpha[0] == pytest.approx(2.5 / kernel(0.0), rel=1e-15)
    assert g(0.3, 0.6) == pytest.approx(2.5, rel=1e-15)


@pytest.mark.parametrize("kernel", [wendland21(), cubic_matern()], ids=["wendland", "matern"])
@pytest.mark.parametrize("step", [0.2, 0.1])
def test_kernel_interpolates_node_data(kernel, step):
    grid = GridSpec.covering(UNIT_SQUARE, step)
    S = sample(f1(), grid)
    g = kernel_fit(NodeSet.from_grid(grid), S.values, kernel)
    X, Y = grid.mesh()
    np.testing.assert_allclose(g(X, Y), S.values, rtol=0, atol=1e-9)


def test_kernel_scattered_nodes(rng):
    pts = rng.random((60, 2))
    X = NodeSet(pts, UNIT_SQUARE, True)
    vals = f2()(pts[:, 0], pts[:, 1])
    g = kernel_fit(X, vals, wendland21(), lam="auto")
    np.testing.assert_allclose(g(pts[:, 0], pts[:, 1]), vals, atol=1e-6)


def test_kernel_matrix_is_exactly_symmetric(rng):
    K = kernel_matrix(rng.random((40, 2)), cubic_matern(3.0))
    assert np.array_equal(K, K.T)


def test_duplicate_nodes_rejected():
    pts = np.array([[0.1, 0.1], [0.1, 0.1]])
    with pytest.raises(ValueError):
        NodeSet(pts, UNIT_SQUARE, pairwise_distinct=True)
    with pytest.raises(ValueError):
        kernel_fit(NodeSet(pts, UNIT_SQUARE), [1.0, 2.0], wendland21())


def test_kernel_fit_failure_is_reported():
    # the distance kernel has a zero diagonal, so Cholesky must fail
    pts = np.array([[0.5, 0.5], [0.5, 0.6], [0.1, 0.2]])
    with pytest.raises(KernelFitError, match="lambda"):
        kernel_fit(NodeSet(pts, UNIT_SQUARE), [1.0, 1.0, 0.0], KernelSpec("distance", lambda r: r))


def test_nodes_outside_domain_rejected():
    with pytest.raises(ValueError):
        NodeSet(np.array([[1.5, 0.5]]), UNIT_SQUARE)


# fill distance

def test_fill_distance_single_center_node():
    probe_grid = GridSpec.uniform(UNIT_SQUARE, 0.01)
    X = NodeSet(np.array([[0.5, 0.5]]), UNIT_SQUARE)
    assert fill_distance(X, UNIT_SQUARE, probe_grid) == pytest.approx(math.sqrt(2) / 2, abs=0.01)


def test_fill_distance_equispaced_grid():
    grid = GridSpec.uniform(UNIT_SQUARE, 0.1)
    h = fill_distance(NodeSet.from_grid(grid), UNIT_SQUARE, GridSpec.uniform(UNIT_SQUARE, 0.005))
    assert h == pytest.approx(math.sqrt(2) * 0.1 / 2, rel=1e-9)
    assert bilinear_fit(sample(f2(), grid)).fill_distance() == pytest.approx(0.0707, abs=1e-4)


def test_fill_distance_zero_when_nodes_are_the_probes():
    probe_grid = GridSpec.uniform(UNIT_SQUARE, 0.05)
    assert fill_distance(NodeSet.from_grid(probe_grid), UNIT_SQUARE, probe_grid) == 0.0
