"""Acceptance gate: one test per headline criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from ssimlab.bounds import check_upper_bound, random_pair, run_sweep, universal_constant
from ssimlab.grid import UNIT_SQUARE, GridSpec, TestFunction, f1, sample
from ssimlab.harness import DEFAULT_STEPS, ExperimentConfig, fit_rate, run_function_experiment, run_image_experiment
from ssimlab.interpolate import NodeSet, bicubic_fit, bilinear_fit, cubic_matern, kernel_fit, wendland21
from ssimlab.similarity import WeightWindow, ssim_global, wssim_value

PUBLISHED_F2_RATES = {"bilinear": 4.0, "bicubic": 8.1, "wendland": 5.0, "matern": 9.3}
THEORY_EXPONENT = {"bilinear": 2.0, "bicubic": 6.0, "wendland": 5.0, "matern": 9.0}


@pytest.fixture(scope="module")
def function_runs():
    out = {}
    for target in ("f1", "f2"):
        t = time.perf_counter()
        runs = run_function_experiment(ExperimentConfig(target=target, threads=1))
        out[target] = (runs, time.perf_counter() - t)
    return out


@pytest.fixture(scope="module")
def image_runs():
    t = time.perf_counter()
    runs = run_image_experiment(ExperimentConfig(target="bundled", methods=("bilinear", "bicubic"), threads=1))
    return runs, time.perf_counter() - t


@pytest.fixture(scope="module")
def sweep():
    return run_sweep(trials=1000, size=16, seed=0)


def _all_runs(function_runs, image_runs):
    return function_runs["f1"][0] + function_runs["f2"][0] + image_runs[0]


def test_upper_bound_property(criterion, function_runs, image_runs):
    rng = np.random.default_rng(0)
    windows = [WeightWindow.uniform(3, "center", "renormalize"), WeightWindow.uniform(3, "corner", "clip")]
    worst = math.inf
    ok = True
    t = time.perf_counter()
    for i in range(1000):
        f, g = random_pair(rng, 16)
        for chk in (check_upper_bound(f, g), check_upper_bound(f, g, windows[i % 2])):
            rel = chk.slack / max(1.0, abs(chk.rhs))
            worst = min(worst, rel)
            ok &= rel >= -1e-12
    elapsed = time.perf_counter() - t
    rows = [r for run in _all_runs(function_runs, image_runs) for r in run.rows]
    for r in rows:
        for lhs, rhs in ((r.dissim_global, r.c_fg * r.l2sq), (r.dissim_weighted, r.C_fg * r.l2sq)):
            rel = (rhs - abs(lhs)) / max(1.0, abs(rhs))
            worst = min(worst, rel)
            ok &= rel >= -1e-12
    criterion(
        "upper bounds on 1000 random pairs and every harness row",
        ok and elapsed < 10.0,
        f"{len(rows)} rows, worst relative slack {worst:.3g}, sweep {elapsed:.2f}s",
    )


def test_lemma_identities(criterion, sweep):
    f = sweep.failures
    ok = f["identity_one_minus_S"] == 0 and f["identity_local"] == 0 and f["M_range"] == 0 and f["S_range"] == 0
    criterion(
        "1-S identity within 1e-10 relative; 0<=M<=1 and |S|<=1",
        ok,
        f"worst residual {-sweep.worst['identity_one_minus_S']:.3g} over {sweep.trials} trials",
    )


def test_lower_bound_and_sandwich(criterion, sweep):
    ok = sweep.failures["lower_bound"] == 0 and sweep.failures["sandwich"] == 0
    criterion(
        "lower bound on 1000 trials with verified R; sandwich for equal local means",
        ok,
        f"worst relative slack {sweep.worst['lower_bound']:.3g} / {sweep.worst['sandwich']:.3g}",
    )


def test_discrete_continuous_consistency(criterion):
    f = f1()
    g = bilinear_fit(sample(f, GridSpec.covering(UNIT_SQUARE, 0.1)))
    vals = []
    for n in (64, 128, 256, 512, 1024):
        grid = GridSpec.uniform(UNIT_SQUARE, 1 / n)
        vals.append(ssim_global(sample(f, grid), sample(g, grid)))
    deltas = np.abs(np.diff(vals))
    monotone = bool(np.all(np.diff(deltas) < 0))
    grid = GridSpec.uniform(UNIT_SQUARE, 1 / 64)
    F, G = sample(f, grid), sample(g, grid)
    gap = abs(wssim_value(F, G, WeightWindow.whole_image(F.shape)) - ssim_global(F, G))
    criterion(
        "SSIM self-convergence monotone; whole-domain W-SSIM equals SSIM",
        monotone and gap <= 1e-12,
        "deltas " + ", ".join(f"{d:.3g}" for d in deltas) + f"; window gap {gap:.3g}",
    )


def test_function_experiment_rates(criterion, function_runs):
    runs, elapsed = function_runs["f2"]
    rates = {r.method: r.r_bar for r in runs}
    ok = all(
        abs(rates[m] - PUBLISHED_F2_RATES[m]) <= 1.0 and rates[m] >= THEORY_EXPONENT[m] - 0.3
        for m in PUBLISHED_F2_RATES
    )
    criterion(
        "f2 rates within 1.0 of published values and above theory floors",
        ok and elapsed < 300,
        ", ".join(f"{m} {rates[m]:.3g}" for m in PUBLISHED_F2_RATES) + f"; {elapsed:.1f}s",
    )


def test_constant_ordering(criterion, function_runs, image_runs):
    c = universal_constant(ExperimentConfig().constants)
    ok = True
    ratios = []
    for run in _all_runs(function_runs, image_runs):
        for r in run.rows:
            ok &= r.c_fg <= r.c_f <= c and r.C_fg <= r.C_f <= c
        ok &= run.c_bar <= run.c_fg and run.C_bar <= run.C_fg
        ratios.append(run.c_f / run.c_bar)
    ok &= min(ratios) >= 1
    criterion(
        "c_fg <= c_f <= c, C_fg <= C_f <= c, c_bar <= mean c_fg, C_bar <= mean C_fg",
        ok,
        f"effectivity c_f/c_bar from {min(ratios):.3g} to {max(ratios):.3g}",
    )


def test_interpolation_engines(criterion):
    r = np.random.default_rng(1)
    x, y = r.random(50), r.random(50)
    grid = GridSpec.uniform(UNIT_SQUARE, 0.25)

    bil = TestFunction("bil", lambda x, y: 3 + 2 * x - y + 5 * x * y)
    e_bil = np.abs(bilinear_fit(sample(bil, grid))(x, y) - bil(x, y)).max()

    C = r.uniform(-1, 1, (4, 4))
    P = np.polynomial.polynomial
    cub = TestFunction(
        "cubic",
        lambda x, y: P.polyval2d(x, y, C),
        lambda x, y: P.polyval2d(x, y, P.polyder(C, axis=0)),
        lambda x, y: P.polyval2d(x, y, P.polyder(C, axis=1)),
        lambda x, y: P.polyval2d(x, y, P.polyder(P.polyder(C, axis=0), axis=1)),
    )
    e_cub = np.abs(bicubic_fit(sample(cub, grid), "exact", cub)(x, y) - cub(x, y)).max()

    kgrid = GridSpec.covering(UNIT_SQUARE, 0.05)
    S = sample(f1(), kgrid)
    X, Y = kgrid.mesh()
    e_ker = max(
        np.abs(kernel_fit(NodeSet.from_grid(kgrid), S.values, k, 0.0)(X, Y) - S.values).max()
        for k in (wendland21(), cubic_matern())
    )
    exact = wendland21()(0.5) == 0.1875 and cubic_matern()(0.0) == 15.0
    criterion(
        "bilinear/bicubic reproduction, kernel nodal interpolation, kernel values",
        e_bil <= 1e-12 and e_cub <= 1e-10 and e_ker <= 1e-9 and exact,
        f"errors {e_bil:.2g} / {e_cub:.2g} / {e_ker:.2g}",
    )


def test_image_experiment_rates(criterion, image_runs):
    runs, elapsed = image_runs
    rates = {r.method: r.r_bar for r in runs}
    ok = 1.0 <= rates["bilinear"] <= 2.0 and 1.2 <= rates["bicubic"] <= 2.5 and rates["bicubic"] > rates["bilinear"]
    criterion(
        "image rates: bilinear in [1, 2], bicubic in [1.2, 2.5], bicubic faster",
        ok and elapsed < 60,
        f"bilinear {rates['bilinear']:.3g}, bicubic {rates['bicubic']:.3g}; {elapsed:.1f}s",
    )


def test_rate_fit_oracle(criterion):
    hs = [math.sqrt(2) * s / 2 for s in DEFAULT_STEPS]
    exact_err = max(abs(fit_rate(hs, [c * h**p for h in hs]) - p) for c, p in ((1.0, 2.0), (3.0, 4.0), (0.01, 9.3)))
    r = np.random.default_rng(2024)
    noisy = abs(fit_rate(hs, [h**2 * r.uniform(0.9, 1.1) for h in hs]) - 2.0)
    criterion(
        "rate fit: exact power law to 1e-8, noisy data within 0.15",
        exact_err <= 1e-8 and noisy <= 0.15,
        f"exact error {exact_err:.2g}, noisy error {noisy:.3g}",
    )


def test_determinism_across_threads(criterion):
    def csvs(threads):
        cfg = ExperimentConfig(target="f2", seed=7, threads=threads)
        img = ExperimentConfig(target="bundled", methods=("bilinear", "bicubic"), image_sizes=(40, 80), seed=7,
                               threads=threads)
        return [r.to_csv() + r.metadata_text() for r in run_function_experiment(cfg) + run_image_experiment(img)]

    a, b, c = csvs(1), csvs(4), csvs(1)
    criterion("byte-identical CSV for 1 and 4 threads and on rerun", a == b == c, f"{len(a)} runs compared")
