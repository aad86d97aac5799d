"""Constants and inequalities linking SSIM dissimilarity to the L2 error.

Upper bounds::

    |1 - SSIM(f, g)|   <= c_fg ||f - g||^2 <= c_f ||f - g||^2 <= c ||f - g||^2
    |1 - W-SSIM(f, g)| <= C_fg ||f - g||^2 <= C_f ||f - g||^2 <= c ||f - g||^2

with ``c_fg = 4 / (s_ff + s_gg + c2) + 1 / (mu_f^2 + mu_g^2 + c1)``,
``c_f = 4 / (s_ff + c2) + 1 / (mu_f^2 + c1)``, ``c = (4 c1 + c2) / (c1 c2)``
and ``C_fg``, ``C_f`` the pixelwise maxima of the same expressions built
from windowed statistics.

Lower bound, for ``R`` bounding the local L2 norms of both fields::

    (||f - g||^2 - mean_x (mu_f(x) - mu_g(x))^2) / (4 R^2 + c2) <= |1 - W-SSIM(f, g)|
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .grid import ScalarField2D, _pmean, l1_distance, l2_distance
from .similarity import (
    DEFAULT_CONSTANTS,
    GlobalStats,
    LocalStats,
    StabilityConstants,
    WeightWindow,
    global_stats,
    local_stats,
)

__all__ = [
    "BoundCheck",
    "BoundConstants",
    "BoundPreconditionError",
    "EquivalenceReport",
    "LemmaReport",
    "check_lower_bound",
    "check_upper_bound",
    "compute_constants",
    "global_constants",
    "lemma_identities",
    "local_constants",
    "universal_constant",
]

REL_TOL = 1e-12


class BoundPreconditionError(ValueError):
    """A bound was requested for inputs that violate its hypotheses."""


@dataclass(frozen=True)
class BoundConstants:
    c_fg: float
    c_f: float
    c: float
    C_fg: float = math.nan
    C_f: float = math.nan
    R: float = math.nan
    c_prime: float = math.nan
    w_max: float = math.nan

    def chain_holds(self) -> bool:
        ok = _le(self.c_fg, self.c_f) and _le(self.c_f, self.c)
        if not math.isnan(self.C_fg):
            ok = ok and _le(self.C_fg, self.C_f) and _le(self.C_f, self.c)
        return ok


def _le(a: float, b: float) -> bool:
    return a - b <= REL_TOL * max(1.0, abs(b))


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.slack >= -REL_TOL * max(1.0, abs(self.rhs))


def universal_constant(c: StabilityConstants) -> float:
    return (4 * c.c1 + c.c2) / (c.c1 * c.c2)


def _c_fg(mu_f, mu_g, s_ff, s_gg, c: StabilityConstants):
    return 4 / (s_ff + s_gg + c.c2) + 1 / (mu_f * mu_f + mu_g * mu_g + c.c1)


def _c_f(mu_f, s_ff, c: StabilityConstants):
    return 4 / (s_ff + c.c2) + 1 / (mu_f * mu_f + c.c1)


def global_constants(
    f: ScalarField2D,
    g: ScalarField2D,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    glob: GlobalStats | None = None,
) -> BoundConstants:
    gs = glob if glob is not None else global_stats(f, g, c)
    return BoundConstants(
        c_fg=float(_c_fg(gs.mu_f, gs.mu_g, gs.sigma_ff, gs.sigma_gg, c)),
        c_f=float(_c_f(gs.mu_f, gs.sigma_ff, c)),
        c=universal_constant(c),
    )


def local_constants(
    f: ScalarField2D,
    g: ScalarField2D,
    w: WeightWindow,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    local: LocalStats | None = None,
) -> tuple[float, float]:
    """Return ``(C_fg, C_f)``, the maxima over pixels of the local constants."""
    ls = local if local is not None else local_stats(f, g, w)
    m = ls.mask
    C_fg = _c_fg(ls.mu_f[m], ls.mu_g[m], ls.sigma_ff[m], ls.sigma_gg[m], c).max()
    C_f = _c_f(ls.mu_f[m], ls.sigma_ff[m], c).max()
    return float(C_fg), float(C_f)


def default_R(f: ScalarField2D, g: ScalarField2D) -> float:
    return float(max(np.abs(f.values).max(), np.abs(g.values).max()))


def c_prime_from_w_max(w_max: float, R: float, c: StabilityConstants) -> float:
    if not w_max < 1:
        return math.nan
    return (1 - w_max * w_max) / (4 * R * R + c.c2)


def compute_constants(
    f: ScalarField2D,
    g: ScalarField2D,
    w: WeightWindow | None = None,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    R: float | None = None,
    local: LocalStats | None = None,
    glob: GlobalStats | None = None,
) -> BoundConstants:
    """All bound constants for one pair; local ones only when a window is given."""
    base = global_constants(f, g, c, glob)
    if w is None:
        return base
    C_fg, C_f = local_constants(f, g, w, c, local)
    R = default_R(f, g) if R is None else R
    w_max = w.effective_w_max(f.shape)
    return BoundConstants(
        base.c_fg, base.c_f, base.c, C_fg, C_f, R, c_prime_from_w_max(w_max, R, c), w_max
    )


def check_upper_bound(
    f: ScalarField2D,
    g: ScalarField2D,
    w: WeightWindow | None = None,
    c: StabilityConstants = DEFAULT_CONSTANTS,
) -> BoundCheck:
    """``|1 - SSIM| <= c_fg ||f-g||^2``, or the windowed version when ``w`` is given."""
    l2sq = l2_distance(f, g) ** 2
    gs = global_stats(f, g, c)
    if w is None:
        return BoundCheck(abs(gs.dissimilarity), global_constants(f, g, c, gs).c_fg * l2sq)
    ls = local_stats(f, g, w)
    dissim = _pmean(ls.one_minus_q(c)[ls.mask])
    C_fg, _ = local_constants(f, g, w, c, ls)
    return BoundCheck(abs(dissim), C_fg * l2sq)


@dataclass(frozen=True)
class EquivalenceReport:
    lower: BoundCheck  # (||h||^2 - mean mu_h^2) / (4R^2 + c2) <= |1 - W-SSIM|
    upper: BoundCheck  # |1 - W-SSIM| <= C_fg ||h||^2
    R: float
    l2sq: float
    local_mean_gap: float  # mean over pixels of (mu_f(x) - mu_g(x))^2
    w_max: float
    c_prime: float  # from w_max, NaN unless w_max < 1
    condition_holds: bool  # mean gap <= (1 - c'(4R^2 + c2)) ||h||^2 for c_prime
    c_prime_optimal: float  # largest c' for which the condition holds
    equivalence: BoundCheck | None  # c' ||h||^2 <= |1 - W-SSIM|, when c_prime is usable

    @property
    def holds(self) -> bool:
        ok = self.lower.holds and self.upper.holds
        if self.equivalence is not None:
            ok = ok and self.equivalence.holds
        return ok


def check_lower_bound(
    f: ScalarField2D,
    g: ScalarField2D,
    w: WeightWindow,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    R: float | None = None,
) -> EquivalenceReport:
    """Evaluate the lower bound and the resulting equivalence certificate.

    ``R`` defaults to the larger sup-norm of the two fields. A supplied ``R``
    is checked against the local L2 norms under every window and a
    :class:`BoundPreconditionError` is raised if it is too small.
    """
    ls = local_stats(f, g, w)
    m = ls.mask
    R = default_R(f, g) if R is None else float(R)
    local_sq = max(
        float((ls.sigma_ff[m] + ls.mu_f[m] ** 2).max()),
        float((ls.sigma_gg[m] + ls.mu_g[m] ** 2).max()),
    )
    if local_sq > R * R * (1 + 1e-12):
        raise BoundPreconditionError(
            f"R={R:g} is smaller than the largest local L2 norm {math.sqrt(local_sq):g}"
        )
    l2sq = l2_distance(f, g) ** 2
    gap = _pmean(ls.mu_h[m] ** 2)
    dissim = abs(_pmean(ls.one_minus_q(c)[m]))
    denom = 4 * R * R + c.c2
    C_fg, _ = local_constants(f, g, w, c, ls)
    w_max = w.effective_w_max(f.shape)
    cp = c_prime_from_w_max(w_max, R, c)
    if l2sq > 0:
        cp_opt = max(0.0, 1 - gap / l2sq) / denom
    else:
        cp_opt = 1 / denom
    if math.isnan(cp):
        cond = False
        equiv = None
    else:
        cond = _le(gap, (1 - cp * denom) * l2sq)
        equiv = BoundCheck(cp * l2sq, dissim)
    return EquivalenceReport(
        lower=BoundCheck((l2sq - gap) / denom, dissim),
        upper=BoundCheck(dissim, C_fg * l2sq),
        R=R,
        l2sq=l2sq,
        local_mean_gap=gap,
        w_max=w_max,
        c_prime=cp,
        condition_holds=cond,
        c_prime_optimal=cp_opt,
        equivalence=equiv,
    )


@dataclass(frozen=True)
class LemmaReport:
    M: float
    S: float
    one_minus_M: float
    one_minus_M_bound: float  # ||f-g||_L1^2 / (mu_f^2 + mu_g^2 + c1)
    one_minus_S: float  # 1 - S evaluated in extended precision
    one_minus_S_identity: float  # ||(f-mu_f) - (g-mu_g)||^2 / (s_ff + s_gg + c2), in double
    identity_residual: float  # relative

    @property
    def m_in_range(self) -> bool:
        return 0.0 <= self.M <= 1.0

    @property
    def s_in_range(self) -> bool:
        return abs(self.S) <= 1.0

    @property
    def m_bound_holds(self) -> bool:
        return self.one_minus_M <= self.one_minus_M_bound + 1e-12


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def _mp_one_minus_S(F: np.ndarray, G: np.ndarray, W: np.ndarray, c2: float, dps: int):
    """``1 - S`` from its definition, in ``dps``-digit arithmetic.

    ``W`` holds non-negative weights summing to one over the entries used.
    """
    with mpmath.workdps(dps):
        fs = [mpmath.mpf(float(x)) for x in F.ravel()]
        gs = [mpmath.mpf(float(x)) for x in G.ravel()]
        ws = [mpmath.mpf(float(x)) for x in W.ravel()]
        tot = mpmath.fsum(ws)
        ws = [x / tot for x in ws]
        mf = mpmath.fsum(w * x for w, x in zip(ws, fs))
        mg = mpmath.fsum(w * x for w, x in zip(ws, gs))
        sff = mpmath.fsum(w * (x - mf) ** 2 for w, x in zip(ws, fs))
        sgg = mpmath.fsum(w * (y - mg) ** 2 for w, y in zip(ws, gs))
        sfg = mpmath.fsum(w * (x - mf) * (y - mg) for w, x, y in zip(ws, fs, gs))
        c2m = mpmath.mpf(c2)
        return float(1 - (2 * sfg + c2m) / (sff + sgg + c2m))


def lemma_identities(
    f: ScalarField2D,
    g: ScalarField2D,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    dps: int = 40,
) -> LemmaReport:
    """Check the M/S range bounds, the ``1 - M`` inequality and the ``1 - S`` identity.

    The identity side is the double-precision centered-difference form used
    throughout the package; ``1 - S`` is re-evaluated from its definition in
    extended precision so that cancellation does not mask the comparison.
    """
    gs = global_stats(f, g, c)
    l1 = l1_distance(f, g)
    ref = _mp_one_minus_S(f.values, g.values, np.ones(f.values.size), c.c2, dps)
    ident = gs.one_minus_S
    return LemmaReport(
        M=gs.M,
        S=gs.S,
        one_minus_M=gs.one_minus_M,
        one_minus_M_bound=l1 * l1 / (gs.mu_f**2 + gs.mu_g**2 + c.c1),
        one_minus_S=ref,
        one_minus_S_identity=ident,
        identity_residual=_rel(ref, ident),
    )


def local_identity_residual(
    f: ScalarField2D,
    g: ScalarField2D,
    w: WeightWindow,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    dps: int = 30,
) -> float:
    """Largest per-pixel relative residual of the local ``1 - S(x)`` identity.

    Each pixel's ``1 - S(x)`` is recomputed in extended precision from the
    clipped window weights and compared with the double-precision
    ``var_x(f - g) / (s_ff(x) + s_gg(x) + c2)``.
    """
    ls = local_stats(f, g, w)
    rhs = ls.sigma_hh / (ls.sigma_ff + ls.sigma_gg + c.c2)
    p, q = f.shape
    o, k = w.offset, w.k
    worst = 0.0
    for i, j in zip(*np.nonzero(ls.mask)):
        r0, c0 = i - o, j - o
        rs, cs = slice(max(r0, 0), min(r0 + k, p)), slice(max(c0, 0), min(c0 + k, q))
        Wb = w.weights[rs.start - r0 : rs.stop - r0, cs.start - c0 : cs.stop - c0]
        ref = _mp_one_minus_S(f.values[rs, cs], g.values[rs, cs], Wb, c.c2, dps)
        worst = max(worst, _rel(ref, float(rhs[i, j])))
    return worst


def random_pair(rng: np.random.Generator, size: int = 16, kind: int | None = None):
    """Random non-negative field pair of mixed scale and closeness.

    ``kind`` 0: independent uniform fields; 1: small perturbation of a field;
    2: smooth field against a noisy copy; 3: near-constant fields.
    """
    from .grid import ScalarField2D

    kind = int(rng.integers(4)) if kind is None else kind
    scale = 10.0 ** rng.uniform(-2, 1)
    if kind == 0:
        F = scale * rng.random((size, size))
        G = scale * rng.random((size, size))
    elif kind == 1:
        F = scale * rng.random((size, size))
        G = np.abs(F + scale * 10.0 ** rng.uniform(-6, -1) * rng.standard_normal((size, size)))
    elif kind == 2:
        t = np.linspace(0, 1, size)
        F = scale * (1.5 + np.sin(2 * np.pi * rng.random() + 3 * np.add.outer(t, t)))
        G = np.abs(F + 0.3 * scale * rng.standard_normal((size, size)))
    else:
        F = np.full((size, size), scale) + 1e-3 * scale * rng.random((size, size))
        G = np.full((size, size), scale * rng.uniform(0.5, 2.0))
    return ScalarField2D.from_array(F), ScalarField2D.from_array(G)


def equal_local_mean_pair(rng: np.random.Generator, size: int = 16, k: int = 4):
    """Pair whose windowed means agree at every pixel of a ``clip`` window.

    ``g = f + a (-1)^i`` with even ``k``: the alternating rows cancel inside
    every full ``k x k`` window.
    """
    from .grid import ScalarField2D

    if k % 2:
        raise ValueError("window size must be even")
    scale = 10.0 ** rng.uniform(-1, 1)
    a = scale * rng.uniform(0.01, 0.5)
    F = a + scale * rng.random((size, size))
    P = a * (-1.0) ** np.arange(size)[:, None] * np.ones((1, size))
    window = WeightWindow.uniform(k, "corner", "clip")
    return ScalarField2D.from_array(F), ScalarField2D.from_array(F + P), window


@dataclass
class SweepResult:
    trials: int = 0
    failures: dict = None
    worst: dict = None

    def __post_init__(self):
        self.failures = {}
        self.worst = {}

    def record(self, name: str, ok: bool, margin: float = math.inf):
        self.failures.setdefault(name, 0)
        if not ok:
            self.failures[name] += 1
        self.worst[name] = min(self.worst.get(name, math.inf), margin)

    @property
    def ok(self) -> bool:
        return not any(self.failures.values())


def _rel_slack(check: BoundCheck) -> float:
    return check.slack / max(1.0, abs(check.rhs))


def run_sweep(
    trials: int = 1000,
    size: int = 16,
    seed: int = 0,
    window_size: int = 3,
    c: StabilityConstants = DEFAULT_CONSTANTS,
    local_identity_every: int = 50,
) -> SweepResult:
    """Randomized verification of every bound and identity on ``trials`` pairs.

    The per-pixel identity is checked in extended precision, which is slow,
    so only on every ``local_identity_every``-th trial.
    """
    rng = np.random.default_rng(seed)
    res = SweepResult()
    windows = [
        WeightWindow.uniform(window_size, "center", "renormalize"),
        WeightWindow.uniform(window_size, "corner", "clip"),
    ]
    for t in range(trials):
        f, g = random_pair(rng, size)
        w = windows[t % 2]
        up = check_upper_bound(f, g, None, c)
        res.record("upper_global", up.holds, _rel_slack(up))
        upw = check_upper_bound(f, g, w, c)
        res.record("upper_weighted", upw.holds, _rel_slack(upw))
        lem = lemma_identities(f, g, c)
        res.record("identity_one_minus_S", lem.identity_residual < 1e-10, -lem.identity_residual)
        res.record("M_range", lem.m_in_range)
        res.record("S_range", lem.s_in_range)
        res.record("one_minus_M_bound", lem.m_bound_holds)
        if t % local_identity_every == 0:
            res.record("identity_local", local_identity_residual(f, g, w, c) < 1e-10)
        k = compute_constants(f, g, w, c)
        res.record("constant_chain", k.chain_holds())
        eq = check_lower_bound(f, g, w, c)
        res.record("lower_bound", eq.lower.holds, _rel_slack(eq.lower))
        fe, ge, we = equal_local_mean_pair(rng, size)
        eqm = check_lower_bound(fe, ge, we, c)
        cp = 1 / (4 * eqm.R**2 + c.c2)
        sandwich = BoundCheck(cp * eqm.l2sq, eqm.upper.lhs)
        res.record("sandwich", sandwich.holds and eqm.upper.holds, _rel_slack(sandwich))
        res.trials += 1
    return res
