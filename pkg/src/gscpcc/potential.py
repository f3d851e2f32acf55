"""Scalar recursion analysis: potential function, single-system and
potential thresholds, area-theorem MAP estimate, and the closed-form
capacity machinery of the 2-state ensemble.

With identical component decoders the two-decoder recursion collapses to
x <- f(g(x); eps) with f(x; eps) = fs(eps*x, 1-(1-eps)*rho) and
g(x) = q*lam*x^(2q-1) + (1-q*lam)*x.  The potential of this scalar system
is U(x; eps) = x*g(x) - G(x) - F(g(x); eps) with F the running integral
of f and G of g.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .de import (
    DEFAULT_BISECT_TOL,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    DEFAULT_ZERO_THRESH,
    EnsembleParams,
    ThresholdResult,
    bp_threshold,
    de_uncoupled_fixed_point,
    default_cache,
    punctured_epsilon,
)
from .transfer import (
    TWO_STATE,
    TabulateBudget,
    TransferCache,
    fs_closed_2state,
    fs_closed_2state_integral,
)


def g_fn(x, q: int, lam: float):
    """Variable-node side of the scalar recursion."""
    x = np.asarray(x, dtype=np.float64)
    out = q * lam * x ** (2 * q - 1) + (1.0 - q * lam) * x
    return float(out) if out.ndim == 0 else out


def G_fn(x, q: int, lam: float):
    """Antiderivative of g_fn with G(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    out = 0.5 * lam * x ** (2 * q) + 0.5 * (1.0 - q * lam) * x * x
    return float(out) if out.ndim == 0 else out


class ScalarSystem:
    """f, F and U of the scalar recursion at one channel erasure rate.

    Uses the exact closed form for the 2-state code when the cache allows
    it, otherwise the cached Monte-Carlo table at y = 1-(1-eps)*rho.
    """

    def __init__(self, params: EnsembleParams, eps: float,
                 cache: TransferCache | None = None):
        if cache is None:
            cache = default_cache()
        self.params = params
        self.eps = float(eps)
        self.y = punctured_epsilon(self.eps, params.rho)
        self.closed = (getattr(cache, "use_closed_2state", False)
                       and params.code == TWO_STATE)
        self.table = None if self.closed else cache.get(params.code, self.y)

    def f(self, v):
        """f_s(eps * v, y) for v = g(x)."""
        if self.closed:
            return fs_closed_2state(self.eps * np.asarray(v, dtype=np.float64),
                                    self.y)
        return self.table.fs_at(self.eps * np.asarray(v, dtype=np.float64))

    def F(self, a):
        """Integral of z -> f(z) from 0 to a."""
        a = np.asarray(a, dtype=np.float64)
        if self.eps == 0.0:
            out = np.zeros_like(a)
            return float(out) if out.ndim == 0 else out
        if self.closed:
            return fs_closed_2state_integral(a, self.eps, self.y)
        out = self.table.fs_integral(self.eps * a) / self.eps
        return float(out) if np.ndim(out) == 0 else out

    def U(self, x):
        x = np.asarray(x, dtype=np.float64)
        gx = g_fn(x, self.params.q, self.params.lam)
        out = x * gx - G_fn(x, self.params.q, self.params.lam) - self.F(gx)
        return float(out) if out.ndim == 0 else out

    def recursion_gap(self, x):
        """f(g(x)) - x; negative where the recursion moves down."""
        x = np.asarray(x, dtype=np.float64)
        out = self.f(g_fn(x, self.params.q, self.params.lam)) - x
        return float(out) if out.ndim == 0 else out


def potential(x, eps: float, params: EnsembleParams, table=None, *,
              cache: TransferCache | None = None):
    """Potential U(x; eps); `table` may pin an explicit transfer table."""
    if table is not None:
        gx = g_fn(np.asarray(x, dtype=np.float64), params.q, params.lam)
        F = table.fs_integral(eps * gx) / eps if eps > 0 else 0.0
        out = (np.asarray(x, dtype=np.float64) * gx
               - G_fn(x, params.q, params.lam) - F)
        return float(out) if np.ndim(out) == 0 else out
    return ScalarSystem(params, eps, cache).U(x)


@dataclass
class PotentialProfile:
    eps: float
    grid_x: np.ndarray
    U_values: np.ndarray
    u_eps: float | None
    min_U_above_u: float


def _min_unstable_fp(sys: ScalarSystem, grid_n: int, refine: int = 60):
    """Smallest x with f(g(x)) >= x, refined by bisection.

    Returns None when the recursion moves down on all of (0, 1] (no
    unstable fixed point), 0.0 when it moves up immediately.
    """
    xs = np.linspace(0.0, 1.0, grid_n)[1:]
    d = sys.recursion_gap(xs)
    if d[0] >= 0.0:
        return 0.0
    above = np.nonzero(d >= 0.0)[0]
    if len(above) == 0:
        return None
    i = above[0]
    lo, hi = xs[i - 1], xs[i]
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        if sys.recursion_gap(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _min_potential_above(sys: ScalarSystem, u: float, grid_n: int) -> float:
    xs = np.linspace(u, 1.0, grid_n)
    vals = sys.U(xs)
    i = int(np.argmin(vals))
    lo = xs[max(i - 1, 0)]
    hi = xs[min(i + 1, len(xs) - 1)]
    if hi > lo:
        res = minimize_scalar(sys.U, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10})
        return float(min(vals[i], res.fun))
    return float(vals[i])


def potential_profile(params: EnsembleParams, eps: float, *,
                      cache: TransferCache | None = None,
                      grid_n: int = 2001) -> PotentialProfile:
    """U over an x-grid plus the minimum unstable fixed point at eps."""
    sys = ScalarSystem(params, eps, cache)
    xs = np.linspace(0.0, 1.0, grid_n)
    U = sys.U(xs)
    u = _min_unstable_fp(sys, grid_n)
    min_above = _min_potential_above(sys, u if u else 0.0, grid_n)
    return PotentialProfile(eps=eps, grid_x=xs, U_values=U, u_eps=u,
                            min_U_above_u=min_above)


@dataclass
class ScalarThresholdResult:
    eps: float
    lo: float
    hi: float
    kind: str
    params: EnsembleParams
    de_threshold: float | None = None
    settings: dict = field(default_factory=dict)


def _bisect(accept, lo: float, hi: float, tol: float):
    """sup of the accept region, assuming accept(lo) and not accept(hi)."""
    if accept(hi):
        return hi, hi, hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if accept(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), lo, hi


def single_system_threshold(params: EnsembleParams, *,
                            cache: TransferCache | None = None,
                            bisect_tol: float = DEFAULT_BISECT_TOL,
                            grid_n: int = 2001,
                            cross_validate: bool = True) -> ScalarThresholdResult:
    """Largest eps with U'(x; eps) > 0 on all of (0, 1].

    Since g' > 0 this is equivalent to x > f(g(x)) everywhere, checked on
    a dense grid.  Optionally cross-validated against the bisection of
    plain density evolution started from all-ones (same fixed points)."""
    xs = np.linspace(0.0, 1.0, grid_n)[1:]

    def accept(e: float) -> bool:
        return bool(np.all(ScalarSystem(params, e, cache).recursion_gap(xs) < 0.0))

    eps_s, lo, hi = _bisect(accept, 0.0, 1.0 - params.rate, bisect_tol)
    de_val = None
    if cross_validate:
        de_val = bp_threshold(params, "uncoupled", cache=cache,
                              bisect_tol=bisect_tol).eps_star
    return ScalarThresholdResult(
        eps=eps_s, lo=lo, hi=hi, kind="single-system", params=params,
        de_threshold=de_val,
        settings={"bisect_tol": bisect_tol, "grid_n": grid_n})


def potential_threshold(params: EnsembleParams, *,
                        cache: TransferCache | None = None,
                        bisect_tol: float = DEFAULT_BISECT_TOL,
                        grid_n: int = 2001) -> ScalarThresholdResult:
    """Largest eps whose potential stays nonnegative above the minimum
    unstable fixed point (eps below the single-system threshold, where no
    unstable fixed point exists, is accepted)."""

    def accept(e: float) -> bool:
        sys = ScalarSystem(params, e, cache)
        u = _min_unstable_fp(sys, grid_n)
        if u is None:
            return True
        if u == 0.0:
            return False
        return _min_potential_above(sys, u, grid_n) >= 0.0

    eps_c, lo, hi = _bisect(accept, 0.0, 1.0 - params.rate, bisect_tol)
    return ScalarThresholdResult(
        eps=eps_c, lo=lo, hi=hi, kind="potential", params=params,
        settings={"bisect_tol": bisect_tol, "grid_n": grid_n})


def symmetric_fixed_point(params: EnsembleParams, eps: float, *,
                          cache: TransferCache | None = None,
                          from_x: float = 1.0,
                          tol: float = DEFAULT_TOL,
                          max_iters: int = DEFAULT_MAX_ITERS) -> float:
    """Limit of x <- f(g(x); eps) started at from_x."""
    sys = ScalarSystem(params, eps, cache)
    x = from_x
    for _ in range(max_iters):
        nx = float(sys.f(g_fn(x, params.q, params.lam)))
        if abs(nx - x) < tol:
            return nx
        x = nx
    return x


@dataclass
class MapThresholdResult:
    """Area-theorem MAP estimate (the paper's tables treat it as tight)."""

    eps_map: float
    eps_grid: np.ndarray
    h_values: np.ndarray
    params: EnsembleParams
    label: str = "area-theorem MAP estimate"
    settings: dict = field(default_factory=dict)


def _bp_exit(params: EnsembleParams, eps: float, cache: TransferCache,
             init, tol, zero_thresh, max_iters):
    """(h_bp, fixed point) at eps; extrinsic averages over both decoders."""
    q, lam, R = params.q, params.lam, params.rate
    fp = de_uncoupled_fixed_point(params, eps, cache=cache, init=init,
                                  tol=tol, zero_thresh=zero_thresh,
                                  max_iters=max_iters)
    pU, pL = fp.p_info_upper, fp.p_info_lower
    if fp.converged_to_zero:
        return 0.0, fp
    y = punctured_epsilon(eps, params.rho)
    table = cache.get(params.code, y, need_parity=True)
    p_bar = q * lam * (pU * pL) ** q + (1.0 - q * lam) * pU * pL
    arg_u = eps * (q * lam * pU ** (q - 1) * pL ** q + (1.0 - q * lam) * pL)
    arg_l = eps * (q * lam * pL ** (q - 1) * pU ** q + (1.0 - q * lam) * pU)
    q_bar = 0.5 * (table.fp_at(arg_u) + table.fp_at(arg_l))
    return R * p_bar + (1.0 - R) * q_bar, fp


def map_threshold_area(params: EnsembleParams, *,
                       cache: TransferCache | None = None,
                       map_budget: TabulateBudget | None = None,
                       eps_step: float = 1e-3,
                       refine_step: float = 1e-5,
                       tol: float = DEFAULT_TOL,
                       zero_thresh: float = DEFAULT_ZERO_THRESH,
                       max_iters: int = DEFAULT_MAX_ITERS) -> MapThresholdResult:
    """MAP threshold from the area under the BP EXIT curve.

    Integrates h_bp downward from eps = 1 until the accumulated area
    reaches the code rate, then refines inside the bracketing cell.
    Tables along the sweep use independent noise per eps so integration
    averages it out.
    """
    if cache is None:
        if map_budget is None:
            map_budget = TabulateBudget(trellis_len=30_000, trials=1,
                                        seed=104729, seed_with_y=True)
        cache = TransferCache(map_budget)
    R = params.rate
    t0 = time.perf_counter()
    eps_list = [1.0]
    h_list = [1.0]  # fully erased channel: every extrinsic stays erased
    area = 0.0
    init = (1.0, 1.0)
    e_prev, h_prev = 1.0, 1.0
    bracket = None
    e = 1.0
    while e > eps_step / 2:
        e = max(e - eps_step, 0.0)
        h, fp = _bp_exit(params, e, cache, init, tol, zero_thresh, max_iters)
        init = (max(fp.p_info_upper, 1e-12), max(fp.p_info_lower, 1e-12))
        eps_list.append(e)
        h_list.append(h)
        cell = 0.5 * (h + h_prev) * (e_prev - e)
        if area + cell >= R:
            bracket = (e, e_prev, area)
            break
        area += cell
        e_prev, h_prev = e, h
        if h == 0.0 and area < R and e < 1e-9:
            raise RuntimeError(
                f"BP EXIT area {area:.4f} over [0,1] below rate {R}; "
                "increase the table budget")
    if bracket is None:
        raise RuntimeError(
            f"BP EXIT area {area:.4f} over [0,1] below rate {R}; "
            "increase the table budget")

    lo_e, hi_e, area = bracket
    init = (1.0, 1.0)
    e_prev = hi_e
    h_prev = h_list[-2] if len(h_list) >= 2 else 1.0
    eps_map = lo_e
    e = hi_e
    while e > lo_e:
        e = max(e - refine_step, lo_e)
        h, fp = _bp_exit(params, e, cache, init, tol, zero_thresh, max_iters)
        init = (max(fp.p_info_upper, 1e-12), max(fp.p_info_lower, 1e-12))
        cell = 0.5 * (h + h_prev) * (e_prev - e)
        if area + cell >= R:
            # linear interpolation inside the refined cell
            frac = (R - area) / cell if cell > 0 else 0.0
            eps_map = e_prev - frac * (e_prev - e)
            break
        area += cell
        e_prev, h_prev = e, h
    return MapThresholdResult(
        eps_map=float(eps_map),
        eps_grid=np.asarray(eps_list), h_values=np.asarray(h_list),
        params=params,
        settings={"eps_step": eps_step, "refine_step": refine_step,
                  "wall_time_s": time.perf_counter() - t0})


def capacity_bound(rate: float, q: int) -> float:
    """Guaranteed fraction-of-capacity threshold of the 2-state ensemble:
    (1-R) * (1 - R/(R+q)), valid for q >= 2."""
    if q < 2:
        raise ValueError("the capacity bound requires q >= 2")
    return (1.0 - rate) * (1.0 - rate / (rate + q))


def eps2_closed_form(x, q: int, rho: float):
    """Positive root of the quadratic nonnegativity condition on the
    2-state potential, as a function of the evaluation point x."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0) or np.any(x > 1.0):
        raise ValueError("x must lie in (0, 1]")
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    a = x ** (2 * q - 2) * (2.0 * q / (2.0 * q - 1.0) - x)
    b = a * (1.0 - rho) / rho + 1.0
    out = (-b + np.sqrt(b * b + 4.0 * a)) / (2.0 * a)
    return float(out) if out.ndim == 0 else out


def argmin_x(q: int) -> float:
    """Minimizer of eps2_closed_form over x in (0, 1]."""
    return 4.0 * q * (q - 1.0) / (2.0 * q - 1.0) ** 2


@dataclass
class CrossingCheck:
    code_weak: str
    code_strong: str
    y: float
    pattern: list
    n_crossings: int
    strong_lower_at_low_x: bool

    @property
    def ok(self) -> bool:
        return self.n_crossings == 1 and self.strong_lower_at_low_x


@dataclass
class FixedPointCount:
    code: str
    q: int
    eps: float
    count: int

    @property
    def ok(self) -> bool:
        return self.count == 2


@dataclass
class PropReport:
    rate: float
    crossings: list
    fixed_point_counts: list
    x_inf: dict
    x_inf_monotone_in_q: bool
    eps_c: dict
    eps_c_monotone_in_q: bool
    eps_c_monotone_in_states: bool

    @property
    def ok(self) -> bool:
        return (all(c.ok for c in self.crossings)
                and all(f.ok for f in self.fixed_point_counts)
                and self.x_inf_monotone_in_q
                and self.eps_c_monotone_in_q
                and self.eps_c_monotone_in_states)


def _crossing_pattern(t1, t2):
    """Collapsed sign pattern of f1 - f2 outside the 3-sigma noise band."""
    diff = t1.fs - t2.fs
    band = 3.0 * np.hypot(t1.stderr_s, t2.stderr_s)
    sig = np.where(diff > band, 1, np.where(diff < -band, -1, 0))
    collapsed = []
    for s in sig:
        if s != 0 and (not collapsed or collapsed[-1] != s):
            collapsed.append(int(s))
    return collapsed


def prop_checks(codes, q_list, rate: float, *,
                cache: TransferCache | None = None,
                y_values=(0.66,),
                eps_fp: float | None = None,
                bisect_tol: float = DEFAULT_BISECT_TOL) -> PropReport:
    """Empirical checks behind the ordering properties of the thresholds.

    codes are ordered weak to strong (increasing state count); for each
    adjacent pair the transfer functions must cross exactly once with the
    stronger code lower at small input erasure.  For each code the scalar
    recursion must show exactly two nonzero fixed points at the probe
    erasure rate, a from-one fixed point nondecreasing in q, and potential
    thresholds nondecreasing in q and in code strength.  Violations are
    reported, not raised.
    """
    if cache is None:
        cache = default_cache()
    codes = list(codes)
    crossings = []
    for weak, strong in zip(codes, codes[1:]):
        for y in y_values:
            tw = cache.get(weak, y, need_parity=True)
            ts = cache.get(strong, y, need_parity=True)
            pattern = _crossing_pattern(tw, ts)
            crossings.append(CrossingCheck(
                code_weak=weak.octal_label, code_strong=strong.octal_label,
                y=y, pattern=pattern,
                n_crossings=max(len(pattern) - 1, 0),
                strong_lower_at_low_x=bool(pattern and pattern[0] == 1)))

    fp_counts = []
    x_inf = {}
    eps_c = {}
    xs = np.linspace(0.0, 1.0, 2001)[1:-1]
    for code in codes:
        # one probe eps per code so fixed points are comparable across q
        e_probe = eps_fp
        if e_probe is None:
            worst = max(
                single_system_threshold(
                    EnsembleParams(code=code, rate=rate, q=q, lam=1.0 / q),
                    cache=cache, cross_validate=False,
                    bisect_tol=bisect_tol).eps
                for q in q_list)
            e_probe = 0.5 * (worst + 1.0 - rate)
        for q in q_list:
            params = EnsembleParams(code=code, rate=rate, q=q, lam=1.0 / q)
            sys = ScalarSystem(params, e_probe, cache)
            d = sys.recursion_gap(xs)
            signs = np.sign(d)
            signs = signs[signs != 0]
            count = int(np.sum(signs[1:] != signs[:-1]))
            fp_counts.append(FixedPointCount(
                code=code.octal_label, q=q, eps=e_probe, count=count))
            x_inf[(code.octal_label, q)] = symmetric_fixed_point(
                params, e_probe, cache=cache)
            eps_c[(code.octal_label, q)] = potential_threshold(
                params, cache=cache, bisect_tol=bisect_tol).eps

    def nondecreasing(vals, slack=0.0):
        return all(b >= a - slack for a, b in zip(vals, vals[1:]))

    x_mono = all(
        nondecreasing([x_inf[(c.octal_label, q)] for q in q_list])
        for c in codes)
    ec_mono_q = all(
        nondecreasing([eps_c[(c.octal_label, q)] for q in q_list], 1e-4)
        for c in codes)
    ec_mono_states = all(
        nondecreasing([eps_c[(c.octal_label, q)] for c in codes], 1e-4)
        for q in q_list)
    return PropReport(
        rate=rate, crossings=crossings, fixed_point_counts=fp_counts,
        x_inf=x_inf, x_inf_monotone_in_q=x_mono,
        eps_c=eps_c, eps_c_monotone_in_q=ec_mono_q,
        eps_c_monotone_in_states=ec_mono_states)
