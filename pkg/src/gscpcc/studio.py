"""Ensemble-level parameter studies: repetition-ratio optimization,
threshold tables, and gap-to-capacity versus coupling length."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .de import (
    DEFAULT_BISECT_TOL,
    EnsembleParams,
    bp_threshold,
    default_cache,
    rho_from_rate,
)
from .potential import map_threshold_area, potential_threshold
from .transfer import TransferCache, TransferGrid
from .trellis import ConvCodeSpec

LAMBDA_GRID_STEP = 0.001  # repetition ratios are reported to 3 decimals
TIE_DECIMALS = 4          # thresholds tie when equal to 4 decimals


def feasible_lambda_grid(rate: float, q: int, step: float = LAMBDA_GRID_STEP,
                         mother_rate: float = 1.0 / 3.0) -> np.ndarray:
    """Uniform grid over the repetition ratios that can reach `rate`.

    Low target rates are unreachable without enough repetition (the parity
    survival fraction would exceed 1), so the grid may start above 0.
    """
    n = int(round(1.0 / (q * step)))
    grid = np.linspace(0.0, 1.0 / q, n + 1)
    keep = []
    for lam in grid:
        try:
            rho_from_rate(mother_rate, rate, q if lam > 0 else 1, lam)
        except ValueError:
            continue
        keep.append(lam)
    if not keep:
        raise ValueError(f"rate {rate} unreachable for any lam with q={q}")
    return np.asarray(keep)


@dataclass
class LambdaSweepResult:
    code: ConvCodeSpec
    rate: float
    q: int
    m: int
    L: int
    lambda_grid: np.ndarray
    thresholds: np.ndarray
    lambda_star: np.ndarray   # every lam whose threshold ties at 4 decimals
    threshold_star: float
    wall_time_s: float
    settings: dict = field(default_factory=dict)


def optimize_lambda(rate: float, q: int, m: int, code: ConvCodeSpec,
                    lambda_grid=None, *, L: int = 100,
                    cache: TransferCache | None = None,
                    y_step: float = 0.0025,
                    bisect_tol: float = DEFAULT_BISECT_TOL,
                    threads: int = 1) -> LambdaSweepResult:
    """Coupled BP threshold per repetition ratio; returns all maximizers.

    Tables are evaluated through a fixed y-lattice with linear blending
    (`TransferGrid`), so the whole sweep shares one frozen set of
    Monte-Carlo tables and the threshold landscape is smooth in lam.
    """
    t0 = time.perf_counter()
    if cache is None:
        cache = default_cache()
    if lambda_grid is None:
        lambda_grid = feasible_lambda_grid(rate, q)
    lambda_grid = np.asarray(lambda_grid, dtype=np.float64)
    bank = TransferGrid(code, cache, y_step=y_step)
    mode = "coupled" if m > 0 else "uncoupled"

    def run(lam: float) -> float:
        params = EnsembleParams(code=code, rate=rate, q=q if lam > 0 else 1,
                                lam=lam, m=m, L=L)
        return bp_threshold(params, mode, bisect_tol=bisect_tol,
                            fs_provider=bank.fs_row).eps_star

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            thresholds = np.array(list(pool.map(run, lambda_grid)))
    else:
        thresholds = np.array([run(lam) for lam in lambda_grid])
    rounded = np.round(thresholds, TIE_DECIMALS)
    best = rounded.max()
    lambda_star = lambda_grid[rounded == best]
    return LambdaSweepResult(
        code=code, rate=rate, q=q, m=m, L=L,
        lambda_grid=lambda_grid, thresholds=thresholds,
        lambda_star=lambda_star, threshold_star=float(best),
        wall_time_s=time.perf_counter() - t0,
        settings={"y_step": y_step, "bisect_tol": bisect_tol,
                  "tie_decimals": TIE_DECIMALS, "mode": mode})


@dataclass(frozen=True)
class TableJob:
    """One table row request: BP / MAP / potential thresholds of one
    ensemble.  ``lam`` may be a number, "1/q", or "optimize"."""

    code: ConvCodeSpec
    rate: float
    q: int
    lam: float | str = "1/q"
    m: int = 0
    L: int = 100
    kinds: tuple = ("bp",)


def _resolve_lam(job: TableJob, cache, threads) -> tuple[float, dict]:
    if job.lam == "1/q":
        return 1.0 / job.q, {}
    if job.lam == "optimize":
        sweep = optimize_lambda(job.rate, job.q, job.m, job.code,
                                L=job.L, cache=cache, threads=threads)
        lam = float(sweep.lambda_star.max())
        return lam, {"lambda_star_lo": float(sweep.lambda_star.min()),
                     "lambda_star_hi": float(sweep.lambda_star.max())}
    return float(job.lam), {}


def threshold_table(jobs, *, cache: TransferCache | None = None,
                    bisect_tol: float = DEFAULT_BISECT_TOL,
                    threads: int = 1) -> list[dict]:
    """Batch driver producing one record per (job, kind) with the gap to
    capacity 1 - R - eps attached to every threshold."""
    if cache is None:
        cache = default_cache()
    rows = []
    for job in jobs:
        lam, extra = _resolve_lam(job, cache, threads)
        params = EnsembleParams(code=job.code, rate=job.rate, q=job.q,
                                lam=lam, m=job.m, L=job.L)
        for kind in job.kinds:
            if kind == "bp":
                mode = "coupled" if job.m > 0 else "uncoupled"
                res = bp_threshold(params, mode, cache=cache,
                                   bisect_tol=bisect_tol)
                value = res.eps_star
            elif kind == "map":
                value = map_threshold_area(params).eps_map
            elif kind == "potential":
                value = potential_threshold(params, cache=cache,
                                            bisect_tol=bisect_tol).eps
            else:
                raise ValueError(f"unknown table kind {kind!r}")
            row = {
                "code": job.code.octal_label, "rate": job.rate, "q": params.q,
                "lam": lam, "m": job.m, "L": job.L, "kind": kind,
                "threshold": float(value),
                "gap_to_capacity": float(1.0 - job.rate - value),
                "rho": params.rho, "bisect_tol": bisect_tol,
            }
            row.update(extra)
            rows.append(row)
    return rows


@dataclass
class GapPoint:
    L: int
    rate_terminated: float
    threshold: float
    gap: float


def terminated_rate(params: EnsembleParams, L: int | None = None) -> float:
    """Design rate of the terminated chain: K*L information bits against
    surviving parity over L+m encoding instants."""
    L = params.L if L is None else L
    kept_info = 1.0 - (params.q - 1) * params.lam
    parity = 2.0 * params.rho * (L + params.m)
    return kept_info * L / (kept_info * L + parity)


def gap_vs_L(params: EnsembleParams, L_list, *,
             cache: TransferCache | None = None,
             bisect_tol: float = DEFAULT_BISECT_TOL) -> list[GapPoint]:
    """Gap to capacity 1 - R_term - eps* for each coupling length."""
    out = []
    for L in L_list:
        p = EnsembleParams(code=params.code, rate=params.rate, q=params.q,
                           lam=params.lam, m=params.m, L=int(L),
                           mother_rate=params.mother_rate)
        r_term = terminated_rate(p)
        eps = bp_threshold(p, "coupled", cache=cache,
                           bisect_tol=bisect_tol).eps_star
        out.append(GapPoint(L=int(L), rate_terminated=r_term,
                            threshold=eps, gap=1.0 - r_term - eps))
    return out
