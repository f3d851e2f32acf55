"""Density evolution for punctured ensembles, uncoupled and coupled.

State is the per-decoder information-bit erasure probability: scalars for
the uncoupled system, one value per factor position ``1..L+m`` for the
coupled chain with blocks outside ``1..L`` pinned to zero (the chain is
terminated with known bits).  The uncoupled recursion updates the lower
then the upper decoder within one iteration; the coupled recursion updates
all positions in parallel from the previous iterate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .transfer import TransferCache
from .trellis import ConvCodeSpec

DEFAULT_TOL = 1e-8
DEFAULT_ZERO_THRESH = 1e-6
DEFAULT_MAX_ITERS = 50_000
DEFAULT_BISECT_TOL = 1e-4

_default_cache: TransferCache | None = None


def default_cache() -> TransferCache:
    """Process-wide table cache used when no cache is passed explicitly."""
    global _default_cache
    if _default_cache is None:
        _default_cache = TransferCache()
    return _default_cache


def rho_from_rate(mother_rate: float, rate: float, q: int, lam: float) -> float:
    """Parity survival fraction realizing ``rate`` from the mother code.

    Solves rate = (1-(q-1)*lam) / ((1/R0-1)*rho + 1-(q-1)*lam) for rho.
    Raises if the requested rate would need rho outside (0, 1].
    """
    if not 0.0 < rate < 1.0:
        raise ValueError(f"target rate {rate} outside (0, 1)")
    kept_info = 1.0 - (q - 1) * lam
    rho = kept_info * (1.0 - rate) / (rate * (1.0 / mother_rate - 1.0))
    if rho > 1.0 + 1e-12 or rho <= 0.0:
        raise ValueError(
            f"rate {rate} unreachable for q={q}, lam={lam}: needs rho={rho:.4f}")
    return min(rho, 1.0)


def punctured_epsilon(eps: float, rho: float) -> float:
    """Erasure rate of a randomly punctured parity stream over BEC(eps)."""
    return 1.0 - (1.0 - eps) * rho


@dataclass(frozen=True)
class EnsembleParams:
    """Ensemble definition: identical component codes, repetition factor q,
    repetition ratio lam in [0, 1/q], coupling memory m and length L.

    lam == 0 deactivates repetition, so q is normalized to 1.
    """

    code: ConvCodeSpec
    rate: float
    q: int
    lam: float
    m: int = 0
    L: int = 100
    mother_rate: float = 1.0 / 3.0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if not 0.0 <= self.lam <= 1.0 / self.q + 1e-12:
            raise ValueError(f"lam={self.lam} outside [0, 1/q]")
        if self.lam == 0.0 and self.q > 1:
            object.__setattr__(self, "q", 1)
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        rho_from_rate(self.mother_rate, self.rate, self.q, self.lam)

    @property
    def rho(self) -> float:
        return rho_from_rate(self.mother_rate, self.rate, self.q, self.lam)

    def describe(self) -> dict:
        return {
            "code": self.code.octal_label, "rate": self.rate, "q": self.q,
            "lam": self.lam, "m": self.m, "L": self.L,
            "mother_rate": self.mother_rate, "rho": self.rho,
        }


@dataclass
class DEState:
    """Per-position erasure probabilities over the coupled chain."""

    pU: np.ndarray
    pL: np.ndarray
    iteration: int


@dataclass
class UncoupledFixedPoint:
    p_info_upper: float
    p_info_lower: float
    converged_to_zero: bool
    iterations: int


@dataclass
class CoupledRun:
    max_erasure: float
    converged_to_zero: bool
    iterations: int
    state: DEState


def _fs_row(params: EnsembleParams, eps: float, cache, fs_provider):
    y = punctured_epsilon(eps, params.rho)
    if fs_provider is not None:
        return np.ascontiguousarray(fs_provider(y), dtype=np.float64)
    if cache is None:
        cache = default_cache()
    return np.ascontiguousarray(cache.get(params.code, y).fs_uniform())


def de_uncoupled_fixed_point(params: EnsembleParams, eps: float, *,
                             cache: TransferCache | None = None,
                             fs_provider=None,
                             tol: float = DEFAULT_TOL,
                             zero_thresh: float = DEFAULT_ZERO_THRESH,
                             max_iters: int = DEFAULT_MAX_ITERS,
                             init: tuple[float, float] = (1.0, 1.0),
                             ) -> UncoupledFixedPoint:
    """Iterate the two-decoder recursion from ``init`` until stationary."""
    if eps == 0.0:
        return UncoupledFixedPoint(0.0, 0.0, True, 1)
    fs = _fs_row(params, eps, cache, fs_provider)
    pU, pL, iters = kernels.de_uncoupled(
        fs, eps, params.q, params.lam, tol, zero_thresh, int(max_iters),
        init[0], init[1])
    conv = pU < zero_thresh and pL < zero_thresh
    return UncoupledFixedPoint(pU, pL, conv, iters)


def de_coupled_run(params: EnsembleParams, eps: float, *,
                   cache: TransferCache | None = None,
                   fs_provider=None,
                   tol: float = DEFAULT_TOL,
                   zero_thresh: float = DEFAULT_ZERO_THRESH,
                   max_iters: int = DEFAULT_MAX_ITERS) -> CoupledRun:
    """Parallel-schedule coupled recursion from the all-ones profile."""
    if eps == 0.0:
        T = params.L + params.m
        return CoupledRun(0.0, True, 1, DEState(np.zeros(T), np.zeros(T), 1))
    fs = _fs_row(params, eps, cache, fs_provider)
    pU, pL, iters = kernels.de_coupled(
        fs, eps, params.q, params.lam, params.m, params.L,
        tol, zero_thresh, int(max_iters))
    top = float(max(pU.max(), pL.max()))
    return CoupledRun(top, top < zero_thresh, iters,
                      DEState(pU, pL, iters))


@dataclass
class ThresholdResult:
    eps_star: float
    lo: float
    hi: float
    mode: str
    params: EnsembleParams
    probes: list = field(default_factory=list)
    iterations_total: int = 0
    wall_time_s: float = 0.0
    settings: dict = field(default_factory=dict)


def bp_threshold(params: EnsembleParams, mode: str = "coupled", *,
                 bisect_tol: float = DEFAULT_BISECT_TOL,
                 cache: TransferCache | None = None,
                 fs_provider=None,
                 tol: float = DEFAULT_TOL,
                 zero_thresh: float = DEFAULT_ZERO_THRESH,
                 max_iters: int = DEFAULT_MAX_ITERS) -> ThresholdResult:
    """Largest channel erasure rate at which density evolution converges
    to zero, found by bisection over [0, 1 - rate]."""
    if mode not in ("uncoupled", "coupled"):
        raise ValueError("mode must be 'uncoupled' or 'coupled'")
    t0 = time.perf_counter()
    probes = []
    iters_total = 0

    def converges(e: float) -> bool:
        nonlocal iters_total
        if mode == "uncoupled":
            r = de_uncoupled_fixed_point(
                params, e, cache=cache, fs_provider=fs_provider, tol=tol,
                zero_thresh=zero_thresh, max_iters=max_iters)
        else:
            r = de_coupled_run(
                params, e, cache=cache, fs_provider=fs_provider, tol=tol,
                zero_thresh=zero_thresh, max_iters=max_iters)
        probes.append((e, r.converged_to_zero, r.iterations))
        iters_total += r.iterations
        return r.converged_to_zero

    lo = 0.0
    hi = 1.0 - params.rate
    if converges(hi):
        lo = hi
    else:
        while hi - lo > bisect_tol:
            mid = 0.5 * (lo + hi)
            if converges(mid):
                lo = mid
            else:
                hi = mid
    eps_star = 0.5 * (lo + hi)
    return ThresholdResult(
        eps_star=eps_star, lo=lo, hi=hi, mode=mode, params=params,
        probes=probes, iterations_total=iters_total,
        wall_time_s=time.perf_counter() - t0,
        settings={"bisect_tol": bisect_tol, "tol": tol,
                  "zero_thresh": zero_thresh, "max_iters": max_iters},
    )
