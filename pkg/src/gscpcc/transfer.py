"""Decoder transfer functions on the erasure channel.

``f_s(x, y)`` / ``f_p(x, y)`` give the probability that the extrinsic
output for an information / parity bit stays erased when information bits
enter the decoder erased i.i.d. with probability ``x`` and parity bits
with probability ``y``.  The 2-state code ``(1,1/3)`` has a closed form;
every code can be tabulated by Monte-Carlo over long trellises.

Standard errors are computed from batch means over trellis segments, not
from the raw binomial formula: neighbouring extrinsic outputs on one
trellis are correlated, and per-point acceptance checks at 3*stderr need
the honest value.
"""

from __future__ import annotations

import io
import math
import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.random import SeedSequence, default_rng
from scipy.optimize import isotonic_regression

from .trellis import ERASED, ConvCodeSpec, Trellis, bcjr_erase, build_trellis, encode

TWO_STATE = ConvCodeSpec.from_label("(1,1/3)")


def fs_closed_2state(x, y):
    """Information-bit transfer function of the 2-state code, exact.

    Continuous on the closed unit square with the convention that the
    removable 0/0 point (x=0, y=1) evaluates to 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    den = (1.0 - y + x * y) ** 2
    num = x * y * (2.0 - 2.0 * y + x * y)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def fs_closed_2state_integral(a, eps, y):
    """Exact integral of z -> fs_closed_2state(eps*z, y) from 0 to a."""
    a = np.asarray(a, dtype=np.float64)
    c = eps * y
    den = c * a - y + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0.0, c * a * a / np.where(den > 0.0, den, 1.0), a)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class TransferEstimate:
    fs: float
    fp: float
    stderr_s: float
    stderr_p: float
    n_info: int
    n_parity: int


@dataclass(frozen=True)
class TabulateBudget:
    """Monte-Carlo effort for one table: `trials` independent trellises of
    `trellis_len` sections per grid point, with `margin` sections dropped
    at both ends against boundary effects.

    By default the same random draws are reused at every y, so tables at
    nearby parity erasure rates share their noise and threshold curves
    stay smooth under parameter sweeps; `seed_with_y` switches to
    independent noise per table, which is what integrations over eps want.
    """

    trellis_len: int = 100_000
    trials: int = 1
    seed: int = 7
    grid_n: int = 201
    margin: int | None = None
    batch_len: int = 32768
    seed_with_y: bool = False


DEFAULT_BUDGET = TabulateBudget()


def _auto_margin(n: int, margin: int | None) -> int:
    if margin is None:
        margin = min(512, n // 8)
    return int(min(margin, max(0, (n - 2) // 2)))


def _ratio_and_stderr(num_batches, den_batches):
    """Ratio estimate with a cluster-robust standard error over batches."""
    num_batches = np.asarray(num_batches, dtype=np.float64)
    den_batches = np.asarray(den_batches, dtype=np.float64)
    D = den_batches.sum()
    if D <= 0:
        return 0.0, 0.0, 0
    p = num_batches.sum() / D
    B = len(den_batches)
    if B < 2:
        var = p * (1.0 - p) / D
    else:
        resid = num_batches - p * den_batches
        var = float(resid @ resid) / (D * D) * B / (B - 1.0)
    return float(p), math.sqrt(max(var, 0.0)), int(D)


def _simulate_points(trellis: Trellis, xs, y, trellis_len, trials, seed,
                     margin, batch_len, seed_with_y=False):
    """Per-point batch counts for a set of info erasure rates at fixed y.

    One random codeword and one set of erasure uniforms per trial are
    shared across all x values, so estimates along the grid use common
    random numbers and vary smoothly in x.
    """
    n = int(trellis_len)
    margin = _auto_margin(n, margin)
    interior = slice(margin, n - margin)
    n_int = n - 2 * margin
    blen = int(np.clip(n_int // 16, 256, batch_len))
    nb = n_int // blen
    used = nb * blen
    xs = np.asarray(xs, dtype=np.float64)
    k = len(xs)
    num_s = [[] for _ in range(k)]
    den_s = [[] for _ in range(k)]
    num_p = [[] for _ in range(k)]
    den_p = [[] for _ in range(k)]
    entropy_base = (int(seed), int(round(y * 1e8))) if seed_with_y else (int(seed),)
    for trial in range(trials):
        rng = default_rng(SeedSequence(entropy=entropy_base + (trial,)))
        info = rng.integers(0, 2, size=n, dtype=np.int8)
        parity, _ = encode(trellis, info, 0)
        u_i = rng.random(n)
        u_p = rng.random(n)
        pobs = np.where(u_p < y, ERASED, parity).astype(np.int8)
        par_erased = (pobs[interior] == ERASED)[:used].reshape(nb, blen)
        for j, x in enumerate(xs):
            if x <= 0.0:
                continue
            iobs = np.where(u_i < x, ERASED, info).astype(np.int8)
            ext_i, ext_p = bcjr_erase(trellis, iobs, pobs,
                                      start_state=0, end_state=None)
            inf_erased = (iobs[interior] == ERASED)[:used].reshape(nb, blen)
            inf_stuck = (ext_i[interior] == ERASED)[:used].reshape(nb, blen)
            par_stuck = (ext_p[interior] == ERASED)[:used].reshape(nb, blen)
            den_s[j].append(inf_erased.sum(axis=1))
            num_s[j].append((inf_erased & inf_stuck).sum(axis=1))
            den_p[j].append(par_erased.sum(axis=1))
            num_p[j].append((par_erased & par_stuck).sum(axis=1))
    out = []
    for j in range(k):
        if xs[j] <= 0.0:
            out.append(TransferEstimate(0.0, 0.0, 0.0, 0.0, 0, 0))
            continue
        fs, se_s, n_i = _ratio_and_stderr(np.concatenate(num_s[j]),
                                          np.concatenate(den_s[j]))
        fp, se_p, n_p = _ratio_and_stderr(np.concatenate(num_p[j]),
                                          np.concatenate(den_p[j]))
        out.append(TransferEstimate(fs, fp, se_s, se_p, n_i, n_p))
    return out


def estimate_transfer(code: ConvCodeSpec, x: float, y: float,
                      trellis_len: int = 100_000, trials: int = 1,
                      seed: int = 0, *, margin: int | None = None,
                      batch_len: int = 32768) -> TransferEstimate:
    """Monte-Carlo point estimate of (fs, fp) with standard errors.

    ``x == 0`` needs no simulation: with all information bits known the
    trellis path is determined, so both extrinsic outputs are known.
    """
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError("erasure probabilities must lie in [0, 1]")
    if x == 0.0:
        return TransferEstimate(0.0, 0.0, 0.0, 0.0, 0, 0)
    trellis = build_trellis(code)
    return _simulate_points(trellis, [x], y, trellis_len, trials, seed,
                            margin, batch_len)[0]


@dataclass
class TransferTable:
    """Tabulated (fs, fp) over an x-grid at fixed parity erasure rate y.

    Values are isotonically projected so the density-evolution maps built
    on top stay monotone.  ``exact`` marks closed-form tables (zero
    stderr, no parity column).
    """

    code: ConvCodeSpec
    y: float
    grid_x: np.ndarray
    fs: np.ndarray
    fp: np.ndarray
    stderr_s: np.ndarray
    stderr_p: np.ndarray
    trellis_len: int
    trials: int
    seed: int
    margin: int = 0
    exact: bool = False

    @cached_property
    def _fs_cum(self):
        cells = 0.5 * (self.fs[1:] + self.fs[:-1]) * np.diff(self.grid_x)
        return np.concatenate(([0.0], np.cumsum(cells)))

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.grid_x)
        return bool(np.allclose(d, d[0]))

    def fs_at(self, x):
        return np.interp(x, self.grid_x, self.fs)

    def fp_at(self, x):
        if np.isnan(self.fp).any():
            raise ValueError("table has no parity transfer values")
        return np.interp(x, self.grid_x, self.fp)

    def fs_integral(self, a):
        """Integral of the piecewise-linear fs interpolant from 0 to a."""
        a = np.clip(np.asarray(a, dtype=np.float64), 0.0, self.grid_x[-1])
        i = np.clip(np.searchsorted(self.grid_x, a, side="right") - 1,
                    0, len(self.grid_x) - 2)
        x0 = self.grid_x[i]
        dx = self.grid_x[i + 1] - x0
        fa = self.fs[i] + (self.fs[i + 1] - self.fs[i]) * (a - x0) / dx
        out = self._fs_cum[i] + 0.5 * (self.fs[i] + fa) * (a - x0)
        if out.ndim == 0:
            return float(out)
        return out

    def fs_uniform(self, n: int | None = None) -> np.ndarray:
        """fs resampled onto a uniform [0, 1] grid (as-is when already uniform)."""
        if n is None and self.is_uniform and self.grid_x[0] == 0.0 \
                and self.grid_x[-1] == 1.0:
            return self.fs
        n = n or len(self.grid_x)
        return np.interp(np.linspace(0.0, 1.0, n), self.grid_x, self.fs)

    def integral_stderr(self) -> float:
        """Standard error of the trapezoidal integral of fs over the grid."""
        w = np.empty_like(self.grid_x)
        d = np.diff(self.grid_x)
        w[0] = d[0] / 2
        w[-1] = d[-1] / 2
        w[1:-1] = (d[1:] + d[:-1]) / 2
        return float(np.sqrt(np.sum((w * self.stderr_s) ** 2)))

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# gscpcc transfer table\n")
        buf.write(f"# code {self.code.octal_label}\n")
        buf.write(f"# y {self.y!r}\n")
        buf.write(f"# trellis_len {self.trellis_len}\n")
        buf.write(f"# trials {self.trials}\n")
        buf.write(f"# seed {self.seed}\n")
        buf.write(f"# margin {self.margin}\n")
        buf.write(f"# exact {int(self.exact)}\n")
        buf.write("# columns x fs fp stderr_s stderr_p\n")
        for row in zip(self.grid_x, self.fs, self.fp,
                       self.stderr_s, self.stderr_p):
            buf.write(" ".join(f"{v!r}" for v in row) + "\n")
        return buf.getvalue()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "TransferTable":
        meta = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split(None, 1)
                if len(parts) == 2:
                    meta[parts[0]] = parts[1]
                continue
            rows.append([float(v) for v in line.split()])
        data = np.asarray(rows, dtype=np.float64)
        return cls(
            code=ConvCodeSpec.from_label(meta["code"]),
            y=float(meta["y"]),
            grid_x=data[:, 0], fs=data[:, 1], fp=data[:, 2],
            stderr_s=data[:, 3], stderr_p=data[:, 4],
            trellis_len=int(meta.get("trellis_len", 0)),
            trials=int(meta.get("trials", 0)),
            seed=int(meta.get("seed", 0)),
            margin=int(meta.get("margin", 0)),
            exact=bool(int(meta.get("exact", 0))),
        )

    @classmethod
    def load(cls, path) -> "TransferTable":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _isotonic(values, weights):
    w = np.maximum(np.asarray(weights, dtype=np.float64), 1.0)
    res = isotonic_regression(np.asarray(values, dtype=np.float64),
                              weights=w, increasing=True)
    return np.clip(res.x, 0.0, 1.0)


def tabulate(code: ConvCodeSpec, y: float, grid=None,
             budget: TabulateBudget | None = None) -> TransferTable:
    """Monte-Carlo table over an x-grid (must include 0 and 1) at fixed y."""
    budget = budget or DEFAULT_BUDGET
    if grid is None:
        grid = np.linspace(0.0, 1.0, budget.grid_n)
    grid = np.asarray(grid, dtype=np.float64)
    if grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be sorted and span [0, 1]")
    trellis = build_trellis(code)
    pts = _simulate_points(trellis, grid, y, budget.trellis_len,
                           budget.trials, budget.seed, budget.margin,
                           budget.batch_len, budget.seed_with_y)
    fs_raw = np.array([p.fs for p in pts])
    fp_raw = np.array([p.fp for p in pts])
    n_s = np.array([p.n_info for p in pts])
    n_p = np.array([p.n_parity for p in pts])
    fs = _isotonic(fs_raw, n_s)
    fp = _isotonic(fp_raw, n_p)
    fs[0] = 0.0
    fp[0] = 0.0
    return TransferTable(
        code=code, y=float(y), grid_x=grid, fs=fs, fp=fp,
        stderr_s=np.array([p.stderr_s for p in pts]),
        stderr_p=np.array([p.stderr_p for p in pts]),
        trellis_len=budget.trellis_len, trials=budget.trials,
        seed=budget.seed, margin=_auto_margin(budget.trellis_len, budget.margin),
    )


def closed_form_table(y: float, grid_n: int = 2001) -> TransferTable:
    """Exact table for the 2-state code (no parity column)."""
    grid = np.linspace(0.0, 1.0, grid_n)
    zeros = np.zeros(grid_n)
    return TransferTable(
        code=TWO_STATE, y=float(y), grid_x=grid,
        fs=fs_closed_2state(grid, y), fp=np.full(grid_n, np.nan),
        stderr_s=zeros, stderr_p=zeros,
        trellis_len=0, trials=0, seed=0, exact=True,
    )


def integral_identity(table: TransferTable) -> float:
    """|trapezoidal integral of fs over [0, 1] minus y|.

    The exact information-bit transfer function of a rate-1/2 code
    integrates to y; tabulation noise and discretisation leave a residual.
    """
    return float(abs(np.trapezoid(table.fs, table.grid_x) - table.y))


class TransferCache:
    """Tables keyed by (code, y rounded to 1e-4); builds on first use.

    The 2-state code is served from its closed form unless parity values
    are required.  Tables are built at the quantised y so repeated lookups
    are deterministic.
    """

    def __init__(self, budget: TabulateBudget | None = None,
                 use_closed_2state: bool = True):
        self.budget = budget or DEFAULT_BUDGET
        self.use_closed_2state = use_closed_2state
        self._tables: dict = {}
        self._lock = threading.Lock()

    def get(self, code: ConvCodeSpec, y: float,
            need_parity: bool = False) -> TransferTable:
        ykey = int(round(float(y) * 10000))
        closed = (self.use_closed_2state and not need_parity
                  and code == TWO_STATE)
        key = (code.octal_label, ykey, closed)
        with self._lock:
            table = self._tables.get(key)
            if table is None:
                yq = ykey / 10000.0
                if closed:
                    table = closed_form_table(yq)
                else:
                    table = tabulate(code, yq, budget=self.budget)
                self._tables[key] = table
        return table

    def __len__(self):
        return len(self._tables)


class TransferGrid:
    """fs on a fixed y-lattice with linear blending between lattice rows.

    Parameter sweeps move the parity erasure rate continuously; rebuilding
    a Monte-Carlo table per probe would dominate the runtime and make the
    sweep landscape noisy.  Blending between frozen lattice tables keeps
    evaluation smooth and deterministic.  Lattice nodes are built lazily
    through the shared cache.
    """

    def __init__(self, code: ConvCodeSpec, cache: TransferCache,
                 y_step: float = 0.0025):
        if not 0.0 < y_step <= 0.5:
            raise ValueError("y_step must be in (0, 0.5]")
        self.code = code
        self.cache = cache
        self.y_step = y_step
        self._n = int(round(1.0 / y_step))

    def _node(self, j: int) -> np.ndarray:
        return self.cache.get(self.code, min(j, self._n) * self.y_step).fs_uniform()

    def fs_row(self, y: float) -> np.ndarray:
        y = float(np.clip(y, 0.0, 1.0))
        j = min(int(y / self.y_step), self._n - 1)
        t = y / self.y_step - j
        lo = self._node(j)
        if t == 0.0:
            return lo
        return (1.0 - t) * lo + t * self._node(j + 1)
