"""Finite-length coupled-code instances: encoding, BEC transmission,
iterative erasure decoding, and BER/FER measurement.

One instance fixes three interleavers, the repetition layout, the random
split of each component input across the m+1 coupling offsets, and the
puncturing mode.  The same maps are reused at every time instant.  On the
erasure channel the decoder tracks, for every trellis socket, whether its
last extrinsic output is known; a bit is recovered once its channel
observation or any socket extrinsic is known, and the input to a socket
combines everything known about its bit except that socket's own previous
output.  Knowledge only grows, so decoding terminates.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numpy.random import SeedSequence, default_rng

from .de import EnsembleParams
from .trellis import ERASED, Trellis, bcjr_erase, build_trellis, encode


class CouplingInfeasible(ValueError):
    """No coupling-offset assignment satisfies the spreading criterion."""


@dataclass
class ObservationChain:
    """Per-instant ternary sequences: systematic bits (blocks 1..L) and the
    two punctured parity streams (instants 1..L+m)."""

    info: np.ndarray      # int8 [L, K]
    parity_u: np.ndarray  # int8 [T, K']
    parity_l: np.ndarray  # int8 [T, K']

    @property
    def transmitted_bits(self) -> int:
        return int((self.info != ERASED).sum()
                   + (self.parity_u != ERASED).sum()
                   + (self.parity_l != ERASED).sum())

    @property
    def info_bits(self) -> int:
        return self.info.size

    @property
    def empirical_rate(self) -> float:
        return self.info_bits / self.transmitted_bits


@dataclass
class CodeInstance:
    params: EnsembleParams
    K: int                    # realized info bits per block
    K_requested: int
    K_prime: int
    n_repeat: int             # length of the repeated part u_r
    realized_lam: float
    src_of_pos: np.ndarray    # component-input position -> source info index
    Pi: np.ndarray            # lower copy: lower_seq[p] = s[Pi[p]]
    Pi_U: np.ndarray          # upper encoder interleaver over the assembled input
    Pi_L: np.ndarray
    offsets_U: np.ndarray     # component-input position -> coupling offset
    offsets_L: np.ndarray     # lower-sequence position -> coupling offset
    puncture_mode: str        # "random" | "fixed"
    n_parity_kept: int
    puncture_fixed: np.ndarray | None
    seed: int
    criterion_enabled: bool
    trellis: Trellis = field(repr=False, default=None)
    up_off: np.ndarray = field(repr=False, default=None)
    up_src: np.ndarray = field(repr=False, default=None)
    lo_off: np.ndarray = field(repr=False, default=None)
    lo_src: np.ndarray = field(repr=False, default=None)

    @property
    def T(self) -> int:
        """Number of encoding instants (parity is produced for L+m)."""
        return self.params.L + self.params.m

    @property
    def N(self) -> int:
        """Transmitted bits per regular instant."""
        return self.K + 2 * self.n_parity_kept


def _encoder_maps(offsets, seg_len, m, position_source):
    """Static maps from encoder position to (block offset, source index).

    The assembled input at instant t concatenates the offset-j segments of
    blocks t-m..t, oldest block first, then passes through the per-encoder
    interleaver (applied by the caller via Pi).
    """
    order = np.concatenate([np.nonzero(offsets == j)[0]
                            for j in range(m, -1, -1)])
    a_off = m - np.arange(len(offsets)) // seg_len
    return a_off.astype(np.int32), position_source[order].astype(np.int32), order


def build_instance(params: EnsembleParams, K: int, seed: int = 0,
                   criterion_enabled: bool = False,
                   puncture: str = "random",
                   max_rounds: int = 200) -> CodeInstance:
    """Draw a concrete code: interleavers, repetition map, coupling split.

    K' is the nearest multiple of m+1 to K/(1-(q-1)lam); the repeated-part
    length is rounded to an integer and the realized ratio recorded.  With
    the spreading criterion enabled, offenders are re-spread by balanced
    offset swaps until every repeated bit either occupies two upper
    offsets or differs between the streams; impossible layouts (e.g.
    m = 0 with repetition) raise.
    """
    q, lam, m = params.q, params.lam, params.m
    if puncture not in ("random", "fixed"):
        raise ValueError("puncture must be 'random' or 'fixed'")
    kp0 = K / (1.0 - (q - 1) * lam)
    K_prime = max(int(round(kp0 / (m + 1))) * (m + 1), m + 1)
    r = int(round(lam * K_prime))
    realized_lam = r / K_prime
    K_real = K_prime - (q - 1) * r
    seg_len = K_prime // (m + 1)

    # component-input layout: q copies of u_r, then u_o
    src = np.empty(K_prime, dtype=np.int32)
    if r:
        src[:q * r] = np.tile(np.arange(r, dtype=np.int32), q)
    src[q * r:] = np.arange(r, K_real, dtype=np.int32)

    rng = default_rng(SeedSequence(entropy=(int(seed), 0xC0DE)))
    Pi = rng.permutation(K_prime).astype(np.int32)
    Pi_U = rng.permutation(K_prime).astype(np.int32)
    Pi_L = rng.permutation(K_prime).astype(np.int32)
    # consecutive decomposition into m+1 equal segments; all randomness
    # sits in the three interleavers
    offsets = (np.arange(K_prime) // seg_len).astype(np.int8)

    inst = CodeInstance(
        params=params, K=K_real, K_requested=K, K_prime=K_prime,
        n_repeat=r, realized_lam=realized_lam, src_of_pos=src,
        Pi=Pi, Pi_U=Pi_U, Pi_L=Pi_L,
        offsets_U=offsets, offsets_L=offsets.copy(),
        puncture_mode=puncture,
        n_parity_kept=int(round(params.rho * K_prime)),
        puncture_fixed=None, seed=seed,
        criterion_enabled=criterion_enabled,
    )
    if puncture == "fixed":
        inst.puncture_fixed = np.linspace(
            0, K_prime, inst.n_parity_kept, endpoint=False).astype(np.int64)

    if criterion_enabled and q >= 2 and r > 0:
        # re-draw lower-interleaver entries of offending bits until every
        # repeated bit spreads over distinct instants in one of the streams
        for _ in range(max_rounds):
            bad = _criterion_offenders(inst)
            if len(bad) == 0:
                break
            if m == 0:
                raise CouplingInfeasible(
                    "single coupling offset: criterion unsatisfiable")
            inv_pi = np.argsort(inst.Pi)
            for i in bad:
                p = int(rng.integers(0, q)) * r + i
                pl = int(inv_pi[p])
                away = np.nonzero(inst.offsets_L != inst.offsets_L[pl])[0]
                pl2 = int(rng.choice(away))
                inst.Pi[pl], inst.Pi[pl2] = inst.Pi[pl2], inst.Pi[pl]
                inv_pi[inst.Pi[pl]] = pl
                inv_pi[inst.Pi[pl2]] = pl2
        else:
            raise CouplingInfeasible(
                f"criterion unsatisfied after {max_rounds} repair rounds "
                f"(q={q}, lam={lam}, m={m})")

    _finalize(inst)
    return inst


def _finalize(inst: CodeInstance):
    m = inst.params.m
    seg_len = inst.K_prime // (m + 1)
    inst.trellis = build_trellis(inst.params.code)
    a_off_u, a_src_u, _ = _encoder_maps(inst.offsets_U, seg_len, m,
                                        inst.src_of_pos)
    inst.up_off = a_off_u[inst.Pi_U]
    inst.up_src = a_src_u[inst.Pi_U]
    lower_source = inst.src_of_pos[inst.Pi]
    a_off_l, a_src_l, _ = _encoder_maps(inst.offsets_L, seg_len, m,
                                        lower_source)
    inst.lo_off = a_off_l[inst.Pi_L]
    inst.lo_src = a_src_l[inst.Pi_L]


def _upper_offsets_of_bit(inst: CodeInstance, i: int) -> set:
    r = inst.n_repeat
    return {int(inst.offsets_U[c * r + i]) for c in range(inst.params.q)}


def _lower_offsets_of_bit(inst: CodeInstance, inv_pi: np.ndarray, i: int) -> set:
    r = inst.n_repeat
    return {int(inst.offsets_L[inv_pi[c * r + i]])
            for c in range(inst.params.q)}


def _criterion_offenders(inst: CodeInstance) -> list:
    inv_pi = np.argsort(inst.Pi)
    bad = []
    for i in range(inst.n_repeat):
        up = _upper_offsets_of_bit(inst, i)
        if len(up) > 1:
            continue
        lo = _lower_offsets_of_bit(inst, inv_pi, i)
        if lo == up:
            bad.append(i)
    return bad


def coupling_criterion_check(instance: CodeInstance) -> bool:
    """True iff no repeated bit has all its placements, in both streams,
    concentrated at one common time offset (vacuous without repetition)."""
    if instance.params.q < 2 or instance.n_repeat == 0:
        return True
    return len(_criterion_offenders(instance)) == 0


def _component_inputs(inst: CodeInstance, u: np.ndarray, tau: int, upper: bool):
    """Encoder input bits at instant tau from the info blocks (zeros
    outside the chain)."""
    off = inst.up_off if upper else inst.lo_off
    src = inst.up_src if upper else inst.lo_src
    b = tau - off
    valid = (b >= 0) & (b < inst.params.L)
    bits = np.zeros(inst.K_prime, dtype=np.int8)
    idx = b.clip(0, inst.params.L - 1) * inst.K + src
    bits[valid] = u.reshape(-1)[idx[valid]]
    return bits


def _kept_mask(inst: CodeInstance, rng) -> np.ndarray:
    """Surviving parity positions per (instant, stream)."""
    T = inst.T
    kept = np.zeros((2, T, inst.K_prime), dtype=bool)
    if inst.puncture_mode == "fixed":
        kept[:, :, inst.puncture_fixed] = True
        return kept
    if rng is None:
        raise ValueError("random puncturing needs an rng")
    for s in range(2):
        for tau in range(T):
            kept[s, tau, rng.permutation(inst.K_prime)[:inst.n_parity_kept]] = True
    return kept


def encode_chain(inst: CodeInstance, info_bits, rng=None) -> ObservationChain:
    """Encode K*L info bits; punctured parity positions are emitted ERASED.

    Each instant's component trellises start in state zero and are not
    terminated; the chain itself is terminated by the zero blocks beyond L.
    """
    L, m = inst.params.L, inst.params.m
    T = inst.T
    u = np.asarray(info_bits, dtype=np.int8).reshape(L, inst.K)
    parity_u = np.empty((T, inst.K_prime), dtype=np.int8)
    parity_l = np.empty((T, inst.K_prime), dtype=np.int8)
    for tau in range(T):
        pu, _ = encode(inst.trellis, _component_inputs(inst, u, tau, True), 0)
        pl, _ = encode(inst.trellis, _component_inputs(inst, u, tau, False), 0)
        parity_u[tau] = pu
        parity_l[tau] = pl
    kept = _kept_mask(inst, rng)
    parity_u[~kept[0]] = ERASED
    parity_l[~kept[1]] = ERASED
    return ObservationChain(info=u.copy(), parity_u=parity_u,
                            parity_l=parity_l)


def bec_channel(chain: ObservationChain, eps: float, rng) -> ObservationChain:
    """Erase every transmitted bit independently with probability eps."""
    def hit(a):
        out = a.copy()
        mask = (out != ERASED) & (rng.random(out.shape) < eps)
        out[mask] = ERASED
        return out
    return ObservationChain(info=hit(chain.info),
                            parity_u=hit(chain.parity_u),
                            parity_l=hit(chain.parity_l))


@dataclass
class DecodeResult:
    info_hat: np.ndarray    # int8 [L, K], ERASED where unrecovered
    erased: np.ndarray      # bool [L, K]
    inter_rounds: int
    bcjr_calls: int


class _ChainDecoder:
    def __init__(self, inst: CodeInstance, obs: ObservationChain,
                 max_intra: int, max_inter: int):
        self.inst = inst
        self.max_intra = max_intra
        self.max_inter = max_inter
        L, K = inst.params.L, inst.K
        self.L, self.K, self.T = L, K, inst.T
        self.m = inst.params.m
        self.ch = obs.info.reshape(-1).copy()
        self.val = self.ch.copy()
        self.cnt = np.zeros(L * K, dtype=np.int32)
        self.ext = [np.full((self.T, inst.K_prime), ERASED, dtype=np.int8)
                    for _ in range(2)]
        self.par_obs = [obs.parity_u, obs.parity_l]
        self.off = [inst.up_off, inst.lo_off]
        self.src = [inst.up_src, inst.lo_src]
        self.dirty = np.ones(self.T, dtype=bool)
        self.bcjr_calls = 0

    def _pass_stream(self, tau: int, s: int) -> bool:
        inst = self.inst
        b = tau - self.off[s]
        valid = (b >= 0) & (b < self.L)
        idx = b.clip(0, self.L - 1) * self.K + self.src[s]
        ext_self = self.ext[s][tau]
        self_known = (ext_self != ERASED).astype(np.int32)
        others = self.cnt[idx] - self_known
        known = valid & ((self.ch[idx] != ERASED) | (others > 0))
        iobs = np.zeros(inst.K_prime, dtype=np.int8)
        iobs[valid] = np.where(known[valid], self.val[idx[valid]], ERASED)
        ext_i, _ = bcjr_erase(inst.trellis, iobs, self.par_obs[s][tau],
                              start_state=0, end_state=None)
        self.bcjr_calls += 1
        fresh = valid & (ext_i != ERASED) & (ext_self == ERASED)
        ext_self[valid] = ext_i[valid]
        if not fresh.any():
            return False
        hit = idx[fresh]
        np.add.at(self.cnt, hit, 1)
        self.val[hit] = ext_i[fresh]
        for blk in np.unique(b[fresh]):
            self.dirty[blk:blk + self.m + 1] = True
        return True

    def _decode_instant(self, tau: int) -> bool:
        progressed = False
        for _ in range(self.max_intra):
            a = self._pass_stream(tau, 0)
            c = self._pass_stream(tau, 1)
            progressed |= a or c
            if not (a or c):
                break
        self.dirty[tau] = False
        return progressed

    def run(self, taus=None) -> int:
        taus = np.arange(self.T) if taus is None else np.asarray(taus)
        rounds = 0
        for _ in range(self.max_inter):
            progressed = False
            for tau in taus:
                if self.dirty[tau]:
                    progressed |= self._decode_instant(tau)
            for tau in taus[::-1]:
                if self.dirty[tau]:
                    progressed |= self._decode_instant(tau)
            rounds += 1
            if not progressed:
                break
        return rounds


def decode_chain(inst: CodeInstance, obs: ObservationChain,
                 max_intra: int = 20, max_inter: int = 20,
                 window: int | None = None) -> DecodeResult:
    """Iterative erasure decoding; full-chain sweeps or a sliding window.

    A window of size W >= m+1 processes instants [w, w+W) before advancing
    past block w, reusing everything already recovered.
    """
    dec = _ChainDecoder(inst, obs, max_intra, max_inter)
    if window is None:
        rounds = dec.run()
    else:
        W = int(window)
        if W < inst.params.m + 1:
            raise ValueError("window must be at least m+1")
        rounds = 0
        for w in range(inst.params.L):
            taus = np.arange(w, min(w + W, dec.T))
            dec.dirty[taus] = True
            rounds += dec.run(taus)
    val = dec.val.reshape(inst.params.L, inst.K)
    return DecodeResult(info_hat=val, erased=val == ERASED,
                        inter_rounds=rounds, bcjr_calls=dec.bcjr_calls)


@dataclass(frozen=True)
class SimConfig:
    """One finite-length experiment setup (seeds mandatory)."""

    params: EnsembleParams
    K: int
    instance_seed: int = 0
    criterion_enabled: bool = False
    puncture: str = "random"
    max_intra: int = 20
    max_inter: int = 20
    window: int | None = None
    all_zero: bool = True


@dataclass
class BerPoint:
    eps: float
    bits: int
    erased_bits: int
    ber: float
    frames: int
    frame_errors: int
    fer: float
    ci_low: float
    ci_high: float
    seed: int


def _wilson(k: int, n: int, z: float = 1.96):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


def _zero_chain(inst: CodeInstance, rng) -> ObservationChain:
    T = inst.T
    parity_u = np.zeros((T, inst.K_prime), dtype=np.int8)
    parity_l = np.zeros((T, inst.K_prime), dtype=np.int8)
    kept = _kept_mask(inst, rng)
    parity_u[~kept[0]] = ERASED
    parity_l[~kept[1]] = ERASED
    info = np.zeros((inst.params.L, inst.K), dtype=np.int8)
    return ObservationChain(info=info, parity_u=parity_u, parity_l=parity_l)


def simulate_frame(inst: CodeInstance, config: SimConfig, eps: float,
                   rng) -> DecodeResult:
    """One channel realization: puncture, erase, decode."""
    if config.all_zero:
        chain = _zero_chain(inst, rng if inst.puncture_mode == "random" else None)
    else:
        info = rng.integers(0, 2, size=(inst.params.L, inst.K), dtype=np.int8)
        chain = encode_chain(inst, info,
                             rng if inst.puncture_mode == "random" else None)
    obs = bec_channel(chain, eps, rng)
    res = decode_chain(inst, obs, config.max_intra, config.max_inter,
                       config.window)
    if not config.all_zero:
        ok = res.info_hat[~res.erased] == chain.info[~res.erased]
        if not bool(np.all(ok)):
            raise AssertionError("erasure decoder produced a wrong bit")
    return res


def ber_experiment(config: SimConfig, eps_list, min_errors: int = 300,
                   max_bits: int = 10_000_000, seed: int = 0) -> list:
    """Measured bit/frame erasure rates per channel parameter.

    Each point accumulates frames until `min_errors` residual info-bit
    erasures are seen or `max_bits` info bits are consumed.  Frame f of
    point eps uses the derived seed (seed, point index, f), so results do
    not depend on how many frames other points needed.
    """
    inst = build_instance(config.params, config.K, config.instance_seed,
                          config.criterion_enabled, config.puncture)
    points = []
    for pi, eps in enumerate(eps_list):
        bits = erased = frames = frame_errors = 0
        while bits < max_bits and (erased < min_errors or frames < 2):
            rng = default_rng(SeedSequence(entropy=(int(seed), pi, frames)))
            res = simulate_frame(inst, config, float(eps), rng)
            n_bad = int(res.erased.sum())
            bits += res.erased.size
            erased += n_bad
            frames += 1
            frame_errors += int(n_bad > 0)
            if eps == 0.0:
                break
        lo, hi = _wilson(erased, bits)
        points.append(BerPoint(
            eps=float(eps), bits=bits, erased_bits=erased,
            ber=erased / bits if bits else 0.0,
            frames=frames, frame_errors=frame_errors,
            fer=frame_errors / frames if frames else 0.0,
            ci_low=lo, ci_high=hi, seed=seed))
    return points
