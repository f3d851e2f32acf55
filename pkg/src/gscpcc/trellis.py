"""Rate-1/2 recursive systematic convolutional codes and exact erasure decoding.

A code is given in the usual octal form ``(1, ff/fb)``: systematic output
plus one parity stream with feedforward polynomial ``ff`` and feedback
polynomial ``fb``.  On the erasure channel every decoder message is one of
{known 0, known 1, erased}, so bitwise-MAP BCJR decoding reduces to exact
set propagation over the trellis states; forward and backward state sets
are kept as bitmasks and all per-section updates are table lookups.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels

ERASED = 2  # third symbol of the ternary observation alphabet {0, 1, ERASED}


class InvalidCodeSpec(ValueError):
    pass


class InfeasibleObservation(ValueError):
    """Observations consistent with no trellis path."""


def _taps_from_octal(value: int, memory: int) -> tuple[int, ...]:
    bits = bin(value)[2:]
    if len(bits) > memory + 1:
        raise InvalidCodeSpec(f"polynomial {value:o} exceeds memory {memory}")
    bits = bits.zfill(memory + 1)
    return tuple(int(b) for b in bits)


def _octal_from_taps(taps: tuple[int, ...]) -> str:
    return format(int("".join(str(b) for b in taps), 2), "o")


@dataclass(frozen=True)
class ConvCodeSpec:
    """Rate-1/2 recursive systematic convolutional code.

    ``feedforward_taps``/``feedback_taps`` hold the polynomial coefficients
    (constant term first, length ``memory + 1``).  The feedback constant
    term must be set: the encoder is recursive and the systematic output is
    the raw input bit.
    """

    feedforward_taps: tuple[int, ...]
    feedback_taps: tuple[int, ...]
    memory: int
    octal_label: str

    def __post_init__(self):
        if self.memory < 1:
            raise InvalidCodeSpec("memory must be >= 1")
        for taps in (self.feedforward_taps, self.feedback_taps):
            if len(taps) != self.memory + 1:
                raise InvalidCodeSpec("tap vectors must have length memory + 1")
            if any(b not in (0, 1) for b in taps):
                raise InvalidCodeSpec("taps must be bits")
        if self.feedback_taps[0] != 1:
            raise InvalidCodeSpec("feedback tap 0 must be set (recursive encoder)")
        if not any(self.feedforward_taps):
            raise InvalidCodeSpec("feedforward polynomial must be nonzero")

    @classmethod
    def from_label(cls, label: str) -> "ConvCodeSpec":
        """Parse the octal text form, e.g. ``"(1,5/7)"`` or ``"1,5/7"``."""
        text = label.strip().replace(" ", "")
        if text.startswith("(") and text.endswith(")"):
            text = text[1:-1]
        try:
            sys_part, frac = text.split(",")
            ff_txt, fb_txt = frac.split("/")
            if sys_part != "1":
                raise ValueError
            ff = int(ff_txt, 8)
            fb = int(fb_txt, 8)
        except ValueError as exc:
            raise InvalidCodeSpec(f"cannot parse code label {label!r}") from exc
        memory = fb.bit_length() - 1
        if memory < 1:
            raise InvalidCodeSpec(f"feedback polynomial {fb_txt} gives memory < 1")
        return cls(
            feedforward_taps=_taps_from_octal(ff, memory),
            feedback_taps=_taps_from_octal(fb, memory),
            memory=memory,
            octal_label=f"(1,{_octal_from_taps(_taps_from_octal(ff, memory))}"
                        f"/{_octal_from_taps(_taps_from_octal(fb, memory))})",
        )

    @property
    def num_states(self) -> int:
        return 1 << self.memory


def as_ternary(seq) -> np.ndarray:
    """Validate/convert a sequence over {0, 1, ERASED} to an int8 array."""
    arr = np.asarray(seq, dtype=np.int8)
    if arr.ndim != 1:
        raise ValueError("ternary sequences are one-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() > ERASED):
        raise ValueError("ternary symbols must be 0, 1 or ERASED")
    return arr


class Trellis:
    """State-transition structure of a rate-1/2 recursive systematic code.

    ``next_state[s, b]`` and ``parity[s, b]`` give the successor state and
    parity output for input bit ``b`` from state ``s``.  No per-block
    termination is modelled; decoding boundaries are passed per call.
    """

    def __init__(self, spec: ConvCodeSpec, next_state: np.ndarray, parity: np.ndarray):
        self.spec = spec
        self.num_states = spec.num_states
        self.next_state = next_state
        self.parity = parity

    @cached_property
    def _bcjr_tables(self):
        return _build_bcjr_tables(self)

    def __repr__(self):
        return f"Trellis({self.spec.octal_label}, states={self.num_states})"


def build_trellis(spec: ConvCodeSpec) -> Trellis:
    """Expand a code spec into its trellis (2**memory states)."""
    nu = spec.memory
    S = 1 << nu
    ff = spec.feedforward_taps
    fb = spec.feedback_taps
    next_state = np.zeros((S, 2), dtype=np.uint8)
    parity = np.zeros((S, 2), dtype=np.int8)
    for s in range(S):
        regs = [(s >> i) & 1 for i in range(nu)]  # regs[0] holds the newest bit
        for u in (0, 1):
            w = u
            for i in range(1, nu + 1):
                w ^= fb[i] & regs[i - 1]
            p = ff[0] & w
            for i in range(1, nu + 1):
                p ^= ff[i] & regs[i - 1]
            # shift register: new contents are [w, regs[0], ..., regs[nu-2]]
            ns = w
            for i in range(nu - 1):
                ns |= regs[i] << (i + 1)
            next_state[s, u] = ns
            parity[s, u] = p
    return Trellis(spec, next_state, parity)


def encode(trellis: Trellis, info, start_state: int = 0):
    """Encode an input bit sequence; returns (parity, end_state)."""
    info = np.asarray(info, dtype=np.int8)
    if info.size and (info.min() < 0 or info.max() > 1):
        raise ValueError("info bits must be 0/1")
    return kernels.encode_bits(info, trellis.next_state, trellis.parity,
                               int(start_state))


def _build_bcjr_tables(trellis: Trellis):
    """Mask-transition and extrinsic-agreement lookup tables.

    For S <= 8 states every reachable-state set fits one byte, so the
    whole per-section BCJR update collapses to three table lookups.
    Extrinsic entries are 0/1 (all consistent branches agree), ERASED
    (they disagree) or 3 (no consistent branch: infeasible observation).
    """
    S = trellis.num_states
    if S > 8:
        raise NotImplementedError("bitmask tables require <= 8 states")
    n_masks = 1 << S
    ns = trellis.next_state
    par = trellis.parity

    # per-state destination masks under each (info_obs, parity_obs) pair
    dm = np.zeros((3, 3, S), dtype=np.uint16)
    # per-state destination masks keyed by branch input bit / parity bit,
    # constrained by the complementary observation only (for extrinsics)
    dm_bit = np.zeros((3, 2, S), dtype=np.uint16)   # [parity_obs, input_bit, s]
    dm_par = np.zeros((3, 2, S), dtype=np.uint16)   # [info_obs, parity_bit, s]
    for s in range(S):
        for b in (0, 1):
            dest = 1 << int(ns[s, b])
            p = int(par[s, b])
            for io in (b, ERASED):
                for po in (p, ERASED):
                    dm[io, po, s] |= dest
            for po in (p, ERASED):
                dm_bit[po, b, s] |= dest
            for io in (b, ERASED):
                dm_par[io, p, s] |= dest

    def mask_or(per_state):
        # out[mask] = OR of per_state[s] over all s in mask
        out = np.zeros(n_masks, dtype=np.uint16)
        for mask in range(1, n_masks):
            low = mask & -mask
            out[mask] = out[mask ^ low] | per_state[low.bit_length() - 1]
        return out

    fwd = np.zeros((9, n_masks), dtype=np.uint8)
    bwd = np.zeros((9, n_masks), dtype=np.uint8)
    for io in range(3):
        for po in range(3):
            obs = io * 3 + po
            fwd[obs] = mask_or(dm[io, po])
            # s survives the backward pass iff some consistent branch from s
            # lands inside the backward mask
            reach = dm[io, po]
            bwd_ps = np.zeros(n_masks, dtype=np.uint16)
            for bmask in range(n_masks):
                acc = 0
                for s in range(S):
                    if reach[s] & bmask:
                        acc |= 1 << s
                bwd_ps[bmask] = acc
            bwd[obs] = bwd_ps.astype(np.uint8)

    def agreement(dm_grouped):
        # dm_grouped[obs, v, s]: destinations of branches carrying value v
        tab = np.empty((3, n_masks, n_masks), dtype=np.int8)
        for obs in range(3):
            land0 = mask_or(dm_grouped[obs, 0])
            land1 = mask_or(dm_grouped[obs, 1])
            for fmask in range(n_masks):
                c0 = land0[fmask]
                c1 = land1[fmask]
                row = tab[obs, fmask]
                for bmask in range(n_masks):
                    has0 = c0 & bmask
                    has1 = c1 & bmask
                    if has0 and has1:
                        row[bmask] = ERASED
                    elif has0:
                        row[bmask] = 0
                    elif has1:
                        row[bmask] = 1
                    else:
                        row[bmask] = 3
        return tab

    ext_info = agreement(dm_bit)
    ext_par = agreement(dm_par)
    return fwd, bwd, ext_info, ext_par


def bcjr_erase(trellis: Trellis, info_obs, parity_obs,
               start_state: int | None = 0, end_state: int | None = None):
    """Exact bitwise-MAP extrinsic decoding on the erasure channel.

    A bit's extrinsic output is known iff every trellis branch compatible
    with the forward/backward state sets and with the section observations
    *excluding that bit's own observation* agrees on its value.  ``None``
    boundary states mean a free boundary.

    Returns (ext_info, ext_parity) as ternary int8 arrays.
    """
    info_obs = as_ternary(info_obs)
    parity_obs = as_ternary(parity_obs)
    if len(info_obs) != len(parity_obs):
        raise ValueError("info and parity observations must have equal length")
    S = trellis.num_states
    full = (1 << S) - 1
    start_mask = full if start_state is None else 1 << int(start_state)
    end_mask = full if end_state is None else 1 << int(end_state)
    fwd, bwd, ext_i_tab, ext_p_tab = trellis._bcjr_tables
    ext_i, ext_p, fail = kernels.bcjr_erase_tab(
        info_obs, parity_obs, fwd, bwd, ext_i_tab, ext_p_tab,
        start_mask, end_mask)
    if fail >= 0:
        raise InfeasibleObservation(
            f"observations inconsistent with every path at section {fail}")
    return ext_i, ext_p
