# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: shift-register encoding, set-based erasure BCJR,
and density-evolution recursions.

Mirrors the pure-Python implementations in ``_pykernels``; the active
backend is picked in ``kernels`` at import time.
"""

import numpy as np

from libc.math cimport pow


BACKEND_NAME = "cython"


def encode_bits(const signed char[::1] info,
                const unsigned char[:, ::1] next_state,
                const signed char[:, ::1] parity_out,
                int start_state):
    """Run the shift register over ``info``; returns (parity, end_state)."""
    cdef Py_ssize_t n = info.shape[0]
    out = np.empty(n, dtype=np.int8)
    cdef signed char[::1] par = out
    cdef int s = start_state
    cdef Py_ssize_t t
    cdef int b
    with nogil:
        for t in range(n):
            b = info[t]
            par[t] = parity_out[s, b]
            s = next_state[s, b]
    return out, s


def bcjr_erase_tab(const signed char[::1] info_obs,
                   const signed char[::1] parity_obs,
                   const unsigned char[:, ::1] fwd_tab,
                   const unsigned char[:, ::1] bwd_tab,
                   const signed char[:, :, ::1] ext_info_tab,
                   const signed char[:, :, ::1] ext_par_tab,
                   int start_mask, int end_mask):
    """Table-driven forward/backward pass over state bitmasks (<= 8 states).

    Observation symbols are {0, 1, 2} with 2 meaning erased.  Returns
    (ext_info, ext_parity, fail_pos); fail_pos >= 0 flags an observation
    inconsistent with every trellis path.
    """
    cdef Py_ssize_t n = info_obs.shape[0]
    fmasks = np.empty(n + 1, dtype=np.uint8)
    ext_i = np.empty(n, dtype=np.int8)
    ext_p = np.empty(n, dtype=np.int8)
    cdef unsigned char[::1] fm = fmasks
    cdef signed char[::1] ei = ext_i
    cdef signed char[::1] ep = ext_p
    cdef Py_ssize_t t, fail = -1
    cdef int obs, bm, e1, e2
    with nogil:
        fm[0] = <unsigned char> start_mask
        for t in range(n):
            obs = info_obs[t] * 3 + parity_obs[t]
            fm[t + 1] = fwd_tab[obs, fm[t]]
            if fm[t + 1] == 0:
                fail = t
                break
        if fail < 0:
            bm = end_mask
            for t in range(n - 1, -1, -1):
                e1 = ext_info_tab[parity_obs[t], fm[t], bm]
                e2 = ext_par_tab[info_obs[t], fm[t], bm]
                if e1 == 3 or e2 == 3:
                    fail = t
                    break
                ei[t] = <signed char> e1
                ep[t] = <signed char> e2
                obs = info_obs[t] * 3 + parity_obs[t]
                bm = bwd_tab[obs, bm]
                if bm == 0:
                    fail = t
                    break
    return ext_i, ext_p, fail


cdef inline double _interp_unit(const double* vals, Py_ssize_t n, double x) noexcept nogil:
    # uniform grid on [0, 1] with n points
    cdef double t
    cdef Py_ssize_t i
    if x <= 0.0:
        return vals[0]
    if x >= 1.0:
        return vals[n - 1]
    t = x * (n - 1)
    i = <Py_ssize_t> t
    return vals[i] + (vals[i + 1] - vals[i]) * (t - i)


cdef inline double _info_arg(double eps, double qlam, double q,
                             double own_prev, double other) noexcept nogil:
    # erasure probability entering the info side of one component decoder
    return eps * (qlam * pow(own_prev, q - 1.0) * pow(other, q)
                  + (1.0 - qlam) * other)


def de_uncoupled(const double[::1] fs, double eps, int q, double lam,
                 double tol, double zero_thresh, long max_iters,
                 double pU0=1.0, double pL0=1.0):
    """Serial two-decoder recursion; fs is tabulated at the punctured
    parity erasure rate on a uniform x-grid.  Returns (pU, pL, iters)."""
    cdef Py_ssize_t n = fs.shape[0]
    cdef double qlam = q * lam
    cdef double qf = q
    cdef double pU = pU0, pL = pL0, nL, nU, d
    cdef long it = 0
    with nogil:
        while it < max_iters:
            nL = _interp_unit(&fs[0], n, _info_arg(eps, qlam, qf, pL, pU))
            nU = _interp_unit(&fs[0], n, _info_arg(eps, qlam, qf, pU, nL))
            d = nL - pL
            if d < 0.0:
                d = -d
            if nU - pU > d:
                d = nU - pU
            elif pU - nU > d:
                d = pU - nU
            pL = nL
            pU = nU
            it += 1
            if pU < zero_thresh and pL < zero_thresh:
                break
            if d < tol:
                break
    return pU, pL, it


def de_coupled(const double[::1] fs, double eps, int q, double lam,
               int m, int L, double tol, double zero_thresh, long max_iters):
    """Parallel-schedule coupled recursion over L+m factor positions with
    the chain pinned to zero outside blocks 1..L.

    Returns (pU, pL, iters) where pU/pL are the per-position info-bit
    erasure probabilities at the two decoders after the last iteration.
    """
    cdef Py_ssize_t n = fs.shape[0]
    cdef int T = L + m
    cdef double qlam = q * lam
    cdef double qf = q
    cdef double w = 1.0 / (m + 1)
    pU_arr = np.ones(T, dtype=np.float64)
    pL_arr = np.ones(T, dtype=np.float64)
    nU_arr = np.empty(T, dtype=np.float64)
    nL_arr = np.empty(T, dtype=np.float64)
    pbU_arr = np.empty(L, dtype=np.float64)
    pbL_arr = np.empty(L, dtype=np.float64)
    tU_arr = np.empty(L, dtype=np.float64)
    tL_arr = np.empty(L, dtype=np.float64)
    cdef double[::1] pU = pU_arr, pL = pL_arr, nU = nU_arr, nL = nL_arr
    cdef double[::1] pbU = pbU_arr, pbL = pbL_arr, tU = tU_arr, tL = tL_arr
    cdef long it = 0
    cdef Py_ssize_t b, tau
    cdef int j, k
    cdef double accU, accL, sU, sL, d, dmax, vmax, v
    with nogil:
        while it < max_iters:
            # averaged messages from the m+1 factors seen by each info block
            for b in range(L):
                sU = 0.0
                sL = 0.0
                for j in range(m + 1):
                    sU += pU[b + j]
                    sL += pL[b + j]
                pbU[b] = sU * w
                pbL[b] = sL * w
            for b in range(L):
                tU[b] = (qlam * pow(pbL[b], qf) * pow(pbU[b], qf - 1.0)
                         + (1.0 - qlam) * pbL[b])
                tL[b] = (qlam * pow(pbU[b], qf) * pow(pbL[b], qf - 1.0)
                         + (1.0 - qlam) * pbU[b])
            dmax = 0.0
            vmax = 0.0
            for tau in range(T):
                accU = 0.0
                accL = 0.0
                for k in range(m + 1):
                    b = tau - k
                    if 0 <= b < L:
                        accU += tU[b]
                        accL += tL[b]
                nU[tau] = _interp_unit(&fs[0], n, eps * w * accU)
                nL[tau] = _interp_unit(&fs[0], n, eps * w * accL)
                d = nU[tau] - pU[tau]
                if d < 0.0:
                    d = -d
                if d > dmax:
                    dmax = d
                d = nL[tau] - pL[tau]
                if d < 0.0:
                    d = -d
                if d > dmax:
                    dmax = d
                v = nU[tau] if nU[tau] > nL[tau] else nL[tau]
                if v > vmax:
                    vmax = v
            for tau in range(T):
                pU[tau] = nU[tau]
                pL[tau] = nL[tau]
            it += 1
            if vmax < zero_thresh:
                break
            if dmax < tol:
                break
    return pU_arr, pL_arr, it
