"""Pure-Python fallback for the compiled kernels.

Same contracts as ``_ckernels``; used when the extension is unavailable or
when ``GSCPCC_BACKEND=python`` is set.  Expect one to three orders of
magnitude slower on long trellises (see benchmarks/bench_kernels.py).
"""

import numpy as np

BACKEND_NAME = "python"


def encode_bits(info, next_state, parity_out, start_state):
    n = len(info)
    par = np.empty(n, dtype=np.int8)
    ns = next_state
    po = parity_out
    s = start_state
    info_list = info.tolist()
    out = par.tolist()
    ns_list = ns.tolist()
    po_list = po.tolist()
    for t in range(n):
        b = info_list[t]
        out[t] = po_list[s][b]
        s = ns_list[s][b]
    par[:] = out
    return par, s


def bcjr_erase_tab(info_obs, parity_obs, fwd_tab, bwd_tab,
                   ext_info_tab, ext_par_tab, start_mask, end_mask):
    n = len(info_obs)
    ext_i = np.empty(n, dtype=np.int8)
    ext_p = np.empty(n, dtype=np.int8)
    io = info_obs.tolist()
    po = parity_obs.tolist()
    fwd = fwd_tab.tolist()
    bwd = bwd_tab.tolist()
    eit = ext_info_tab.tolist()
    ept = ext_par_tab.tolist()
    fm = [0] * (n + 1)
    fm[0] = start_mask
    for t in range(n):
        nxt = fwd[io[t] * 3 + po[t]][fm[t]]
        if nxt == 0:
            return ext_i, ext_p, t
        fm[t + 1] = nxt
    ei = ext_i.tolist()
    ep = ext_p.tolist()
    bm = end_mask
    for t in range(n - 1, -1, -1):
        e1 = eit[po[t]][fm[t]][bm]
        e2 = ept[io[t]][fm[t]][bm]
        if e1 == 3 or e2 == 3:
            return ext_i, ext_p, t
        ei[t] = e1
        ep[t] = e2
        bm = bwd[io[t] * 3 + po[t]][bm]
        if bm == 0 and t > 0:
            return ext_i, ext_p, t
    ext_i[:] = ei
    ext_p[:] = ep
    return ext_i, ext_p, -1


def _interp_unit(vals, x):
    # uniform grid on [0, 1]
    n = len(vals)
    if x <= 0.0:
        return vals[0]
    if x >= 1.0:
        return vals[n - 1]
    t = x * (n - 1)
    i = int(t)
    return vals[i] + (vals[i + 1] - vals[i]) * (t - i)


def _info_arg(eps, qlam, q, own_prev, other):
    return eps * (qlam * own_prev ** (q - 1) * other ** q + (1.0 - qlam) * other)


def de_uncoupled(fs, eps, q, lam, tol, zero_thresh, max_iters,
                 pU0=1.0, pL0=1.0):
    vals = fs.tolist()
    qlam = q * lam
    pU, pL = pU0, pL0
    it = 0
    while it < max_iters:
        nL = _interp_unit(vals, _info_arg(eps, qlam, q, pL, pU))
        nU = _interp_unit(vals, _info_arg(eps, qlam, q, pU, nL))
        d = max(abs(nL - pL), abs(nU - pU))
        pL, pU = nL, nU
        it += 1
        if pU < zero_thresh and pL < zero_thresh:
            break
        if d < tol:
            break
    return pU, pL, it


def de_coupled(fs, eps, q, lam, m, L, tol, zero_thresh, max_iters):
    grid = np.linspace(0.0, 1.0, len(fs))
    T = L + m
    qlam = q * lam
    w = 1.0 / (m + 1)
    win = np.ones(m + 1)
    pU = np.ones(T)
    pL = np.ones(T)
    it = 0
    while it < max_iters:
        # np.convolve(x, win)[m:T] gives the forward-window sums over x
        pbU = np.convolve(pU, win)[m:T] * w
        pbL = np.convolve(pL, win)[m:T] * w
        tU = qlam * pbL ** q * pbU ** (q - 1) + (1.0 - qlam) * pbL
        tL = qlam * pbU ** q * pbL ** (q - 1) + (1.0 - qlam) * pbU
        accU = np.convolve(tU, win)[:T]
        accL = np.convolve(tL, win)[:T]
        nU = np.interp(eps * w * accU, grid, fs)
        nL = np.interp(eps * w * accL, grid, fs)
        dmax = max(np.max(np.abs(nU - pU)), np.max(np.abs(nL - pL)))
        vmax = max(nU.max(), nL.max())
        pU, pL = nU, nL
        it += 1
        if vmax < zero_thresh:
            break
        if dmax < tol:
            break
    return pU, pL, it
