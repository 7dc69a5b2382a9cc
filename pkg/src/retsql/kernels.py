"""Hot numeric kernels: batched LSTM forward/backward and distance scans.

Each kernel exists in two equivalent forms: an explicit-loop version
compiled with numba (``*_numba``) and a vectorized pure-numpy version
(``*_numpy``).  The public names bind to the numba form unless numba is
unavailable or ``RETSQL_NUMBA=0`` is set, in which case the numpy fallback
is used.  Both forms are kept and equivalence-tested; ``benchmarks/``
compares their speed.

Shape conventions (all float64):
  x       (B, T, D)   padded input sequences
  lengths (B,)        true sequence lengths; positions >= length stay zero
  wx      (D, 4H)     input weights, gate order (i, f, g, o)
  wh      (H, 4H)     recurrent weights
  b       (4H,)       bias
  h0, c0  (B, H)      initial states
  gates   (B, T, 4H)  post-activation gate values (cached for backward)
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("RETSQL_NUMBA", "1").lower() not in (
    "0",
    "false",
    "no",
)


def _sigmoid(x):
    # tanh formulation avoids overflow warnings for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


# ---------------------------------------------------------------------------
# numpy implementations (vectorized across the batch, loop over time)
# ---------------------------------------------------------------------------


def lstm_forward_numpy(x, lengths, wx, wh, b, h0, c0, reverse=False):
    B, T, _ = x.shape
    H = wh.shape[0]
    gates = np.zeros((B, T, 4 * H))
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    h = h0.copy()
    c = c0.copy()
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        active = t < lengths
        if not active.any():
            continue
        z = x[:, t] @ wx + h @ wh + b
        gi = _sigmoid(z[:, :H])
        gf = _sigmoid(z[:, H : 2 * H])
        gg = np.tanh(z[:, 2 * H : 3 * H])
        go = _sigmoid(z[:, 3 * H :])
        c_new = gf * c + gi * gg
        h_new = go * np.tanh(c_new)
        m = active[:, None]
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
        gates[active, t, :H] = gi[active]
        gates[active, t, H : 2 * H] = gf[active]
        gates[active, t, 2 * H : 3 * H] = gg[active]
        gates[active, t, 3 * H :] = go[active]
        hs[active, t] = h[active]
        cs[active, t] = c[active]
    return gates, hs, cs


def lstm_backward_numpy(x, lengths, wx, wh, gates, hs, cs, h0, c0, dh_out, reverse=False):
    B, T, D = x.shape
    H = wh.shape[0]
    dx = np.zeros_like(x)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * H)
    dh0 = np.zeros((B, H))
    dc0 = np.zeros((B, H))
    dh_carry = np.zeros((B, H))
    dc_carry = np.zeros((B, H))
    # Backward visits timesteps in the opposite of the forward processing
    # order: ascending time for the reverse direction, descending otherwise.
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        active = t < lengths
        if not active.any():
            continue
        if reverse:
            first = t == (lengths - 1)  # processing step 0 of each sequence
            tp = min(t + 1, T - 1)
        else:
            first = np.full(B, t == 0)
            tp = t - 1
        h_prev = np.where(first[:, None], h0, hs[:, tp])
        c_prev = np.where(first[:, None], c0, cs[:, tp])
        gi = gates[:, t, :H]
        gf = gates[:, t, H : 2 * H]
        gg = gates[:, t, 2 * H : 3 * H]
        go = gates[:, t, 3 * H :]
        tc = np.tanh(cs[:, t])
        dh = dh_out[:, t] + dh_carry
        do = dh * tc
        dc = dc_carry + dh * go * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * gg * gi * (1.0 - gi),
                dc * c_prev * gf * (1.0 - gf),
                dc * gi * (1.0 - gg * gg),
                do * go * (1.0 - go),
            ],
            axis=1,
        )
        dz[~active] = 0.0
        dx[:, t] = dz @ wx.T
        dwx += x[:, t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dh_new = dz @ wh.T
        dc_new = dc * gf
        # the carry leaving a sequence's first processed step is d(h0)/d(c0)
        harvest = active & first
        dh0[harvest] = dh_new[harvest]
        dc0[harvest] = dc_new[harvest]
        dh_carry = np.where(active[:, None], dh_new, dh_carry)
        dc_carry = np.where(active[:, None], dc_new, dc_carry)
    return dx, dwx, dwh, db, dh0, dc0


def sq_l2_scan_numpy(base, query):
    diff = base - query
    return np.einsum("ij,ij->i", diff, diff)


def lstm_cell_numpy(x, h, c, wx, wh, b):
    """Single LSTM step for one sequence (inference only)."""
    H = wh.shape[0]
    z = x @ wx + h @ wh + b
    gi = _sigmoid(z[:H])
    gf = _sigmoid(z[H : 2 * H])
    gg = np.tanh(z[2 * H : 3 * H])
    go = _sigmoid(z[3 * H :])
    c_new = gf * c + gi * gg
    h_new = go * np.tanh(c_new)
    return h_new, c_new


# ---------------------------------------------------------------------------
# numba implementations (explicit loops, one sequence at a time)
# ---------------------------------------------------------------------------


def _lstm_forward_loops(x, lengths, wx, wh, b, h0, c0, reverse):
    B, T, _ = x.shape
    H = wh.shape[0]
    gates = np.zeros((B, T, 4 * H))
    hs = np.zeros((B, T, H))
    cs = np.zeros((B, T, H))
    for bi in range(B):
        L = lengths[bi]
        h = h0[bi].copy()
        c = c0[bi].copy()
        for step in range(L):
            t = L - 1 - step if reverse else step
            z = np.dot(x[bi, t], wx) + np.dot(h, wh) + b
            for j in range(H):
                gi = 0.5 * (np.tanh(0.5 * z[j]) + 1.0)
                gf = 0.5 * (np.tanh(0.5 * z[H + j]) + 1.0)
                gg = np.tanh(z[2 * H + j])
                go = 0.5 * (np.tanh(0.5 * z[3 * H + j]) + 1.0)
                c[j] = gf * c[j] + gi * gg
                h[j] = go * np.tanh(c[j])
                gates[bi, t, j] = gi
                gates[bi, t, H + j] = gf
                gates[bi, t, 2 * H + j] = gg
                gates[bi, t, 3 * H + j] = go
                hs[bi, t, j] = h[j]
                cs[bi, t, j] = c[j]
    return gates, hs, cs


def _lstm_backward_loops(x, lengths, wx, wh, gates, hs, cs, h0, c0, dh_out, reverse):
    B, T, D = x.shape
    H = wh.shape[0]
    dx = np.zeros_like(x)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * H)
    dh0 = np.zeros((B, H))
    dc0 = np.zeros((B, H))
    dz = np.zeros(4 * H)
    for bi in range(B):
        L = lengths[bi]
        dh_carry = np.zeros(H)
        dc_carry = np.zeros(H)
        for step in range(L - 1, -1, -1):
            t = L - 1 - step if reverse else step
            if step == 0:
                h_prev = h0[bi]
                c_prev = c0[bi]
            else:
                tp = L - step if reverse else step - 1
                h_prev = hs[bi, tp]
                c_prev = cs[bi, tp]
            for j in range(H):
                gi = gates[bi, t, j]
                gf = gates[bi, t, H + j]
                gg = gates[bi, t, 2 * H + j]
                go = gates[bi, t, 3 * H + j]
                tc = np.tanh(cs[bi, t, j])
                dh = dh_out[bi, t, j] + dh_carry[j]
                do = dh * tc
                dc = dc_carry[j] + dh * go * (1.0 - tc * tc)
                dz[j] = dc * gg * gi * (1.0 - gi)
                dz[H + j] = dc * c_prev[j] * gf * (1.0 - gf)
                dz[2 * H + j] = dc * gi * (1.0 - gg * gg)
                dz[3 * H + j] = do * go * (1.0 - go)
                dc_carry[j] = dc * gf
            dx[bi, t] = np.dot(wx, dz)
            dh_carry = np.dot(wh, dz)
            for d in range(D):
                xv = x[bi, t, d]
                for k in range(4 * H):
                    dwx[d, k] += xv * dz[k]
            for j in range(H):
                hv = h_prev[j]
                for k in range(4 * H):
                    dwh[j, k] += hv * dz[k]
            for k in range(4 * H):
                db[k] += dz[k]
        dh0[bi] = dh_carry
        dc0[bi] = dc_carry
    return dx, dwx, dwh, db, dh0, dc0


def _sq_l2_scan_loops(base, query):
    n, d = base.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            diff = base[i, j] - query[j]
            acc += diff * diff
        out[i] = acc
    return out


if NUMBA_AVAILABLE:
    lstm_forward_numba = numba.njit(cache=True)(_lstm_forward_loops)
    lstm_backward_numba = numba.njit(cache=True)(_lstm_backward_loops)
    sq_l2_scan_numba = numba.njit(cache=True)(_sq_l2_scan_loops)
else:  # pragma: no cover
    lstm_forward_numba = None
    lstm_backward_numba = None
    sq_l2_scan_numba = None


def _forward_dispatch(x, lengths, wx, wh, b, h0, c0, reverse=False):
    if USE_NUMBA:
        return lstm_forward_numba(x, lengths, wx, wh, b, h0, c0, reverse)
    return lstm_forward_numpy(x, lengths, wx, wh, b, h0, c0, reverse)


def _backward_dispatch(x, lengths, wx, wh, gates, hs, cs, h0, c0, dh_out, reverse=False):
    if USE_NUMBA:
        return lstm_backward_numba(x, lengths, wx, wh, gates, hs, cs, h0, c0, dh_out, reverse)
    return lstm_backward_numpy(x, lengths, wx, wh, gates, hs, cs, h0, c0, dh_out, reverse)


def _scan_dispatch(base, query):
    if USE_NUMBA:
        return sq_l2_scan_numba(base, query)
    return sq_l2_scan_numpy(base, query)


lstm_forward = _forward_dispatch
lstm_backward = _backward_dispatch
sq_l2_scan = _scan_dispatch
lstm_cell = lstm_cell_numpy
