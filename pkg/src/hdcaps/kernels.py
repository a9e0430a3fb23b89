"""Hot numeric kernels: nearest-neighbor chamfer forward/backward.

Two interchangeable implementations live here. The numba one compiles the
O(n*m) nearest-neighbor loops; the numpy one broadcasts the full pairwise
distance tensor. Set the environment variable ``HDCAPS_NO_NUMBA=1`` (or
run without numba installed) to force the numpy path. Both paths break
nearest-neighbor ties toward the lowest index; their float results may
differ by roundoff because summation orders differ.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("HDCAPS_NO_NUMBA", "")
_want_numba = _env in ("", "0")

if _want_numba:
    try:
        import numba

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = False


def _chamfer_forward_np(p, q):
    d2 = np.sum((p[:, :, None, :] - q[:, None, :, :]) ** 2, axis=-1)
    nn_pq = np.argmin(d2, axis=2)
    nn_qp = np.argmin(d2, axis=1)
    min_pq = np.take_along_axis(d2, nn_pq[:, :, None], axis=2)[:, :, 0]
    min_qp = np.take_along_axis(d2, nn_qp[:, None, :], axis=1)[:, 0, :]
    vals = min_pq.mean(axis=1) + min_qp.mean(axis=1)
    return vals, nn_pq.astype(np.int64), nn_qp.astype(np.int64)


def _chamfer_backward_np(p, q, nn_pq, nn_qp, gout):
    gp = np.zeros_like(p)
    gq = np.zeros_like(q)
    bsz, n, _ = p.shape
    m = q.shape[1]
    scale_p = (gout * (2.0 / n))[:, None, None]
    scale_q = (gout * (2.0 / m))[:, None, None]
    rows = np.arange(bsz)[:, None]
    diff_pq = (p - np.take_along_axis(q, nn_pq[:, :, None], axis=1)) * scale_p
    gp += diff_pq
    np.subtract.at(gq, (rows, nn_pq), diff_pq)
    diff_qp = (q - np.take_along_axis(p, nn_qp[:, :, None], axis=1)) * scale_q
    gq += diff_qp
    np.subtract.at(gp, (rows, nn_qp), diff_qp)
    return gp, gq


if NUMBA_ENABLED:

    @numba.njit(cache=True)
    def _chamfer_forward_nb(p, q):  # pragma: no cover - exercised via dispatch
        bsz, n, d = p.shape
        m = q.shape[1]
        vals = np.zeros(bsz)
        nn_pq = np.zeros((bsz, n), dtype=np.int64)
        nn_qp = np.zeros((bsz, m), dtype=np.int64)
        for b in range(bsz):
            acc_p = 0.0
            for i in range(n):
                best = np.inf
                best_j = 0
                for j in range(m):
                    dist = 0.0
                    for k in range(d):
                        t = p[b, i, k] - q[b, j, k]
                        dist += t * t
                    if dist < best:
                        best = dist
                        best_j = j
                nn_pq[b, i] = best_j
                acc_p += best
            acc_q = 0.0
            for j in range(m):
                best = np.inf
                best_i = 0
                for i in range(n):
                    dist = 0.0
                    for k in range(d):
                        t = q[b, j, k] - p[b, i, k]
                        dist += t * t
                    if dist < best:
                        best = dist
                        best_i = i
                nn_qp[b, j] = best_i
                acc_q += best
            vals[b] = acc_p / n + acc_q / m
        return vals, nn_pq, nn_qp

    @numba.njit(cache=True)
    def _chamfer_backward_nb(p, q, nn_pq, nn_qp, gout):  # pragma: no cover
        bsz, n, d = p.shape
        m = q.shape[1]
        gp = np.zeros_like(p)
        gq = np.zeros_like(q)
        for b in range(bsz):
            sp = gout[b] * 2.0 / n
            for i in range(n):
                j = nn_pq[b, i]
                for k in range(d):
                    t = (p[b, i, k] - q[b, j, k]) * sp
                    gp[b, i, k] += t
                    gq[b, j, k] -= t
            sq = gout[b] * 2.0 / m
            for j in range(m):
                i = nn_qp[b, j]
                for k in range(d):
                    t = (q[b, j, k] - p[b, i, k]) * sq
                    gq[b, j, k] += t
                    gp[b, i, k] -= t
        return gp, gq


def chamfer_forward(p: np.ndarray, q: np.ndarray):
    """Batched symmetric chamfer. p: (B,n,D), q: (B,m,D).

    Returns (values (B,), nn_pq (B,n), nn_qp (B,m)); the index arrays are
    each point's nearest neighbor in the other set and feed the backward
    pass.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    if NUMBA_ENABLED:
        return _chamfer_forward_nb(p, q)
    return _chamfer_forward_np(p, q)


def chamfer_backward(p, q, nn_pq, nn_qp, gout):
    """Gradient of chamfer_forward values w.r.t. both point sets."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    if NUMBA_ENABLED:
        return _chamfer_backward_nb(p, q, nn_pq, nn_qp, gout)
    return _chamfer_backward_np(p, q, nn_pq, nn_qp, gout)
