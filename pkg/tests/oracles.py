"""Independent reference implementations used to check the real code paths.

Everything here is deliberately naive (explicit loops, extended precision
via mpmath, central finite differences) and shares no code with the package
internals it verifies.
"""

from __future__ import annotations

import numpy as np
import mpmath as mp

mp.mp.dps = 50

FD_STEP = 1e-4
REL_FLOOR = 1e-3   # denominator guard for near-zero gradients


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def softmax_oracle(x) -> np.ndarray:
    """Row softmax evaluated in 50-digit precision."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    rows = []
    for row in x:
        es = [mp.e ** mp.mpf(float(v)) for v in row]
        s = sum(es)
        rows.append([float(e / s) for e in es])
    return np.array(rows)


def sigmoid_oracle(x: float) -> float:
    return float(1 / (1 + mp.e ** (-mp.mpf(float(x)))))


def attention_oracle(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                     mask: np.ndarray | None = None, scaled: bool = True) -> np.ndarray:
    """Single-head attention by explicit loops: softmax(q k^T [/ sqrt(d)]) v."""
    nq, d = q.shape
    nk = k.shape[0]
    out = np.zeros((nq, v.shape[1]))
    scale = 1.0 / np.sqrt(d) if scaled else 1.0
    for i in range(nq):
        scores = np.array([np.dot(q[i], k[j]) * scale for j in range(nk)])
        if mask is not None:
            allowed = np.asarray(mask[i] if mask.ndim == 2 else mask, dtype=bool)
        else:
            allowed = np.ones(nk, dtype=bool)
        if not allowed.any():
            continue
        shifted = scores[allowed] - scores[allowed].max()
        weights = np.zeros(nk)
        weights[allowed] = np.exp(shifted) / np.exp(shifted).sum()
        for j in range(nk):
            out[i] += weights[j] * v[j]
    return out


def multi_head_attention_oracle(weights: dict, query: np.ndarray, memory: np.ndarray,
                                heads: int, mask: np.ndarray | None = None,
                                scaled: bool = True) -> np.ndarray:
    """Projections, per-head attention, concatenation, output projection."""
    q = query @ weights["wq"] + weights["bq"].reshape(-1)
    k = memory @ weights["wk"] + weights["bk"].reshape(-1)
    v = memory @ weights["wv"] + weights["bv"].reshape(-1)
    width = q.shape[1] // heads
    outs = []
    for h in range(heads):
        sl = slice(h * width, (h + 1) * width)
        outs.append(attention_oracle(q[:, sl], k[:, sl], v[:, sl], mask=mask, scaled=scaled))
    merged = np.concatenate(outs, axis=1)
    return merged @ weights["wo"] + weights["bo"].reshape(-1)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray,
                    floor: float = REL_FLOOR) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_difference(loss_fn, array: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    The array is mutated in place during probing and restored afterwards.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss_fn()
        flat[i] = keep - h
        down = loss_fn()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return grad
