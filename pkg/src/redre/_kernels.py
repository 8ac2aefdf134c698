"""Hot numeric kernels.

Every kernel has a numba implementation (``_nb_*``) and a pure-numpy
implementation (``_np_*``).  The public names bind to numba unless numba is
missing or ``REDRE_DISABLE_NUMBA`` is set to a non-empty value other than
``0`` before import.

All kernels operate on C-contiguous 2-D float64 arrays ``(rows, width)``;
callers reshape.
"""

import os

import numpy as np

_flag = os.environ.get("REDRE_DISABLE_NUMBA", "")
_DISABLED = _flag not in ("", "0")

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

USE_NUMBA = njit is not None and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference path


def _np_rotate(x, cos, sin):
    even = x[:, 0::2]
    odd = x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = cos * even - sin * odd
    out[:, 1::2] = sin * even + cos * odd
    return out


def _np_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_bwd(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def _np_layernorm(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def _np_layernorm_bwd(gy, xhat, rstd, gamma):
    g = gy * gamma
    width = xhat.shape[1]
    gx = (rstd[:, None] / width) * (
        width * g - g.sum(axis=1, keepdims=True)
        - xhat * (g * xhat).sum(axis=1, keepdims=True)
    )
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def _np_rank_auc(scores, labels):
    # midranks via unique groups
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    midrank = upper - (counts - 1) / 2.0
    ranks = midrank[inverse]
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# numba path

if njit is not None:

    @njit(cache=True)
    def _nb_rotate(x, cos, sin):
        rows, width = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            for p in range(width // 2):
                a = x[r, 2 * p]
                b = x[r, 2 * p + 1]
                c = cos[r, p]
                s = sin[r, p]
                out[r, 2 * p] = c * a - s * b
                out[r, 2 * p + 1] = s * a + c * b
        return out

    @njit(cache=True)
    def _nb_softmax(x):
        rows, width = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            m = x[r, 0]
            for j in range(1, width):
                if x[r, j] > m:
                    m = x[r, j]
            total = 0.0
            for j in range(width):
                e = np.exp(x[r, j] - m)
                out[r, j] = e
                total += e
            for j in range(width):
                out[r, j] /= total
        return out

    @njit(cache=True)
    def _nb_softmax_bwd(y, gy):
        rows, width = y.shape
        out = np.empty_like(y)
        for r in range(rows):
            dot = 0.0
            for j in range(width):
                dot += gy[r, j] * y[r, j]
            for j in range(width):
                out[r, j] = y[r, j] * (gy[r, j] - dot)
        return out

    @njit(cache=True)
    def _nb_layernorm(x, gamma, beta, eps):
        rows, width = x.shape
        out = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows)
        for r in range(rows):
            mu = 0.0
            for j in range(width):
                mu += x[r, j]
            mu /= width
            var = 0.0
            for j in range(width):
                d = x[r, j] - mu
                var += d * d
            var /= width
            s = 1.0 / np.sqrt(var + eps)
            rstd[r] = s
            for j in range(width):
                h = (x[r, j] - mu) * s
                xhat[r, j] = h
                out[r, j] = h * gamma[j] + beta[j]
        return out, xhat, rstd

    @njit(cache=True)
    def _nb_layernorm_bwd(gy, xhat, rstd, gamma):
        rows, width = gy.shape
        gx = np.empty_like(gy)
        ggamma = np.zeros(width)
        gbeta = np.zeros(width)
        for r in range(rows):
            sg = 0.0
            sgx = 0.0
            for j in range(width):
                g = gy[r, j] * gamma[j]
                sg += g
                sgx += g * xhat[r, j]
                ggamma[j] += gy[r, j] * xhat[r, j]
                gbeta[j] += gy[r, j]
            scale = rstd[r] / width
            for j in range(width):
                g = gy[r, j] * gamma[j]
                gx[r, j] = scale * (width * g - sg - xhat[r, j] * sgx)
        return gx, ggamma, gbeta

    @njit(cache=True)
    def _nb_merge_count(pos, neg):
        # Mann-Whitney U from sorted positive and negative scores: each
        # positive earns 1 per lower negative and 1/2 per tied one.
        lo = 0  # negatives strictly below the current positive
        hi = 0  # negatives at or below it
        u = 0.0
        for p in pos:
            while lo < neg.size and neg[lo] < p:
                lo += 1
            if hi < lo:
                hi = lo
            while hi < neg.size and neg[hi] <= p:
                hi += 1
            u += lo + 0.5 * (hi - lo)
        return u / (pos.size * neg.size)

    def _nb_rank_auc(scores, labels):
        # numpy's sort is much faster than numba's on tie-heavy data
        return _nb_merge_count(np.sort(scores[labels == 1]), np.sort(scores[labels == 0]))


if USE_NUMBA:
    rotate = _nb_rotate
    softmax = _nb_softmax
    softmax_bwd = _nb_softmax_bwd
    layernorm = _nb_layernorm
    layernorm_bwd = _nb_layernorm_bwd
    rank_auc = _nb_rank_auc
else:
    rotate = _np_rotate
    softmax = _np_softmax
    softmax_bwd = _np_softmax_bwd
    layernorm = _np_layernorm
    layernorm_bwd = _np_layernorm_bwd
    rank_auc = _np_rank_auc
