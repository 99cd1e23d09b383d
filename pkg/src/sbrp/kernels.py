"""Hot numeric kernels, each in a numba flavour and a pure-numpy flavour.

The numba versions are used when numba imports and the environment variable
``SBRP_DISABLE_NUMBA`` is unset (or set to ``0``).  Both flavours are always
importable as ``<name>_nb`` / ``<name>_np`` so they can be cross-checked and
benchmarked against each other; the unsuffixed names are the active choice.

Both flavours evaluate the same floating point expressions in the same order,
so the selected backend never changes a solver decision.
"""
import os

import numpy as np

DISABLE_ENV = "SBRP_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False


def _numba_requested():
    return os.environ.get(DISABLE_ENV, "").strip().lower() in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and _numba_requested()


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# pairwise Euclidean distances
# --------------------------------------------------------------------------

def pairwise_distance_np(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dx = a[:, 0][:, None] - b[:, 0][None, :]
    dy = a[:, 1][:, None] - b[:, 1][None, :]
    return np.sqrt(dx * dx + dy * dy)


@_njit
def _pairwise_distance_loop(a, b):
    na = a.shape[0]
    nb = b.shape[0]
    out = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            out[i, j] = np.sqrt(dx * dx + dy * dy)
    return out


def pairwise_distance_nb(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 2)
    return _pairwise_distance_loop(a, b)


# --------------------------------------------------------------------------
# Poisson-binomial distribution
# --------------------------------------------------------------------------

def poisson_binomial_pmf_np(p):
    p = np.asarray(p, dtype=np.float64)
    pmf = np.zeros(p.size + 1)
    pmf[0] = 1.0
    for t in range(p.size):
        q = p[t]
        nxt = pmf[: t + 2] * (1.0 - q)
        nxt[1:] += pmf[: t + 1] * q
        pmf[: t + 2] = nxt
    return pmf


@_njit
def _poisson_binomial_pmf_loop(p):
    n = p.shape[0]
    pmf = np.zeros(n + 1)
    pmf[0] = 1.0
    for t in range(n):
        q = p[t]
        for k in range(t + 1, 0, -1):
            pmf[k] = pmf[k] * (1.0 - q) + pmf[k - 1] * q
        pmf[0] = pmf[0] * (1.0 - q)
    return pmf


def poisson_binomial_pmf_nb(p):
    return _poisson_binomial_pmf_loop(np.ascontiguousarray(p, dtype=np.float64))


def poisson_binomial_tail_np(p, threshold):
    """P(sum X_i > threshold); DP truncated at ``threshold`` with an overflow bucket."""
    p = np.asarray(p, dtype=np.float64)
    q_max = int(threshold)
    if q_max < 0:
        return 1.0
    pmf = np.zeros(q_max + 1)
    pmf[0] = 1.0
    over = 0.0
    for t in range(p.size):
        q = p[t]
        over = over + pmf[q_max] * q
        nxt = pmf * (1.0 - q)
        nxt[1:] += pmf[:-1] * q
        pmf = nxt
    return min(max(over, 0.0), 1.0)


@_njit
def _poisson_binomial_tail_loop(p, q_max):
    pmf = np.zeros(q_max + 1)
    pmf[0] = 1.0
    over = 0.0
    for t in range(p.shape[0]):
        q = p[t]
        over = over + pmf[q_max] * q
        for k in range(q_max, 0, -1):
            pmf[k] = pmf[k] * (1.0 - q) + pmf[k - 1] * q
        pmf[0] = pmf[0] * (1.0 - q)
    return min(max(over, 0.0), 1.0)


def poisson_binomial_tail_nb(p, threshold):
    q_max = int(threshold)
    if q_max < 0:
        return 1.0
    return float(_poisson_binomial_tail_loop(np.ascontiguousarray(p, dtype=np.float64), q_max))


# --------------------------------------------------------------------------
# route kernels over a travel-time matrix
#
# ``seq`` is the full node sequence depot, stop..., school.
# --------------------------------------------------------------------------

def path_cost_np(seq, travel):
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size < 2:
        return 0.0
    legs = travel[seq[:-1], seq[1:]]
    total = 0.0
    for leg in legs:
        total += leg
    return total


@_njit
def _path_cost_loop(seq, travel):
    total = 0.0
    for t in range(seq.shape[0] - 1):
        total += travel[seq[t], seq[t + 1]]
    return total


def path_cost_nb(seq, travel):
    return float(_path_cost_loop(np.asarray(seq, dtype=np.int64), travel))


def best_two_opt_np(seq, travel):
    """Best interior segment reversal; returns (delta, i, j) with seq[i..j] reversed.

    Works for asymmetric matrices: the reversed segment's own legs are
    re-priced in the opposite direction.  delta >= 0 means no improvement.
    """
    seq = np.asarray(seq, dtype=np.int64)
    n = seq.size
    if n < 4:
        return 0.0, -1, -1
    fwd_legs = travel[seq[:-1], seq[1:]]
    bwd_legs = travel[seq[1:], seq[:-1]]
    fwd = np.zeros(n)
    bwd = np.zeros(n)
    acc_f = 0.0
    acc_b = 0.0
    for t in range(n - 1):
        acc_f += fwd_legs[t]
        acc_b += bwd_legs[t]
        fwd[t + 1] = acc_f
        bwd[t + 1] = acc_b
    ii = np.arange(1, n - 1)[:, None]
    jj = np.arange(1, n - 1)[None, :]
    prev = seq[ii - 1]
    nxt = seq[np.minimum(jj + 1, n - 1)]
    delta = (
        travel[prev, seq[jj]]
        + travel[seq[ii], nxt]
        + (bwd[jj] - bwd[ii])
        - travel[prev, seq[ii]]
        - travel[seq[jj], nxt]
        - (fwd[jj] - fwd[ii])
    )
    delta = np.where(jj > ii, delta, np.inf)
    flat = int(np.argmin(delta))
    r, c = divmod(flat, n - 2)
    return float(delta[r, c]), r + 1, c + 1


@_njit
def _best_two_opt_loop(seq, travel):
    n = seq.shape[0]
    fwd = np.zeros(n)
    bwd = np.zeros(n)
    acc_f = 0.0
    acc_b = 0.0
    for t in range(n - 1):
        acc_f += travel[seq[t], seq[t + 1]]
        acc_b += travel[seq[t + 1], seq[t]]
        fwd[t + 1] = acc_f
        bwd[t + 1] = acc_b
    best = np.inf
    bi = -1
    bj = -1
    for i in range(1, n - 1):
        prev = seq[i - 1]
        for j in range(i + 1, n - 1):
            nxt = seq[j + 1]
            d = (
                travel[prev, seq[j]]
                + travel[seq[i], nxt]
                + (bwd[j] - bwd[i])
                - travel[prev, seq[i]]
                - travel[seq[j], nxt]
                - (fwd[j] - fwd[i])
            )
            if d < best:
                best = d
                bi = i
                bj = j
    return best, bi, bj


def best_two_opt_nb(seq, travel):
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size < 4:
        return 0.0, -1, -1
    d, i, j = _best_two_opt_loop(seq, travel)
    return float(d), int(i), int(j)


def insertion_deltas_np(seq, node, travel):
    """Added travel for inserting ``node`` between seq[t] and seq[t+1], per t."""
    seq = np.asarray(seq, dtype=np.int64)
    a = seq[:-1]
    b = seq[1:]
    return travel[a, node] + travel[node, b] - travel[a, b]


@_njit
def _insertion_deltas_loop(seq, node, travel):
    m = seq.shape[0] - 1
    out = np.empty(m)
    for t in range(m):
        a = seq[t]
        b = seq[t + 1]
        out[t] = travel[a, node] + travel[node, b] - travel[a, b]
    return out


def insertion_deltas_nb(seq, node, travel):
    return _insertion_deltas_loop(np.asarray(seq, dtype=np.int64), int(node), travel)


_KERNELS = ("pairwise_distance", "poisson_binomial_pmf", "poisson_binomial_tail",
            "path_cost", "best_two_opt", "insertion_deltas")


def backend():
    return "numba" if USE_NUMBA else "numpy"


def _bind(use_numba):
    suffix = "_nb" if use_numba else "_np"
    g = globals()
    for name in _KERNELS:
        g[name] = g[name + suffix]


_bind(USE_NUMBA)
