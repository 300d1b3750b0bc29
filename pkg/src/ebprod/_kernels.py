"""Hot inner loops, in numba-compiled and vectorized-numpy flavors.

Every ``*_nb`` function has a ``*_np`` twin with the same contract. The
public wrappers at the bottom dispatch on ``_accel.USE_NUMBA``.

Determinism: all reductions accumulate in a fixed index order inside one
thread; parallel loops only ever split over *independent* outputs (rows or
column chunks), so results do not depend on the number of threads.
"""

import math

import numpy as np

from . import _accel
from ._accel import njit, prange

LOG_2PI = math.log(2.0 * math.pi)
COL_CHUNK = 64


# --- log densities -----------------------------------------------------------


@njit(parallel=True)
def linear_logf_nb(y, Z, padded, radix, qs, out):
    """log f for mean functions linear in the parameters.

    ``Z`` is ``(I, P, T)`` with one regressor row per non-noise parameter;
    the last grid axis is the noise scale ``s``. Consecutive types that share
    every digit except ``s`` reuse one residual sum of squares.
    """
    I, P, T = Z.shape
    n = qs.shape[0]
    J = P + 1
    ns = radix[J - 1]
    for i in prange(I):
        resid = np.empty(T)
        prev = -1
        ssr = 0.0
        for c in range(n):
            q = qs[c]
            head = q // ns
            if head != prev:
                rem = head
                for t in range(T):
                    resid[t] = y[i, t]
                for j in range(P - 1, -1, -1):
                    d = rem % radix[j]
                    rem //= radix[j]
                    v = padded[j, d]
                    for t in range(T):
                        resid[t] -= v * Z[i, j, t]
                ssr = 0.0
                for t in range(T):
                    ssr += resid[t] * resid[t]
                prev = head
            s = padded[J - 1, q % ns]
            out[i, c] = -T * (math.log(s) + 0.5 * LOG_2PI) - ssr / (2.0 * s * s)
    return out


# numpy twins build an (I, n, T) intermediate; cap it at this many bytes
NP_TEMP_BYTES = 16 * 2**20


def _np_slices(I, T, n):
    step = max(1, NP_TEMP_BYTES // (8 * max(I * T, 1)))
    for c0 in range(0, n, step):
        yield slice(c0, min(c0 + step, n))


def linear_logf_np(y, Z, padded, radix, qs, out):
    I, T = y.shape
    J = Z.shape[1] + 1
    strides = _strides(radix)
    for sl in _np_slices(I, T, len(qs)):
        digits = (qs[sl, None] // strides) % radix
        params = np.stack([padded[j, digits[:, j]] for j in range(J)], axis=1)
        h = np.einsum("ipt,np->int", Z, params[:, :-1])
        h -= y[:, None, :]
        ssr = np.einsum("int,int->in", h, h)
        s = params[:, -1]
        out[:, sl] = -T * (np.log(s) + 0.5 * LOG_2PI) - ssr / (2.0 * s * s)
    return out


@njit(parallel=True)
def ces_logf_nb(y, comp, tt, padded, radix, qs, out):
    """log f for the generalized CES family.

    ``comp[i, w, g, t]`` holds the log composite input for omega index ``w``
    and sigma index ``g``; parameters are (alpha0, omega, nu, sigma, alpha1,
    alpha2, s).
    """
    I, T = y.shape
    n = qs.shape[0]
    ns = radix[6]
    for i in prange(I):
        prev = -1
        ssr = 0.0
        for c in range(n):
            q = qs[c]
            head = q // ns
            if head != prev:
                rem = head
                d_a2 = rem % radix[5]
                rem //= radix[5]
                d_a1 = rem % radix[4]
                rem //= radix[4]
                d_sig = rem % radix[3]
                rem //= radix[3]
                d_nu = rem % radix[2]
                rem //= radix[2]
                d_om = rem % radix[1]
                rem //= radix[1]
                a0 = padded[0, rem]
                nu = padded[2, d_nu]
                a1 = padded[4, d_a1]
                a2 = padded[5, d_a2]
                ssr = 0.0
                for t in range(T):
                    r = y[i, t] - (a0 + a1 * tt[0, t] + a2 * tt[1, t] + nu * comp[i, d_om, d_sig, t])
                    ssr += r * r
                prev = head
            s = padded[6, q % ns]
            out[i, c] = -T * (math.log(s) + 0.5 * LOG_2PI) - ssr / (2.0 * s * s)
    return out


def ces_logf_np(y, comp, tt, padded, radix, qs, out):
    I, T = y.shape
    strides = _strides(radix)
    for sl in _np_slices(I, T, len(qs)):
        digits = (qs[sl, None] // strides) % radix
        a0 = padded[0, digits[:, 0]]
        nu = padded[2, digits[:, 2]]
        a1 = padded[4, digits[:, 4]]
        a2 = padded[5, digits[:, 5]]
        s = padded[6, digits[:, 6]]
        cmp = comp[:, digits[:, 1], digits[:, 3], :]  # (I, n, T)
        h = a0[:, None] + a1[:, None] * tt[0] + a2[:, None] * tt[1] + nu[:, None] * cmp
        h -= y[:, None, :]
        ssr = np.einsum("int,int->in", h, h)
        out[:, sl] = -T * (np.log(s) + 0.5 * LOG_2PI) - ssr / (2.0 * s * s)
    return out


def _strides(radix):
    strides = np.ones(len(radix), dtype=np.int64)
    for j in range(len(radix) - 2, -1, -1):
        strides[j] = strides[j + 1] * radix[j + 1]
    return strides


# --- EM building blocks ------------------------------------------------------


@njit(parallel=True)
def mixture_rows_nb(L, pi, out):
    """``out[i] = sum_q L[i, q] * pi[q]``."""
    I, Q = L.shape
    for i in prange(I):
        acc = 0.0
        for q in range(Q):
            acc += L[i, q] * pi[q]
        out[i] = acc
    return out


def mixture_rows_np(L, pi, out):
    out[...] = np.einsum("iq,q->i", L, pi)
    return out


@njit(parallel=True)
def weighted_colsum_nb(L, w, out):
    """``out[q] = sum_i L[i, q] * w[i]``, summed over i in order."""
    I, Q = L.shape
    n_chunks = (Q + COL_CHUNK - 1) // COL_CHUNK
    for c in prange(n_chunks):
        lo = c * COL_CHUNK
        hi = min(lo + COL_CHUNK, Q)
        for q in range(lo, hi):
            out[q] = 0.0
        for i in range(I):
            wi = w[i]
            for q in range(lo, hi):
                out[q] += L[i, q] * wi
    return out


def weighted_colsum_np(L, w, out):
    out[...] = np.einsum("iq,i->q", L, w)
    return out


@njit(parallel=True)
def shifted_exp_nb(logf, shift, out):
    """``out[i, q] = exp(logf[i, q] - shift[i])``."""
    I, Q = logf.shape
    for i in prange(I):
        m = shift[i]
        for q in range(Q):
            out[i, q] = math.exp(logf[i, q] - m)
    return out


def shifted_exp_np(logf, shift, out):
    np.exp(logf - shift[:, None], out=out)
    return out


# --- concordant pairs (dominance diagnostic) ---------------------------------


def _pair_order(a, b):
    """Sort key for concordant-pair counting and 1-based dense ranks of ``b``.

    Sorting by ``a`` ascending with ties broken by ``b`` descending means an
    earlier element never counts against a later one with equal ``a``.
    """
    order = np.lexsort((-b, a))
    _, rank = np.unique(b, return_inverse=True)
    return order.astype(np.int64), (rank + 1).astype(np.int64)


@njit
def concordant_pairs_nb(order, rank):
    """Count pairs with (a_i - a_j)(b_i - b_j) > 0 via a Fenwick tree."""
    n = order.shape[0]
    r = 0
    for idx in range(n):
        r = max(r, rank[idx])
    tree = np.zeros(r + 1, dtype=np.int64)
    total = 0
    for idx in range(n):
        x = rank[order[idx]]
        pos = x - 1
        while pos > 0:
            total += tree[pos]
            pos -= pos & (-pos)
        pos = x
        while pos <= r:
            tree[pos] += 1
            pos += pos & (-pos)
    return total


def concordant_pairs_np(order, rank):
    r = int(rank.max()) if len(rank) else 0
    tree = [0] * (r + 1)
    total = 0
    for x in rank[order].tolist():
        pos = x - 1
        while pos > 0:
            total += tree[pos]
            pos -= pos & (-pos)
        pos = x
        while pos <= r:
            tree[pos] += 1
            pos += pos & (-pos)
    return total


# --- dispatch ----------------------------------------------------------------


def _pick(nb, np_):
    return nb if _accel.USE_NUMBA else np_


def linear_logf(*args):
    return _pick(linear_logf_nb, linear_logf_np)(*args)


def ces_logf(*args):
    return _pick(ces_logf_nb, ces_logf_np)(*args)


def mixture_rows(*args):
    return _pick(mixture_rows_nb, mixture_rows_np)(*args)


def weighted_colsum(*args):
    return _pick(weighted_colsum_nb, weighted_colsum_np)(*args)


def shifted_exp(*args):
    return _pick(shifted_exp_nb, shifted_exp_np)(*args)


def concordant_pairs(a, b):
    order, rank = _pair_order(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return int(_pick(concordant_pairs_nb, concordant_pairs_np)(order, rank))
