"""Fixed-point (EM) estimation of the mixing distribution over grid types.

Given log densities log f_iq and a prior pi, the posterior of firm i is
``h_iq ∝ f_iq pi_q``; the update replaces pi by the column means of H. Its
fixed point reached from a full-support start is the nonparametric maximum
likelihood estimate, and every step weakly increases the log-likelihood
``sum_i log sum_q pi_q f_iq``.

The iteration works on ``L = exp(log f - m)`` with a per-firm shift ``m``.
When the active part of ``L`` fits half the memory budget it is held
densely; otherwise it is recomputed from the density source chunk by chunk
on every pass. Types whose weight decays below ``prune_eps / (I Q)`` leave
the active set, which bounds their effect on the log-likelihood by about
``I * prune_eps`` while making late iterations far cheaper.
"""

from dataclasses import asdict, dataclass, field
import json
import logging
import math

import numpy as np

from . import _kernels
from .errors import ConvergenceError
from .likelihood import DEFAULT_BUDGET, block_shape_for_budget

log = logging.getLogger(__name__)


@dataclass
class MixingDistribution:
    weights: np.ndarray
    loglik: float = float("nan")

    @property
    def support(self):
        return np.flatnonzero(self.weights > 0)

    @property
    def support_size(self):
        return int(np.count_nonzero(self.weights > 0))

    @classmethod
    def uniform(cls, Q):
        return cls(np.full(Q, 1.0 / Q))

    @classmethod
    def point_mass(cls, Q, q):
        w = np.zeros(Q)
        w[q] = 1.0
        return cls(w)

    def validate(self, atol=1e-12):
        w = self.weights
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a finite nonnegative vector")
        if abs(w.sum() - 1.0) > atol:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        return self


@dataclass
class SolverReport:
    iterations: int = 0
    loglik_trace: list = field(default_factory=list)
    final_delta: float = float("inf")
    support_size: int = 0
    converged: bool = False
    active_trace: list = field(default_factory=list)
    mode: str = "dense"

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def monotone(self, tol=1e-10):
        ll = np.asarray(self.loglik_trace)
        return bool(np.all(np.diff(ll) >= -tol))


def posterior_row(log_f_row, weights):
    """Posterior type probabilities of one firm under prior ``weights``."""
    log_f_row = np.asarray(log_f_row, dtype=float)
    w = np.asarray(weights, dtype=float)
    out = np.zeros_like(log_f_row)
    pos = w > 0
    if not pos.any():
        raise ValueError("prior has no mass")
    z = log_f_row[pos] + np.log(w[pos])
    zmax = z.max()
    if not np.isfinite(zmax):
        raise ValueError("firm has zero likelihood under every supported type")
    e = np.exp(z - zmax)
    out[pos] = e / e.sum()
    return out


def posterior_matrix(logf, weights):
    """Row-wise posterior probabilities for a matrix of log densities."""
    logf = np.asarray(logf, dtype=float)
    w = np.asarray(weights, dtype=float)
    out = np.zeros_like(logf)
    pos = w > 0
    z = logf[:, pos] + np.log(w[pos])
    zmax = z.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(zmax)):
        raise ValueError("a firm has zero likelihood under every supported type")
    e = np.exp(z - zmax)
    out[:, pos] = e / e.sum(axis=1, keepdims=True)
    return out


def loglik(source, weights, memory_budget=DEFAULT_BUDGET):
    """``sum_i log sum_q w_q f_iq`` evaluated over the support of ``weights``."""
    w = np.asarray(weights, dtype=float)
    support = np.flatnonzero(w > 0)
    I = source.n_firms
    # one chunk of log f plus one temporary of the same size
    _, bt = block_shape_for_budget(I, len(support), memory_budget // 4)
    acc = np.full(I, -np.inf)
    for c0 in range(0, len(support), bt):
        qs = support[c0:c0 + bt]
        z = source.columns(qs)
        z += np.log(w[qs])
        acc = np.logaddexp(acc, _logsumexp_rows(z))
    return float(acc.sum())


def _logsumexp_rows(z):
    m = z.max(axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    e = np.subtract(z, safe[:, None])
    np.exp(e, out=e)
    return safe + np.log(e.sum(axis=1))


class _ActiveSet:
    """Scaled likelihood columns ``exp(log f - m)`` for the active types.

    ``cols`` lists the type indices held, aligned with the weight vector the
    solver carries. Pruned types first just get zero weight; storage is
    compacted once less than 70% of it is live.
    """

    def __init__(self, source, cols, memory_budget):
        self.source = source
        self.budget = memory_budget
        self.I = source.n_firms
        self.cols = cols
        self.dense = None
        self.m = self._row_max(cols)
        self._densify()

    def _chunks(self, qs):
        # a consumer can hold one chunk while the next is built
        _, bt = block_shape_for_budget(self.I, max(len(qs), 1), self.budget // 8)
        for c0 in range(0, len(qs), bt):
            yield c0, qs[c0:c0 + bt]

    def _row_max(self, qs):
        m = np.full(self.I, -np.inf)
        for _, chunk in self._chunks(qs):
            np.maximum(m, self.source.columns(chunk).max(axis=1), out=m)
        if not np.all(np.isfinite(m)):
            raise ConvergenceError("a firm has zero likelihood under every grid type")
        return m

    def _densify(self):
        if self.dense is None and self.I * len(self.cols) * 8 <= self.budget // 2:
            L = np.empty((self.I, len(self.cols)))
            for c0, chunk in self._chunks(self.cols):
                L[:, c0:c0 + len(chunk)] = self.source.columns(chunk)
            self.dense = _kernels.shifted_exp(L, self.m, L)

    @property
    def mode(self):
        return "dense" if self.dense is not None else "stream"

    def compact(self, weights):
        """Drop zero-weight columns when worthwhile; returns aligned weights."""
        live = weights > 0
        if live.all() or (self.dense is not None and live.mean() >= 0.7):
            return weights
        self.cols = self.cols[live]
        if self.dense is not None:
            # take() writes one C-ordered copy; boolean indexing plus a
            # contiguity fix would briefly hold two
            self.dense = np.take(self.dense, np.flatnonzero(live), axis=1)
        else:
            self._densify()
        return weights[live]

    def columns_L(self):
        """Yield (offset, L chunk) over the held columns."""
        if self.dense is not None:
            yield 0, self.dense
            return
        for c0, chunk in self._chunks(self.cols):
            block = self.source.columns(chunk)
            yield c0, _kernels.shifted_exp(block, self.m, block)


def _em_pass(aset, pa, denom, I):
    """One coherence update plus the denominators of the updated prior."""
    w = 1.0 / denom
    new_pa = np.empty_like(pa)
    new_denom = np.zeros(I)
    for c0, L in aset.columns_L():
        n = L.shape[1]
        g = _kernels.weighted_colsum(L, w, np.empty(n))
        seg = pa[c0:c0 + n] * g / I
        new_pa[c0:c0 + n] = seg
        new_denom += _kernels.mixture_rows(L, seg, np.empty(I))
    total = new_pa.sum()
    return new_pa / total, new_denom / total


def _denominators(aset, pa, I):
    denom = np.zeros(I)
    for c0, L in aset.columns_L():
        denom += _kernels.mixture_rows(L, pa[c0:c0 + L.shape[1]], np.empty(I))
    return denom


def _extrapolate(p0, p1, p2):
    """Squared-extrapolation point, backtracked toward ``p2`` until nonnegative."""
    r = p1 - p0
    v = p2 - p1 - r
    nv = np.sqrt(np.dot(v, v))
    if nv == 0.0:
        return None
    alpha = min(-np.sqrt(np.dot(r, r)) / nv, -1.0)
    live = p2 > 0
    while alpha < -1.0:
        pe = p0 - 2.0 * alpha * r + alpha * alpha * v
        if np.all(pe[live] > 0):
            pe[~live] = 0.0
            return pe / pe.sum()
        alpha = 0.5 * (alpha - 1.0)
        if alpha > -1.0 - 1e-3:
            break
    return None


def fixed_point_iterate(
    source,
    pi0=None,
    tol=1e-9,
    max_iter=20_000,
    loglik_tol=1e-10,
    memory_budget=DEFAULT_BUDGET,
    prune_eps=1e-16,
    log_every=0,
    accelerate=False,
):
    """Iterate the coherence map pi -> colmean(H(F, pi)) to its fixed point.

    Returns ``(MixingDistribution, SolverReport)``. Converged means one plain
    update moves pi by at most ``tol`` in max-norm and gains at most
    ``loglik_tol`` in log-likelihood. Zero weights stay zero.

    With ``accelerate`` every two plain updates are followed by a squared
    extrapolation step (SQUAREM). The extrapolated point is kept only if one
    further update from it does not lower the log-likelihood, so the trace
    stays monotone.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    I, Q = source.n_firms, source.n_types
    pi = (MixingDistribution.uniform(Q) if pi0 is None else pi0).weights.astype(float).copy()
    MixingDistribution(pi).validate(1e-9)
    pi /= pi.sum()
    report = SolverReport()
    aset = _ActiveSet(source, np.flatnonzero(pi > 0), memory_budget)
    pa = pi[aset.cols]
    floor = prune_eps / (I * Q) if prune_eps else 0.0

    denom = _denominators(aset, pa, I)
    ll = _loglik_from(aset.m, denom)
    report.loglik_trace.append(ll)
    it = 0
    while it < max_iter:
        p1, d1 = _em_pass(aset, pa, denom, I)
        it += 1
        ll1 = _loglik_from(aset.m, d1)
        report.loglik_trace.append(ll1)
        delta = float(np.max(np.abs(p1 - pa)))
        gain = ll1 - ll
        report.final_delta = delta
        if log_every and it % log_every < (3 if accelerate else 1):
            log.info(json.dumps({"event": "iteration", "iter": it, "loglik": ll1, "delta": delta,
                                 "active": int(np.count_nonzero(p1)), "mode": aset.mode}))
        if delta <= tol and gain <= loglik_tol:
            pa, denom, ll = p1, d1, ll1
            report.converged = True
            break
        if accelerate and it + 2 <= max_iter:
            p2, d2 = _em_pass(aset, p1, d1, I)
            it += 1
            ll2 = _loglik_from(aset.m, d2)
            report.loglik_trace.append(ll2)
            pe = _extrapolate(pa, p1, p2)
            pa, denom, ll = p2, d2, ll2
            if pe is not None:
                p3, d3 = _em_pass(aset, pe, _denominators(aset, pe, I), I)
                it += 1
                ll3 = _loglik_from(aset.m, d3)
                if ll3 >= ll2:
                    pa, denom, ll = p3, d3, ll3
                    report.loglik_trace.append(ll3)
        else:
            pa, denom, ll = p1, d1, ll1
        newly = (pa > 0) & (pa < floor)
        if newly.any():
            # dropped mass is below I*prune_eps in relative terms; the stale
            # denominators are off by the same negligible amount
            pa[newly] = 0.0
            total = pa.sum()
            pa /= total
            denom = denom / total
        if not pa.all():
            before = len(aset.cols)
            pa = aset.compact(pa)
            if len(aset.cols) != before:
                report.active_trace.append((it, len(aset.cols)))

    report.iterations = it
    pi = np.zeros(Q)
    pi[aset.cols] = pa
    report.support_size = int(np.count_nonzero(pi))
    report.mode = aset.mode
    return MixingDistribution(pi, ll), report


def _loglik_from(m, denom):
    with np.errstate(divide="ignore"):
        ll = float(np.sum(m + np.log(denom)))
    if not math.isfinite(ll):
        raise ConvergenceError("log-likelihood is not finite; the grid does not cover some firms")
    return ll


def extract_support(pi, threshold=None):
    """Zero weights below ``threshold`` and renormalize."""
    w = np.asarray(pi.weights, dtype=float)
    Q = len(w)
    if threshold is None:
        threshold = 1e-10 / Q
    if not (0 < threshold <= 1.0 / Q):
        raise ValueError(f"threshold must lie in (0, 1/Q], got {threshold}")
    out = np.where(w >= threshold, w, 0.0)
    if out.sum() == 0:
        raise ValueError("every weight is below the support threshold")
    out /= out.sum()
    return MixingDistribution(out, pi.loglik)


def _zeroing_steps(ws, d):
    """The two steps along ``d`` that first hit a zero weight, as (j, t)."""
    with np.errstate(divide="ignore"):
        up = np.where(d < 0, ws / -d, np.inf)
        down = np.where(d > 0, ws / d, np.inf)
    steps = []
    if np.isfinite(up.min()):
        steps.append((int(np.argmin(up)), up.min()))
    if np.isfinite(down.min()):
        steps.append((int(np.argmin(down)), -down.min()))
    return steps


def reduce_support(source, pi, rtol=1e-8, ll_tol=1e-9):
    """Shrink the support without changing any firm's fitted density.

    A step ``d`` with ``L d = 0`` and ``sum(d) = 0`` keeps every mixture
    density f_i(pi) and the total mass fixed. Any I + 2 supported columns
    admit such a step, so the support is walked down in windows of I + 2
    types, each step going just far enough to zero one weight. At exactly
    I + 1 types the step exists only at the likelihood maximum, where the
    first-order conditions make the sum row a combination of the density
    rows. Near it, a step with ``L d = 0`` followed by renormalization moves
    the log-likelihood by a second-order amount; that last step is taken
    only if the change stays within ``ll_tol``.
    """
    w = np.asarray(pi.weights, dtype=float).copy()
    S = np.flatnonzero(w > 0)
    I = source.n_firms
    if len(S) <= I:
        return pi
    logf = source.columns(S)
    L = np.exp(logf - logf.max(axis=1, keepdims=True))
    ws = w[S]
    alive = np.ones(len(S), dtype=bool)
    window = list(range(min(I + 2, len(S))))
    nxt = len(window)
    while len(window) == I + 2:
        idx = np.array(window)
        A = np.vstack([L[:, idx], np.ones(len(idx))])
        d = np.linalg.svd(A, full_matrices=True)[2][-1]
        j, t = _zeroing_steps(ws[idx], d)[0]
        ws[idx] = np.clip(ws[idx] + t * d, 0.0, None)
        ws[idx[j]] = 0.0
        alive[idx] = ws[idx] > 0
        window = [k for k in window if alive[k]]
        while len(window) < I + 2 and nxt < len(S):
            window.append(nxt)
            nxt += 1
    ws, L, S = ws[alive], L[:, alive], S[alive]
    if len(ws) == I + 1:
        A = np.vstack([L, np.ones(len(ws))])
        sv, vt = np.linalg.svd(A)[1:]
        if sv[-1] <= rtol * sv[0]:
            j, t = _zeroing_steps(ws, vt[-1])[0]
            ws = np.clip(ws + t * vt[-1], 0.0, None)
            ws[j] = 0.0
        else:
            d = np.linalg.svd(L, full_matrices=True)[2][-1]
            base = np.sum(np.log(L @ ws))
            best = None
            for j, t in _zeroing_steps(ws, d):
                cand = np.clip(ws + t * d, 0.0, None)
                cand[j] = 0.0
                if cand.sum() <= 0:
                    continue
                cand /= cand.sum()
                change = np.sum(np.log(L @ cand)) - base
                if abs(change) <= ll_tol and (best is None or abs(change) < abs(best[0])):
                    best = (change, cand)
            if best is not None:
                ws = best[1]
        keep = ws > 0
        ws, S = ws[keep], S[keep]
    out = np.zeros_like(w)
    out[S] = ws / ws.sum()
    return MixingDistribution(out, pi.loglik)


def coherence_residual(source, pi, memory_budget=DEFAULT_BUDGET):
    """Max-norm gap between ``pi`` and the column means of ``H(F, pi)``."""
    w = pi.weights
    support = np.flatnonzero(w > 0)
    logf = source.columns(support)
    H = posterior_matrix(logf, w[support])
    return float(np.max(np.abs(H.mean(axis=0) - w[support])))


def solve(source, tol=1e-9, max_iter=20_000, loglik_tol=1e-10, memory_budget=DEFAULT_BUDGET,
          restarts=0, seed=0, log_every=0, prune_eps=1e-16, accelerate=True, threshold=None):
    """Run the fixed point from the uniform prior, plus optional Dirichlet restarts.

    Restarts are diagnostic only: the best log-likelihood wins, and ties go
    to the uniform start. The winner is passed through ``extract_support``
    (default threshold ``1e-10 / Q``), and through ``reduce_support`` when it
    converged; its log-likelihood is then recomputed.
    """
    kw = dict(tol=tol, max_iter=max_iter, loglik_tol=loglik_tol, memory_budget=memory_budget,
              prune_eps=prune_eps, accelerate=accelerate)
    best = fixed_point_iterate(source, None, log_every=log_every, **kw)
    if restarts:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xEB])))
        for r in range(restarts):
            start = MixingDistribution(rng.dirichlet(np.ones(source.n_types)))
            cand = fixed_point_iterate(source, start, **kw)
            log.info(json.dumps({"event": "restart", "restart": r, "loglik": cand[0].loglik}))
            if cand[0].loglik > best[0].loglik + 1e-9:
                best = cand
    pi, report = best
    pi = extract_support(pi, threshold)
    if report.converged:
        pi = reduce_support(source, pi)
    pi.loglik = loglik(source, pi.weights, memory_budget)
    report.support_size = pi.support_size
    return pi, report
