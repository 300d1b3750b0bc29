"""Firm-level posterior estimates and population moments under pi*."""

from dataclasses import dataclass

import numpy as np

from .models import derived_columns
from .solver import posterior_matrix


def value_columns(model, params):
    """Parameter columns plus derived intercept/scale, as an ordered dict."""
    params = np.atleast_2d(params)
    cols = {n: params[:, j] for j, n in enumerate(model.param_names)}
    for name, v in derived_columns(model, params).items():
        if name not in cols:
            cols[name] = v
    return cols


@dataclass
class FirmPosterior:
    firm_id: str
    expected_params: dict
    posterior_sd: dict
    top_type: int


@dataclass
class FirmPosteriors:
    """Posterior means and SDs for every firm, column-aligned with ``names``."""

    firm_ids: list
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    top_type: np.ndarray

    def __len__(self):
        return len(self.firm_ids)

    def column(self, name):
        return self.mean[:, self.names.index(name)]

    def sd_column(self, name):
        return self.sd[:, self.names.index(name)]

    def records(self):
        return [
            FirmPosterior(
                fid,
                dict(zip(self.names, self.mean[i])),
                dict(zip(self.names, self.sd[i])),
                int(self.top_type[i]),
            )
            for i, fid in enumerate(self.firm_ids)
        ]


def firm_posteriors(source, pi, table, firm_ids=None, chunk=256):
    """Posterior expectation of each firm's parameters over the support of pi."""
    model = table.model
    support = pi.support
    if support.size == 0:
        raise ValueError("mixing distribution has empty support")
    w = pi.weights[support]
    cols = value_columns(model, table.params(support))
    names = tuple(cols)
    V = np.column_stack([cols[n] for n in names])  # (S, K)
    I = source.n_firms
    mean = np.empty((I, len(names)))
    sd = np.empty((I, len(names)))
    top = np.empty(I, dtype=np.int64)
    for f0 in range(0, I, chunk):
        f1 = min(f0 + chunk, I)
        H = posterior_matrix(source.columns(support, slice(f0, f1)), w)
        m = H @ V
        dev = V[None, :, :] - m[:, None, :]
        var = np.einsum("is,isk->ik", H, dev * dev)
        mean[f0:f1] = m
        sd[f0:f1] = np.sqrt(var)
        top[f0:f1] = support[np.argmax(H, axis=1)]
    if firm_ids is None:
        firm_ids = [str(i) for i in range(I)]
    return FirmPosteriors(list(firm_ids), names, mean, sd, top)


def weighted_quantile(x, q, weights=None):
    """Quantile of a discrete distribution.

    Takes the smallest value whose cumulative weight reaches ``q``; when the
    cumulative weight hits ``q`` exactly, averages with the next value. For
    equal weights this is numpy's ``averaged_inverted_cdf``.
    """
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    keep = w > 0
    x, w = x[keep], w[keep]
    order = np.argsort(x, kind="mergesort")
    x, w = x[order], w[order]
    cw = np.cumsum(w) / w.sum()
    scalar = np.ndim(q) == 0
    out = []
    for p in np.atleast_1d(q):
        eps = 1e-12
        j = int(np.searchsorted(cw, p - eps, side="left"))
        j = min(j, len(x) - 1)
        if abs(cw[j] - p) <= eps and j + 1 < len(x):
            out.append(0.5 * (x[j] + x[j + 1]))
        else:
            out.append(x[j])
    return out[0] if scalar else np.array(out)


@dataclass
class PopulationMoments:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    corr: np.ndarray
    quantiles: dict  # name -> (p10, p50, p90)

    def to_dict(self):
        return {
            "names": list(self.names),
            "mean": dict(zip(self.names, self.mean.tolist())),
            "sd": dict(zip(self.names, self.sd.tolist())),
            "quantiles": {n: dict(zip(("p10", "p50", "p90"), map(float, v))) for n, v in self.quantiles.items()},
            "corr": {a: dict(zip(self.names, row)) for a, row in zip(self.names, _nan_to_none(self.corr))},
        }


def _nan_to_none(mat):
    return [[None if not np.isfinite(v) else float(v) for v in row] for row in mat]


def moments_from_values(cols, weights=None):
    """Weighted moments of named columns (equal weights when ``weights`` is None)."""
    names = tuple(cols)
    V = np.column_stack([np.asarray(cols[n], dtype=float) for n in names])
    w = np.full(V.shape[0], 1.0 / V.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = w @ V
    dev = V - mean
    cov = (dev * w[:, None]).T @ dev
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    quants = {n: weighted_quantile(V[:, j], [0.1, 0.5, 0.9], w) for j, n in enumerate(names)}
    return PopulationMoments(names, mean, sd, corr, quants)


def population_moments(pi, table):
    """Moments of the discrete mixing distribution over grid values."""
    support = pi.support
    cols = value_columns(table.model, table.params(support))
    return moments_from_values(cols, pi.weights[support])


def posterior_mean_moments(post):
    """Moments across firms of the posterior means (each firm weighs 1/I)."""
    return moments_from_values({n: post.mean[:, j] for j, n in enumerate(post.names)})


LEVEL_RATIO = ("alpha0", "abar", "a")


def dispersion_table(cols, weights=None, level_ratio=LEVEL_RATIO):
    """Median, SD and P90/P10 per column.

    For intercepts (names in ``level_ratio``) the ratio is taken between
    quantiles of ``exp(value)``; for elasticities it is the raw quantile
    ratio. A zero P10 gives an infinite ratio and sets ``flag``.
    """
    rows = {}
    for name, v in cols.items():
        v = np.asarray(v, dtype=float)
        w = np.full(v.size, 1.0 / v.size) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
        p10, p50, p90 = weighted_quantile(v, [0.1, 0.5, 0.9], w)
        mu = w @ v
        sd = float(np.sqrt(max(w @ (v - mu) ** 2, 0.0)))
        flag = False
        if name in level_ratio:
            e10, e90 = weighted_quantile(np.exp(v), [0.1, 0.9], w)
            ratio = float(e90 / e10)
        elif p10 == 0:
            ratio, flag = float("inf"), True
        else:
            ratio = float(p90 / p10)
        rows[name] = {"median": float(p50), "sd": sd, "p90_p10": ratio, "flag": flag}
    return rows
