"""Firm-by-firm least squares: the inefficient heterogeneous baseline."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError
from .models import Family

RANK_TOL = 1e-8


def regressors(data, model):
    """Design array ``(I, T, p)`` and coefficient names for linear families."""
    fam = model.family
    y = data.y
    if fam is Family.CD:
        t = np.broadcast_to(data.periods.astype(float), y.shape)
        X = np.stack([np.ones_like(y), data.k, data.l, t, t * t], axis=-1)
        return X, ("alpha0", "beta", "gamma", "alpha1", "alpha2")
    if fam is Family.INTENSIVE:
        return np.stack([np.ones_like(y), data.k], axis=-1), ("a", "b")
    raise ConfigError("the OLS baseline covers the linear families (cd, intensive)")


@dataclass
class FirmOLS:
    firm_ids: list
    names: tuple
    coef: np.ndarray  # (I, p), NaN where rank-deficient
    residual_sd: np.ndarray
    rank_ok: np.ndarray
    rank: np.ndarray

    def column(self, name):
        return self.coef[:, self.names.index(name)]

    def frame(self):
        df = pd.DataFrame(self.coef, columns=list(self.names))
        df.insert(0, "firm_id", self.firm_ids)
        df["residual_sd"] = self.residual_sd
        df["rank_ok"] = self.rank_ok
        return df


def _svd_fit(X, y, rank_tol):
    """Batched least squares by SVD; columns below the tolerance are truncated."""
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    keep = S >= rank_tol * S[..., :1]
    inv = np.where(keep, 1.0 / np.where(keep, S, 1.0), 0.0)
    uty = np.einsum("itp,it->ip", U, y)
    coef = np.einsum("ipq,ip->iq", Vt, inv * uty)
    return coef, keep.sum(axis=-1)


def per_firm_ols(data, model, rank_tol=RANK_TOL):
    """OLS of y on the model's regressors, one firm at a time.

    Firms whose design has smallest/largest singular value below
    ``rank_tol`` get ``rank_ok=False`` and NaN coefficients. Their residual SD
    comes from the rank-truncated fit, with ``T - rank`` degrees of freedom.
    """
    X, names = regressors(data, model)
    T, p = X.shape[1], X.shape[2]
    if T < p + 1:
        raise ConfigError(f"T={T} is too short for {p} regressors per firm")
    coef, rank = _svd_fit(X, data.y, rank_tol)
    resid = data.y - np.einsum("itp,ip->it", X, coef)
    rsd = np.sqrt(np.einsum("it,it->i", resid, resid) / (T - rank))
    ok = rank == p
    coef[~ok] = np.nan
    return FirmOLS(list(data.firm_ids), names, coef, rsd, ok, rank)


def pooled_ols(data, model):
    """One regression over all firm-periods (homogeneous technology)."""
    X, names = regressors(data, model)
    p = X.shape[-1]
    Xf = X.reshape(-1, p)
    yf = data.y.reshape(-1)
    coef, *_ = np.linalg.lstsq(Xf, yf, rcond=None)
    resid = yf - Xf @ coef
    return dict(zip(names, coef.tolist())), float(np.sqrt(resid @ resid / (len(yf) - p)))
