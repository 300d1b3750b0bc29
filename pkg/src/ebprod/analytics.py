"""Economic summaries built on firm posterior means.

Total technology productivity, production-approach labor markups, the
variance share explained by sector and size, and the non-dominance check
on (intercept, scale) pairs.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import _kernels
from .errors import DataError
from .models import Family, ces_log_composite
from .posterior import weighted_quantile


def _ratio(v, hi, lo):
    a, b = weighted_quantile(v, [hi, lo])
    return float(a / b) if b != 0 else float("inf")


# --- TTP -----------------------------------------------------------------------


@dataclass
class TTPResult:
    firm_ids: list
    sector: np.ndarray
    ln_ttp: np.ndarray
    ln_tfp: np.ndarray
    scale: np.ndarray
    reference: dict  # sector -> (ln K0, ln L0)
    label: str

    def frame(self):
        return pd.DataFrame({
            "firm_id": self.firm_ids,
            "sector": self.sector,
            "ln_ttp": self.ln_ttp,
            "ln_tfp": self.ln_tfp,
            "scale": self.scale,
        })

    def summary(self):
        """P90/P10 of TTP and TFP levels, pooled and per sector."""
        rows = []
        for sec in sorted(set(self.sector.tolist()), key=str):
            m = self.sector == sec
            rows.append({
                "sector": sec,
                "n": int(m.sum()),
                "ttp_p90_p10": _ratio(np.exp(self.ln_ttp[m]), 0.9, 0.1),
                "tfp_p90_p10": _ratio(np.exp(self.ln_tfp[m]), 0.9, 0.1),
                "sd_ln_ttp": float(np.std(self.ln_ttp[m])),
                "sd_ln_tfp": float(np.std(self.ln_tfp[m])),
            })
        by_sector = pd.DataFrame(rows)
        pooled = {
            "ttp_p90_p10": _ratio(np.exp(self.ln_ttp), 0.9, 0.1),
            "tfp_p90_p10": _ratio(np.exp(self.ln_tfp), 0.9, 0.1),
            "sector_mean_ttp_p90_p10": float(by_sector["ttp_p90_p10"].mean()),
            "sector_mean_tfp_p90_p10": float(by_sector["tfp_p90_p10"].mean()),
            "sd_ln_ttp": float(np.std(self.ln_ttp)),
            "sd_ln_tfp": float(np.std(self.ln_tfp)),
            "label": self.label,
        }
        return pooled, by_sector


def _medians(data, groups):
    out = {}
    for g in sorted(set(groups.tolist()), key=str):
        m = groups == g
        if not m.any():
            raise DataError(f"sector {g!r} has no firms")
        out[g] = (float(np.median(data.k[m])), float(np.median(data.l[m])))
    return out


def compute_ttp(post, data, model, reference="median_by_sector"):
    """Log output each firm would produce at common reference inputs.

    ``reference`` is ``"median_by_sector"`` (median log K and log L over the
    firm-periods of each sector), ``"pooled_median"``, or an explicit pair of
    input *levels* ``(K0, L0)``. For CES the composite is evaluated at the
    posterior-mean (omega, sigma, nu), a plug-in extension of the CD formula.
    """
    fam = model.family
    if fam is Family.INTENSIVE:
        raise DataError("TTP needs separate capital and labor elasticities (cd or ces)")
    if len(post) != data.n_firms:
        raise DataError("posteriors and panel disagree on the number of firms")
    if isinstance(reference, str):
        if reference == "median_by_sector":
            if data.sector is None:
                raise DataError("median_by_sector reference needs sector codes")
            sector = np.asarray(data.sector)
            ref = _medians(data, sector)
        elif reference == "pooled_median":
            sector = np.asarray(data.sector) if data.sector is not None else np.full(data.n_firms, "all", dtype=object)
            ref = {s: (float(np.median(data.k)), float(np.median(data.l))) for s in set(sector.tolist())}
        else:
            raise ValueError(f"unknown TTP reference {reference!r}")
    else:
        K0, L0 = (float(x) for x in reference)
        if K0 <= 0 or L0 <= 0:
            raise ValueError("reference inputs must be positive levels")
        sector = np.asarray(data.sector) if data.sector is not None else np.full(data.n_firms, "all", dtype=object)
        ref = {s: (np.log(K0), np.log(L0)) for s in set(sector.tolist())}
    lk = np.array([ref[s][0] for s in sector])
    ll = np.array([ref[s][1] for s in sector])
    tfp = post.column("abar")
    if fam is Family.CD:
        beta, gamma = post.column("beta"), post.column("gamma")
        ln_ttp = tfp + beta * lk + gamma * ll
        scale = beta + gamma
        label = "cd"
    else:
        nu = post.column("nu")
        ln_ttp = tfp + nu * ces_log_composite(lk, ll, post.column("omega"), post.column("sigma"))
        scale = nu
        label = "ces-plugin"
    return TTPResult(list(post.firm_ids), sector, ln_ttp, tfp, scale, ref, label)


# --- markups -------------------------------------------------------------------


@dataclass
class MarkupResult:
    firm_ids: list
    markup: np.ndarray  # (I, T)
    label: str

    def frame(self):
        I, T = self.markup.shape
        return pd.DataFrame({
            "firm_id": np.repeat(np.asarray(self.firm_ids, dtype=object), T),
            "t": np.tile(np.arange(1, T + 1), I),
            "markup": self.markup.ravel(),
        })

    def summary(self):
        return markup_summary(self.markup.ravel())


def markup_summary(values):
    v = np.asarray(values, dtype=float)
    p10, p50, p90 = weighted_quantile(v, [0.1, 0.5, 0.9])
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "sd": float(v.std()),
        "p50": float(p50),
        "p90_p50": float(p90 / p50),
        "p90_p10": float(p90 / p10),
    }


def compute_markups(post, data, model):
    """Labor elasticity over the labor share of revenue, per firm-period.

    CD uses the firm's time-invariant gamma. For CES the labor elasticity
    depends on inputs, ``nu (1-omega) L^rho / (omega K^rho + (1-omega) L^rho)``,
    evaluated at posterior means (plug-in).
    """
    if data.wage_share is None:
        raise DataError("markups need a wage_share column")
    share = np.asarray(data.wage_share, dtype=float)
    if not np.all(np.isfinite(share)) or np.any(share <= 0):
        raise DataError("wage_share must be finite and positive")
    fam = model.family
    if fam is Family.CD:
        elast = np.broadcast_to(post.column("gamma")[:, None], share.shape)
        label = "cd"
    elif fam is Family.CES:
        om = post.column("omega")[:, None]
        sig = post.column("sigma")[:, None]
        rho = (sig - 1.0) / sig
        la = np.log1p(-om) + rho * data.l
        ka = np.log(om) + rho * data.k
        elast = post.column("nu")[:, None] * np.exp(la - np.logaddexp(ka, la))
        label = "ces-plugin"
    else:
        raise DataError("markups need a labor elasticity (cd or ces)")
    return MarkupResult(list(post.firm_ids), elast / share, label)


# --- ANOVA ---------------------------------------------------------------------


def size_deciles(data):
    """Decile codes of per-firm mean y, k and l (three separate factors)."""
    out = {}
    for name in ("y", "k", "l"):
        m = getattr(data, name).mean(axis=1)
        # tied values share a decile; duplicate edges merge bins
        out[f"{name}_decile"] = pd.qcut(m, 10, labels=False, duplicates="drop")
    return out


def _factors(data, grouping, size_mode):
    f = {}
    if grouping in ("sector", "sector+size"):
        if data.sector is None:
            raise DataError("sector grouping needs sector codes")
        f["sector"] = np.asarray(data.sector)
    if grouping in ("size", "sector+size"):
        dec = size_deciles(data)
        if size_mode == "joint":
            f["size_cell"] = np.array([f"{a}-{b}-{c}" for a, b, c in zip(*dec.values())])
        elif size_mode == "additive":
            f.update(dec)
        else:
            raise ValueError("size_mode is 'additive' or 'joint'")
    if not f:
        raise ValueError(f"unknown grouping {grouping!r}")
    return f


def _dummies(factors):
    """Intercept plus one dummy per level beyond the first, per factor."""
    n = len(next(iter(factors.values())))
    cols = [np.ones(n)]
    for codes in factors.values():
        levels, inv = np.unique(np.asarray(codes).astype(str), return_inverse=True)
        for j in range(1, len(levels)):
            cols.append((inv == j).astype(float))
    return np.column_stack(cols)


def explained_share(values, factors):
    """Fraction of the total sum of squares explained by group fixed effects.

    With one factor this is between-group SS over total SS; with several it is
    the R-squared of the additive dummy regression. Returns ``(share, df)``.
    """
    v = np.asarray(values, dtype=float)
    tss = float(np.sum((v - v.mean()) ** 2))
    if len(factors) == 1:
        codes = np.asarray(next(iter(factors.values()))).astype(str)
        levels, inv = np.unique(codes, return_inverse=True)
        sums = np.bincount(inv, weights=v)
        counts = np.bincount(inv)
        means = sums / counts
        bss = float(np.sum(counts * (means - v.mean()) ** 2))
        df = len(levels) - 1
    else:
        X = _dummies(factors)
        coef, *_ = np.linalg.lstsq(X, v, rcond=None)
        resid = v - X @ coef
        bss = tss - float(resid @ resid)
        df = int(np.linalg.matrix_rank(X)) - 1
    if tss <= 0:
        return 0.0, df
    return float(min(max(bss / tss, 0.0), 1.0)), df


def anova_params(model):
    if model.family is Family.CD:
        return ("abar", "beta", "gamma")
    if model.family is Family.CES:
        return ("abar", "nu", "omega", "sigma")
    return ("a", "b")


def anova_decomposition(post, data, model, grouping="sector", size_mode="additive"):
    """Explained variance share per parameter.

    ``grouping`` is ``"sector"``, ``"size"`` or ``"sector+size"``. Size enters
    as three decile factors of per-firm mean y, k and l, either additively
    (``size_mode="additive"``) or as one crossed factor (``"joint"``).
    """
    factors = _factors(data, grouping, size_mode)
    rows = []
    for name in anova_params(model):
        share, df = explained_share(post.column(name), factors)
        rows.append({"parameter": name, "grouping": grouping,
                     "size_mode": size_mode if "size" in grouping else "",
                     "explained_share": share, "df": df})
    return pd.DataFrame(rows)


# --- dominance -----------------------------------------------------------------


def violating_pairs_exact(a, b):
    """Quadratic count of pairs with (a_i - a_j)(b_i - b_j) > 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    total = 0
    for i in range(len(a) - 1):
        sa = np.sign(a[i + 1:] - a[i])
        sb = np.sign(b[i + 1:] - b[i])
        total += int(np.count_nonzero(sa * sb > 0))
    return total


def dominance_diagnostic(post, model, method="fast"):
    """Share of firm pairs where one firm has both higher intercept and scale.

    Ties in either coordinate count as non-violating. ``method="exact"``
    enumerates every pair and is meant for a few thousand firms at most.
    """
    a = post.column(model.intercept_name)
    b = post.column(model.scale_name)
    n = len(a)
    if n < 2:
        raise ValueError("need at least two firms")
    if method == "fast":
        bad = _kernels.concordant_pairs(a, b)
    elif method == "exact":
        bad = violating_pairs_exact(a, b)
    else:
        raise ValueError("method is 'fast' or 'exact'")
    pairs = n * (n - 1) // 2
    with np.errstate(invalid="ignore"):
        corr = float(np.corrcoef(a, b)[0, 1]) if np.std(a) > 0 and np.std(b) > 0 else float("nan")
    return {
        "pairs": pairs,
        "violating_pairs": int(bad),
        "violating_share": bad / pairs,
        "non_violating_share": (pairs - bad) / pairs,
        "corr_intercept_scale": corr,
    }
