"""Balanced firm panels: loading, validation, trimming and serialization."""

from dataclasses import dataclass, field, replace
import logging

import numpy as np
import pandas as pd

from .errors import DataError

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = {
    "firm_id": "firm_id",
    "year": "t",
    "y": "y",
    "k": "k",
    "l": "l",
    "sector": "sector",
    "wage_share": "wage_share",
}


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced firm x period panel of log output, log capital and log labor.

    Arrays are ``(I, T)`` float64. ``periods`` always runs ``1..T``.
    """

    firm_ids: list
    periods: np.ndarray
    y: np.ndarray
    k: np.ndarray
    l: np.ndarray
    sector: np.ndarray | None = None
    wage_share: np.ndarray | None = None
    dropped: dict = field(default_factory=dict)

    @property
    def n_firms(self):
        return self.y.shape[0]

    @property
    def n_periods(self):
        return self.y.shape[1]

    @property
    def n_obs(self):
        return self.y.size

    def validate(self):
        """Raise ``DataError`` if any panel invariant is violated."""
        I, T = self.y.shape
        if I < 1 or T < 2:
            raise DataError(f"panel needs I >= 1 and T >= 2, got I={I}, T={T}")
        for name in ("y", "k", "l"):
            arr = getattr(self, name)
            if arr.shape != (I, T):
                raise DataError(f"{name} has shape {arr.shape}, expected {(I, T)}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if len(self.firm_ids) != I:
            raise DataError("firm_ids length does not match the panel")
        if not np.array_equal(self.periods, np.arange(1, T + 1)):
            raise DataError("periods must be 1..T")
        if self.sector is not None and len(self.sector) != I:
            raise DataError("sector length does not match the panel")
        if self.wage_share is not None:
            if self.wage_share.shape != (I, T):
                raise DataError("wage_share shape does not match the panel")
            if not np.all(np.isfinite(self.wage_share)) or np.any(self.wage_share <= 0):
                raise DataError("wage_share entries must be finite and strictly positive")
        return self

    def subset(self, mask):
        """Keep the firms selected by boolean ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            firm_ids=[f for f, keep in zip(self.firm_ids, mask) if keep],
            y=self.y[mask],
            k=self.k[mask],
            l=self.l[mask],
            sector=None if self.sector is None else self.sector[mask],
            wage_share=None if self.wage_share is None else self.wage_share[mask],
        )

    def intensive(self):
        """Per-worker form: output and capital per worker in logs.

        ``y - l`` and ``k - l``; labor itself is kept for reference.
        """
        return replace(self, y=self.y - self.l, k=self.k - self.l)

    def to_frame(self):
        I, T = self.y.shape
        df = pd.DataFrame(
            {
                "firm_id": np.repeat(np.asarray(self.firm_ids, dtype=object), T),
                "t": np.tile(self.periods, I),
                "y": self.y.ravel(),
                "k": self.k.ravel(),
                "l": self.l.ravel(),
            }
        )
        if self.sector is not None:
            df["sector"] = np.repeat(self.sector, T)
        if self.wage_share is not None:
            df["wage_share"] = self.wage_share.ravel()
        return df


def from_arrays(y, k, l, firm_ids=None, sector=None, wage_share=None):
    y = np.ascontiguousarray(y, dtype=np.float64)
    I, T = y.shape
    if firm_ids is None:
        firm_ids = [str(i) for i in range(I)]
    data = PanelDataset(
        firm_ids=list(firm_ids),
        periods=np.arange(1, T + 1),
        y=y,
        k=np.ascontiguousarray(k, dtype=np.float64),
        l=np.ascontiguousarray(l, dtype=np.float64),
        sector=None if sector is None else np.asarray(sector),
        wage_share=None if wage_share is None else np.ascontiguousarray(wage_share, dtype=np.float64),
    )
    return data.validate()


def _read_table(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            head = fh.readline()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    sep = "\t" if head.count("\t") > head.count(",") else ","
    try:
        return pd.read_csv(path, sep=sep, float_precision="round_trip")
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise DataError(f"cannot parse {path}: {exc}") from exc


def panel_from_frame(df, column_map=None, log_transform=False, years=None):
    """Build a balanced panel from a long-format frame.

    ``column_map`` maps canonical names (``firm_id``, ``year``, ``y``, ``k``,
    ``l`` and optionally ``sector``, ``wage_share``) to frame columns.
    Firms missing any cell inside the requested window are dropped and
    counted in ``PanelDataset.dropped``.
    """
    cmap = dict(DEFAULT_COLUMNS)
    if column_map:
        cmap.update(column_map)
    optional = {"sector", "wage_share"}
    for key, col in cmap.items():
        if col not in df.columns and key not in optional:
            raise DataError(f"missing column {col!r} (mapped from {key!r})")
    cmap = {key: col for key, col in cmap.items() if col in df.columns}

    value_cols = ["y", "k", "l"] + (["wage_share"] if "wage_share" in cmap else [])
    work = pd.DataFrame({"firm_id": df[cmap["firm_id"]].astype(str), "year": df[cmap["year"]]})
    for key in value_cols:
        work[key] = pd.to_numeric(df[cmap[key]], errors="coerce")
    if "sector" in cmap:
        work["sector"] = df[cmap["sector"]].astype(str)

    if not np.all(np.isfinite(work["year"].astype(float))):
        raise DataError("year column has missing or non-numeric values")
    work["year"] = work["year"].astype(np.int64)
    if years is not None:
        lo, hi = years
        work = work[(work["year"] >= lo) & (work["year"] <= hi)]
        all_years = np.arange(lo, hi + 1)
    else:
        all_years = np.sort(work["year"].unique())
        if len(all_years):
            all_years = np.arange(all_years[0], all_years[-1] + 1)

    if log_transform:
        raw = work[["y", "k", "l"]].to_numpy(dtype=float)
        finite = np.isfinite(raw)
        if np.any(raw[finite] <= 0):
            raise DataError("log_transform requires strictly positive y, k, l")
        work[["y", "k", "l"]] = np.log(raw)

    n_input = work["firm_id"].nunique()
    work = work.drop_duplicates(["firm_id", "year"], keep="first")
    complete = work.dropna(subset=value_cols)
    counts = complete.groupby("firm_id")["year"].nunique()
    keep = counts.index[counts == len(all_years)]
    if "sector" in complete:
        # firms that switch sector are not balanced in the cross-section sense
        n_sec = complete[complete["firm_id"].isin(keep)].groupby("firm_id")["sector"].nunique()
        keep = n_sec.index[n_sec == 1]
    complete = complete[complete["firm_id"].isin(keep)]
    dropped = {"unbalanced": int(n_input - len(keep))}
    if len(keep) == 0:
        raise DataError("no firm survives balancing")
    if dropped["unbalanced"]:
        log.info("dropped %d firms to balance the panel", dropped["unbalanced"])

    complete = complete.sort_values(["firm_id", "year"], kind="mergesort")
    firm_order = pd.unique(complete["firm_id"])
    I, T = len(firm_order), len(all_years)

    def grid(col):
        return complete[col].to_numpy(dtype=np.float64).reshape(I, T)

    sector = None
    if "sector" in complete:
        sector = complete["sector"].to_numpy().reshape(I, T)[:, 0].astype(str)
    data = PanelDataset(
        firm_ids=[str(f) for f in firm_order],
        periods=np.arange(1, T + 1),
        y=grid("y"),
        k=grid("k"),
        l=grid("l"),
        sector=sector,
        wage_share=grid("wage_share") if "wage_share" in cmap else None,
        dropped=dropped,
    )
    return data.validate()


def load_panel(path, column_map=None, log_transform=False, years=None):
    """Read a delimited text panel (comma or tab, header row)."""
    return panel_from_frame(_read_table(path), column_map, log_transform, years)


def save_panel(data, path):
    """Write the canonical CSV: firm_id, t, y, k, l [, sector, wage_share]."""
    data.to_frame().to_csv(path, index=False, lineterminator="\n")


def quantile_trim(data, lower=0.0, upper=1.0):
    """Drop firms with any y, k or l outside the pooled quantile band."""
    if not (0.0 <= lower < upper <= 1.0):
        raise ValueError(f"need 0 <= lower < upper <= 1, got ({lower}, {upper})")
    keep = np.ones(data.n_firms, dtype=bool)
    for name in ("y", "k", "l"):
        arr = getattr(data, name)
        lo, hi = np.quantile(arr, [lower, upper])
        keep &= np.all((arr >= lo) & (arr <= hi), axis=1)
    if not keep.any():
        raise DataError("quantile band excludes every firm")
    out = data.subset(keep)
    dropped = dict(data.dropped)
    dropped["trimmed"] = dropped.get("trimmed", 0) + int((~keep).sum())
    return replace(out, dropped=dropped)
