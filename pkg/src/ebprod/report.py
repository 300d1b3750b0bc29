"""Artifact writers: CSV, JSON and small self-contained SVG histograms.

Everything here is byte-deterministic for a given input: floats are written
in round-trip repr form, JSON keys are sorted, and the SVGs are built by
hand so no plotting backend can slip in timestamps or font metrics.
"""

import json
import math
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from .posterior import FirmPosteriors

HIST_BINS = 30


def write_csv(df, path):
    # pandas writes floats with repr, which round-trips exactly
    df.to_csv(path, index=False, lineterminator="\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def pi_star_frame(pi, table):
    """One row per support type: index, parameter values, weight."""
    support = pi.support
    df = pd.DataFrame(table.params(support), columns=list(table.model.param_names))
    df.insert(0, "type", support)
    df["weight"] = pi.weights[support]
    return df


def posteriors_frame(post):
    df = pd.DataFrame({"firm_id": post.firm_ids})
    for j, n in enumerate(post.names):
        df[n] = post.mean[:, j]
    for j, n in enumerate(post.names):
        df[f"sd_{n}"] = post.sd[:, j]
    df["top_type"] = post.top_type
    return df


def read_posteriors(path):
    """Inverse of ``posteriors_frame`` written through ``write_csv``."""
    df = pd.read_csv(path, dtype={"firm_id": str}, float_precision="round_trip")
    names = tuple(c for c in df.columns if c not in ("firm_id", "top_type") and not c.startswith("sd_"))
    mean = df[list(names)].to_numpy(dtype=float)
    sd = df[[f"sd_{n}" for n in names]].to_numpy(dtype=float)
    top = df["top_type"].to_numpy(dtype=np.int64) if "top_type" in df else np.full(len(df), -1)
    return FirmPosteriors(df["firm_id"].tolist(), names, mean, sd, top)


def moments_frame(moments):
    rows = []
    for j, n in enumerate(moments.names):
        p10, p50, p90 = moments.quantiles[n]
        rows.append({"parameter": n, "mean": moments.mean[j], "sd": moments.sd[j],
                     "p10": p10, "p50": p50, "p90": p90})
    return pd.DataFrame(rows)


def corr_frame(moments):
    df = pd.DataFrame(moments.corr, columns=list(moments.names))
    df.insert(0, "parameter", list(moments.names))
    return df


# --- SVG ---------------------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
W, H = 640, 400
ML, MR, MT, MB = 60, 20, 40, 50


def _fmt(x):
    return f"{x:.4g}"


def svg_histogram(series, title="", xlabel="", weights=None, bins=HIST_BINS):
    """Histogram(s) on shared bin edges, as an SVG string.

    ``series`` maps a label to values; ``weights`` optionally maps the same
    labels to nonnegative weights. Bars show the share of mass per bin, so
    overlays of different sizes are comparable.
    """
    weights = weights or {}
    clean = {}
    for name, v in series.items():
        v = np.asarray(v, dtype=float)
        w = np.asarray(weights.get(name, np.ones_like(v)), dtype=float)
        keep = np.isfinite(v) & (w > 0)
        if keep.any():
            clean[name] = (v[keep], w[keep] / w[keep].sum())
    if not clean:
        raise ValueError("nothing to plot")
    lo = min(v.min() for v, _ in clean.values())
    hi = max(v.max() for v, _ in clean.values())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    hists = {n: np.histogram(v, bins=edges, weights=w)[0] for n, (v, w) in clean.items()}
    top = max(h.max() for h in hists.values()) or 1.0
    pw, ph = W - ML - MR, H - MT - MB

    def sx(x):
        return ML + (x - lo) / (hi - lo) * pw

    def sy(y):
        return MT + ph - y / top * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>']
    opacity = 0.85 if len(hists) == 1 else 0.45
    for c, (name, h) in enumerate(hists.items()):
        color = PALETTE[c % len(PALETTE)]
        for b in range(bins):
            if h[b] <= 0:
                continue
            x0, x1 = sx(edges[b]), sx(edges[b + 1])
            y = sy(h[b])
            out.append(f'<rect x="{x0:.2f}" y="{y:.2f}" width="{x1 - x0:.2f}" height="{MT + ph - y:.2f}" '
                       f'fill="{color}" fill-opacity="{opacity}"/>')
        out.append(f'<rect x="{W - MR - 150}" y="{MT + 6 + 18 * c}" width="12" height="12" fill="{color}" fill-opacity="{opacity}"/>')
        out.append(f'<text x="{W - MR - 132}" y="{MT + 16 + 18 * c}" font-family="sans-serif" font-size="12">{escape(str(name))}</text>')
    # axes
    out.append(f'<line x1="{ML}" y1="{MT + ph}" x2="{ML + pw}" y2="{MT + ph}" stroke="black"/>')
    out.append(f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{MT + ph}" stroke="black"/>')
    for x in np.linspace(lo, hi, 6):
        out.append(f'<text x="{sx(x):.2f}" y="{MT + ph + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{_fmt(x)}</text>')
    for y in np.linspace(0, top, 5):
        out.append(f'<text x="{ML - 6}" y="{sy(y) + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{_fmt(y)}</text>')
    out.append(f'<text x="{ML + pw / 2:.1f}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(text, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def posterior_histograms(post, outdir, names=None):
    """One SVG per column of firm posterior means."""
    written = []
    for n in names or post.names:
        path = outdir / f"hist_{_safe(n)}.svg"
        write_svg(svg_histogram({n: post.column(n)}, title=f"Firm posterior means: {n}", xlabel=n), path)
        written.append(path)
    return written


def ttp_overlay(ttp, path):
    """ln TTP, intercept and scale, each centered at its own mean."""
    series = {
        "ln TTP": ttp.ln_ttp - ttp.ln_ttp.mean(),
        "abar": ttp.ln_tfp - ttp.ln_tfp.mean(),
        "scale": ttp.scale - ttp.scale.mean(),
    }
    write_svg(svg_histogram(series, title="Productivity distributions (deviation from mean)",
                            xlabel="deviation from mean"), path)


def _safe(name):
    return name.replace("+", "_plus_").replace("/", "_")
