"""Per-parameter discretization grids and the lexicographic type table.

A *type* is one point of the Cartesian product of the per-parameter grids.
Types are numbered in mixed radix with the last parameter (the noise scale
``s``) varying fastest, so type 0 is all minima and type Q-1 all maxima.
Nothing of size Q is ever materialized here; parameter values are decoded
on demand.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import DataError, GridError
from .models import EPS_SIGMA, S_MIN, Family, InadmissibleParams, check_admissible

DEFAULT_POINTS = {
    Family.CD: {"alpha0": 15, "beta": 15, "gamma": 15, "alpha1": 6, "alpha2": 6, "s": 6},
    Family.CES: {"alpha0": 9, "omega": 9, "nu": 9, "sigma": 9, "alpha1": 6, "alpha2": 6, "s": 6},
    Family.INTENSIVE: {"a": 40, "b": 40, "s": 6},
}

FIXED_RANGES = {
    "beta": (0.0, 1.5),
    "gamma": (0.0, 1.5),
    "b": (0.0, 1.5),
    "alpha1": (-0.1, 0.1),
    "alpha2": (-0.01, 0.01),
    "s": (S_MIN, 1.5),
    "omega": (0.05, 0.95),
    "nu": (0.0, 2.0),
    "sigma": (0.2, 6.0),
}

FALLBACK_INTERCEPT = (-5.0, 10.0)


@dataclass(frozen=True)
class Axis:
    name: str
    min: float
    max: float
    points: int

    def values(self):
        if self.points == 1:
            return np.array([self.min], dtype=float)
        return np.linspace(self.min, self.max, self.points)

    @property
    def spacing(self):
        return 0.0 if self.points == 1 else (self.max - self.min) / (self.points - 1)


class GridSpec:
    """Ordered per-parameter (min, max, points) triples for one model."""

    def __init__(self, model, axes):
        self.model = model
        by_name = {a.name: a for a in axes}
        if set(by_name) != set(model.param_names):
            raise GridError(f"grid axes {sorted(by_name)} do not match parameters {model.param_names}")
        self.axes = tuple(by_name[n] for n in model.param_names)
        self._validate()

    def _validate(self):
        for ax in self.axes:
            if not (math.isfinite(ax.min) and math.isfinite(ax.max)):
                raise GridError(f"{ax.name}: bounds must be finite")
            if ax.points < 1 or int(ax.points) != ax.points:
                raise GridError(f"{ax.name}: points must be a positive integer")
            if ax.min > ax.max:
                raise GridError(f"{ax.name}: min > max")
            if ax.points == 1 and ax.min != ax.max:
                raise GridError(f"{ax.name}: a single point requires min == max")
        lo = np.array([a.min for a in self.axes])
        hi = np.array([a.max for a in self.axes])
        try:
            check_admissible(self.model, lo)
            check_admissible(self.model, hi)
        except InadmissibleParams as exc:
            raise GridError(f"grid bounds are inadmissible: {exc}") from None
        if self.model.family is Family.CES:
            sig = self.axes[self.model.index("sigma")].values()
            if np.any(np.abs(sig - 1.0) < EPS_SIGMA):
                raise GridError("a sigma grid point falls inside the excluded band around 1")

    @property
    def Q(self):
        return math.prod(a.points for a in self.axes)

    def with_overrides(self, overrides):
        """Replace axes from a mapping ``name -> {min, max, points}``."""
        axes = []
        for ax in self.axes:
            o = (overrides or {}).get(ax.name, {})
            points = int(o.get("points", ax.points))
            lo = float(o.get("min", ax.min))
            hi = float(o.get("max", ax.max if points > 1 or "min" not in o else lo))
            axes.append(Axis(ax.name, lo, hi, points))
        unknown = set(overrides or {}) - set(self.model.param_names)
        if unknown:
            raise GridError(f"unknown grid parameters: {sorted(unknown)}")
        return GridSpec(self.model, axes)

    def to_dict(self):
        return {a.name: {"min": a.min, "max": a.max, "points": a.points} for a in self.axes}

    def describe(self):
        lines = [f"model: {self.model.family.value}  T={self.model.T}  Q={self.Q:,}"]
        for a in self.axes:
            lines.append(f"  {a.name:<7} [{a.min:.6g}, {a.max:.6g}]  points={a.points}  spacing={a.spacing:.6g}")
        return "\n".join(lines)


def grid_from_dict(model, spec):
    return GridSpec(model, [Axis(n, float(spec[n]["min"]), float(spec[n]["max"]), int(spec[n]["points"]))
                            for n in model.param_names])


def pooled_intercepts(model, data):
    """Per-firm intercepts implied by a pooled OLS slope fit."""
    y = data.y
    if model.family is Family.INTENSIVE:
        X = [data.k]
    else:
        t = np.broadcast_to(data.periods.astype(float), y.shape)
        X = [data.k, data.l, t, t * t]
    Z = np.column_stack([np.ones(y.size)] + [x.ravel() for x in X])
    coef, *_ = np.linalg.lstsq(Z, y.ravel(), rcond=None)
    fitted_slopes = Z[:, 1:] @ coef[1:]
    return (y.ravel() - fitted_slopes).reshape(y.shape).mean(axis=1)


def default_grid(model, data, points=None):
    """Data-adaptive default grid; every range can be overridden later."""
    if data.n_firms < 1:
        raise DataError("empty panel")
    if np.var(data.y) == 0:
        raise DataError("zero variance in y; cannot size the intercept grid")
    counts = dict(DEFAULT_POINTS[model.family])
    counts.update(points or {})
    intercept_name = model.param_names[0]
    try:
        icpt = pooled_intercepts(model, data)
        lo, hi = np.quantile(icpt, [0.01, 0.99])
        icpt_range = (float(lo) - 2.0, float(hi) + 2.0)
        if not all(map(math.isfinite, icpt_range)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        icpt_range = FALLBACK_INTERCEPT
    axes = []
    for name in model.param_names:
        lo, hi = icpt_range if name == intercept_name else FIXED_RANGES[name]
        n = int(counts[name])
        if n == 1:
            mid = 0.0 if name in ("alpha1", "alpha2") else 0.5 * (lo + hi)
            lo = hi = mid
        axes.append(Axis(name, lo, hi, n))
    return GridSpec(model, axes)


class TypeTable:
    """Mixed-radix view of all Q grid configurations."""

    def __init__(self, grid):
        self.grid = grid
        self.model = grid.model
        self.values = [a.values() for a in grid.axes]
        self.radix = np.array([a.points for a in grid.axes], dtype=np.int64)
        self.Q = int(np.prod(self.radix))
        # stride of each digit; last digit has stride 1
        self.strides = np.ones(len(self.radix), dtype=np.int64)
        for j in range(len(self.radix) - 2, -1, -1):
            self.strides[j] = self.strides[j + 1] * self.radix[j + 1]
        width = int(self.radix.max())
        self.padded = np.zeros((len(self.radix), width), dtype=np.float64)
        for j, v in enumerate(self.values):
            self.padded[j, : len(v)] = v

    @property
    def n_params(self):
        return len(self.radix)

    def decode(self, q):
        """Index tuple(s) for type index(es) ``q``; shape ``(..., J)``."""
        q = np.asarray(q, dtype=np.int64)
        if np.any(q < 0) or np.any(q >= self.Q):
            raise IndexError(f"type index out of range [0, {self.Q})")
        return (q[..., None] // self.strides) % self.radix

    def encode(self, digits):
        d = np.asarray(digits, dtype=np.int64)
        if np.any(d < 0) or np.any(d >= self.radix):
            raise IndexError("digit out of range")
        return (d * self.strides).sum(axis=-1)

    def params(self, q):
        """Parameter matrix ``(n, J)`` for an array of type indices."""
        digits = np.atleast_2d(self.decode(np.atleast_1d(q)))
        return np.stack([self.values[j][digits[:, j]] for j in range(self.n_params)], axis=1)

    def column(self, name, q):
        j = self.model.index(name)
        return self.values[j][self.decode(np.atleast_1d(q))[:, j]]


def enumerate_type(table, q):
    """Parameter vector of type ``q`` (last dimension fastest)."""
    if not (0 <= int(q) < table.Q):
        raise IndexError(f"type index {q} out of range [0, {table.Q})")
    return table.params([int(q)])[0]
