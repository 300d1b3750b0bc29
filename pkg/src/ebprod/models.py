"""Production-model families and their mean functions.

Three families share one interface so grids, likelihoods and analytics can
stay model-agnostic:

``cd``         dynamic Cobb-Douglas   (alpha0, beta, gamma, alpha1, alpha2, s)
``ces``        generalized CES        (alpha0, omega, nu, sigma, alpha1, alpha2, s)
``intensive``  per-worker CD          (a, b, s)

Parameter vectors are plain float arrays ordered as ``ModelSpec.param_names``;
the noise scale ``s`` is always last.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

EPS_SIGMA = 1e-3
S_MIN = 0.05


class Family(str, Enum):
    CD = "cd"
    CES = "ces"
    INTENSIVE = "intensive"


PARAM_NAMES = {
    Family.CD: ("alpha0", "beta", "gamma", "alpha1", "alpha2", "s"),
    Family.CES: ("alpha0", "omega", "nu", "sigma", "alpha1", "alpha2", "s"),
    Family.INTENSIVE: ("a", "b", "s"),
}


class InadmissibleParams(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    T: int

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.T < 1:
            raise ValueError("T must be positive")

    @property
    def param_names(self):
        return PARAM_NAMES[self.family]

    @property
    def n_params(self):
        return len(self.param_names)

    def index(self, name):
        return self.param_names.index(name)

    @property
    def has_dynamics(self):
        return self.family is not Family.INTENSIVE

    @property
    def scale_name(self):
        return {Family.CD: "beta+gamma", Family.CES: "nu", Family.INTENSIVE: "b"}[self.family]

    @property
    def intercept_name(self):
        return "abar" if self.has_dynamics else "a"


def model_from_name(name, T):
    try:
        family = Family(str(name).lower())
    except ValueError:
        raise ValueError(f"unknown model family {name!r}; expected cd, ces or intensive") from None
    return ModelSpec(family, T)


def check_admissible(model, params):
    """Raise ``InadmissibleParams`` unless ``params`` lie in the admissible set."""
    p = np.asarray(params, dtype=float)
    if p.shape[-1] != model.n_params:
        raise InadmissibleParams(f"expected {model.n_params} parameters, got {p.shape[-1]}")
    if not np.all(np.isfinite(p)):
        raise InadmissibleParams("parameters must be finite")
    names = model.param_names
    col = {n: p[..., i] for i, n in enumerate(names)}
    if np.any(col["s"] < S_MIN):
        raise InadmissibleParams(f"s must be >= {S_MIN}")
    nonneg = {Family.CD: ("beta", "gamma"), Family.CES: ("nu",), Family.INTENSIVE: ()}[model.family]
    for n in nonneg:
        if np.any(col[n] < 0):
            raise InadmissibleParams(f"{n} must be nonnegative")
    if model.family is Family.CES:
        if np.any((col["omega"] < 0) | (col["omega"] > 1)):
            raise InadmissibleParams("omega must lie in [0, 1]")
        sig = col["sigma"]
        if np.any(sig <= 0) or np.any(np.abs(sig - 1.0) < EPS_SIGMA):
            raise InadmissibleParams(f"sigma must be positive and at least {EPS_SIGMA} away from 1")
    return p


def ces_log_composite(k, l, omega, sigma):
    """``sigma/(sigma-1) * ln(omega K^rho + (1-omega) L^rho)`` with ``rho=(sigma-1)/sigma``.

    Evaluated with the max-shift identity so large |k|, |l| do not overflow.
    """
    rho = (sigma - 1.0) / sigma
    with np.errstate(divide="ignore"):
        a = np.log(omega) + rho * k
        b = np.log1p(-omega) + rho * l
    return np.logaddexp(a, b) / rho


def mean_output(model, params, k, l, t):
    """Mean log output ``h(X; psi)`` for one parameter vector.

    ``k``, ``l`` and ``t`` broadcast against each other. For the intensive
    family ``k`` is log capital per worker and ``l`` is ignored.
    """
    p = check_admissible(model, params)
    k = np.asarray(k, dtype=float)
    l = np.asarray(l, dtype=float)
    t = np.asarray(t, dtype=float)
    fam = model.family
    if fam is Family.INTENSIVE:
        a, b, _ = p
        return a + b * k
    if fam is Family.CD:
        a0, beta, gamma, a1, a2, _ = p
        return a0 + a1 * t + a2 * t * t + beta * k + gamma * l
    a0, omega, nu, sigma, a1, a2, _ = p
    comp = ces_log_composite(k, l, omega, sigma)
    if not np.all(np.isfinite(comp)):
        raise InadmissibleParams("CES inner sum is not positive")
    return a0 + a1 * t + a2 * t * t + nu * comp


def _time_weights(T):
    t = np.arange(1, T + 1, dtype=float)
    return t.mean(), (t * t).mean()


def time_avg_intercept(model, params):
    """Mean over t = 1..T of ``alpha0 + alpha1 t + alpha2 t^2``.

    Vectorized over leading axes of ``params``.
    """
    if not model.has_dynamics:
        raise ValueError("the intensive family has no intercept dynamics")
    p = np.asarray(params, dtype=float)
    names = model.param_names
    m1, m2 = _time_weights(model.T)
    a0 = p[..., names.index("alpha0")]
    a1 = p[..., names.index("alpha1")]
    a2 = p[..., names.index("alpha2")]
    return a0 + a1 * m1 + a2 * m2


def returns_to_scale(model, params):
    """Scale elasticity: beta+gamma (CD), nu (CES), b (intensive)."""
    p = np.asarray(params, dtype=float)
    names = model.param_names
    if model.family is Family.CD:
        return p[..., names.index("beta")] + p[..., names.index("gamma")]
    if model.family is Family.CES:
        return p[..., names.index("nu")]
    return p[..., names.index("b")]


def intercept(model, params):
    """Factor-neutral productivity: time-averaged intercept, or ``a``."""
    if model.has_dynamics:
        return time_avg_intercept(model, params)
    return np.asarray(params, dtype=float)[..., 0]


def derived_columns(model, params):
    """Named derived quantities used throughout the reports."""
    return {
        model.intercept_name: intercept(model, params),
        model.scale_name: returns_to_scale(model, params),
    }
