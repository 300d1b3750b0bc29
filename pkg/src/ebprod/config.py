"""Run configuration: a TOML file whose keys mirror the command-line flags.

    [input]
    path = "panel.csv"          # relative paths resolve against this file
    log_transform = false
    years = [2013, 2019]
    columns = { firm_id = "id", year = "year" }

    [model]
    family = "cd"

    [grid.alpha0]                 # any subset of min / max / points
    points = 9

    [solver]
    tol = 1e-9
    max_iter = 20000
    restarts = 0

    [analytics]
    ttp = true
    ttp_reference = "median_by_sector"   # or "pooled_median" or [K0, L0]

    [run]
    output = "out"
    threads = 1
    memory_budget_mb = 256
    seed = 0

    [simulation]
    I = 500
    B = 20
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
import sys

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class RunConfig:
    input: Path | None = None
    columns: dict = field(default_factory=dict)
    log_transform: bool = False
    years: tuple | None = None
    trim: tuple | None = None
    family: str = "cd"
    grid: dict = field(default_factory=dict)
    tol: float = 1e-9
    max_iter: int = 20_000
    loglik_tol: float = 1e-10
    threshold: float | None = None
    restarts: int = 0
    accelerate: bool = True
    log_every: int = 0
    ttp: bool = True
    ttp_reference: object = "median_by_sector"
    markups: bool = True
    anova: bool = True
    anova_size_mode: str = "additive"
    dominance: bool = True
    output: Path = Path("ebprod_out")
    threads: int = 1
    memory_budget_mb: float = 256.0
    seed: int = 0
    simulation: dict = field(default_factory=dict)

    @property
    def memory_budget(self):
        return int(self.memory_budget_mb * 2**20)

    def validate(self, need_input=True):
        if need_input:
            if self.input is None:
                raise ConfigError("no input path given")
            if not Path(self.input).is_file():
                raise ConfigError(f"input file {self.input} does not exist")
        if int(self.threads) < 1:
            raise ConfigError("threads must be >= 1")
        if self.memory_budget < 8 * 1024:
            raise ConfigError("memory budget is below one minimal block")
        if not self.tol > 0 or int(self.max_iter) < 1:
            raise ConfigError("tol must be positive and max_iter >= 1")
        if self.family not in ("cd", "ces", "intensive"):
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.anova_size_mode not in ("additive", "joint"):
            raise ConfigError("anova_size_mode is 'additive' or 'joint'")
        return self


# section -> {toml key: RunConfig attribute}
_SECTIONS = {
    "input": {"path": "input", "columns": "columns", "log_transform": "log_transform", "years": "years",
              "trim": "trim"},
    "model": {"family": "family"},
    "solver": {"tol": "tol", "max_iter": "max_iter", "loglik_tol": "loglik_tol", "threshold": "threshold",
               "restarts": "restarts", "accelerate": "accelerate", "log_every": "log_every"},
    "analytics": {"ttp": "ttp", "ttp_reference": "ttp_reference", "markups": "markups", "anova": "anova",
                  "anova_size_mode": "anova_size_mode", "dominance": "dominance"},
    "run": {"output": "output", "threads": "threads", "memory_budget_mb": "memory_budget_mb", "seed": "seed"},
}


def load_config(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(raw, base=path.parent)


def config_from_dict(raw, base=None):
    known = set(_SECTIONS) | {"grid", "simulation"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kw = {}
    for section, keys in _SECTIONS.items():
        sec = raw.get(section, {})
        bad = set(sec) - set(keys)
        if bad:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
        for k, attr in keys.items():
            if k in sec:
                kw[attr] = sec[k]
    kw["grid"] = dict(raw.get("grid", {}))
    kw["simulation"] = dict(raw.get("simulation", {}))
    for attr in ("input", "output"):
        if attr in kw and kw[attr] is not None:
            p = Path(kw[attr])
            kw[attr] = p if p.is_absolute() or base is None else Path(base) / p
    for attr in ("years", "trim"):
        if kw.get(attr) is not None:
            kw[attr] = tuple(kw[attr])
    return RunConfig(**kw)


def apply_overrides(cfg, **flags):
    """Set every flag that is not None; flags win over the file."""
    names = {f.name for f in fields(cfg)}
    for k, v in flags.items():
        if v is None:
            continue
        if k not in names:
            raise ConfigError(f"unknown setting {k!r}")
        setattr(cfg, k, v)
    return cfg
