"""Firm x type log densities, computed in blocks.

The full ``I x Q`` matrix of log f_iq can be far larger than memory at
realistic grid sizes, so everything downstream consumes it through a
*density source*: an object that can produce log f for any firm range and
any list of type indices. ``GridDensity`` evaluates it from the data and the
type table; ``ArrayDensity`` wraps an explicit matrix (tests, small
problems); ``CachedDensity`` reads the binary cache written by
``write_cache``.
"""

from dataclasses import dataclass
import hashlib
import json
import math
import struct

import numpy as np

from . import _kernels
from .errors import ConfigError
from .models import Family, ces_log_composite, check_admissible, mean_output

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_BUDGET = 256 * 2**20


@dataclass(frozen=True)
class LogDensityBlock:
    firm_range: tuple
    type_range: tuple
    values: np.ndarray

    def __post_init__(self):
        shape = (self.firm_range[1] - self.firm_range[0], self.type_range[1] - self.type_range[0])
        if self.values.shape != shape:
            raise ValueError(f"block values have shape {self.values.shape}, expected {shape}")


def log_density_firm_type(model, data, firm, params):
    """Exact log of the Gaussian panel density of one firm under one type.

    Straight from the definition, one period at a time; used as the scalar
    reference for the blocked kernels.
    """
    p = check_admissible(model, params)
    s = p[-1]
    h = mean_output(model, p, data.k[firm], data.l[firm], data.periods)
    r = (data.y[firm] - h) / s
    return float(np.sum(-math.log(s) - 0.5 * LOG_2PI - 0.5 * r * r))


class DensitySource:
    """Interface: ``n_firms``, ``n_types`` and ``columns(qs, firms)``."""

    n_firms: int
    n_types: int

    def columns(self, qs, firms=None):
        raise NotImplementedError

    def block(self, firm_range, type_range):
        f0, f1 = firm_range
        t0, t1 = type_range
        vals = self.columns(np.arange(t0, t1, dtype=np.int64), slice(f0, f1))
        return LogDensityBlock((f0, f1), (t0, t1), vals)

    def dense(self):
        return self.columns(np.arange(self.n_types, dtype=np.int64))


class ArrayDensity(DensitySource):
    def __init__(self, logf):
        self.logf = np.ascontiguousarray(logf, dtype=np.float64)
        self.n_firms, self.n_types = self.logf.shape

    def columns(self, qs, firms=None):
        rows = self.logf if firms is None else self.logf[firms]
        return np.ascontiguousarray(rows[:, np.asarray(qs, dtype=np.int64)])


class GridDensity(DensitySource):
    """log f evaluated on demand from a panel and a type table."""

    def __init__(self, model, data, table):
        self.model = model
        self.data = data
        self.table = table
        self.n_firms = data.n_firms
        self.n_types = table.Q
        y = np.ascontiguousarray(data.y)
        t = data.periods.astype(np.float64)
        fam = model.family
        self._y = y
        if fam is Family.CD:
            ones = np.ones_like(y)
            tb = np.broadcast_to(t, y.shape)
            # regressor order follows (alpha0, beta, gamma, alpha1, alpha2)
            self._Z = np.ascontiguousarray(np.stack([ones, data.k, data.l, tb, tb * tb], axis=1))
        elif fam is Family.INTENSIVE:
            self._Z = np.ascontiguousarray(np.stack([np.ones_like(y), data.k], axis=1))
        else:
            omegas = table.values[model.index("omega")]
            sigmas = table.values[model.index("sigma")]
            comp = ces_log_composite(
                data.k[:, None, None, :],
                data.l[:, None, None, :],
                omegas[None, :, None, None],
                sigmas[None, None, :, None],
            )
            self._comp = np.ascontiguousarray(comp)
            self._tt = np.ascontiguousarray(np.stack([t, t * t]))

    def columns(self, qs, firms=None):
        qs = np.ascontiguousarray(qs, dtype=np.int64)
        if qs.size and (qs.min() < 0 or qs.max() >= self.n_types):
            raise IndexError("type index out of range")
        sl = slice(None) if firms is None else firms
        y = self._y[sl]
        out = np.empty((y.shape[0], qs.size), dtype=np.float64)
        if qs.size == 0 or y.shape[0] == 0:
            return out
        tab = self.table
        if self.model.family is Family.CES:
            return _kernels.ces_logf(y, self._comp[sl], self._tt, tab.padded, tab.radix, qs, out)
        return _kernels.linear_logf(y, self._Z[sl], tab.padded, tab.radix, qs, out)


def data_fingerprint(data):
    h = hashlib.sha256()
    for arr in (data.y, data.k, data.l):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def block_shape_for_budget(n_firms, n_types, budget_bytes, firms=None):
    """Largest (firms, types) block that fits ``budget_bytes`` of float64."""
    firms = min(n_firms, firms or n_firms)
    cells = max(1, budget_bytes // 8)
    types = max(1, min(n_types, cells // max(firms, 1)))
    return firms, types


def compute_blocks(source, block_shape, memory_budget=DEFAULT_BUDGET):
    """Yield blocks tiling the full firm x type matrix exactly once.

    Blocks come out row-major over the block grid, but callers should not
    rely on arrival order.
    """
    bf, bt = (int(x) for x in block_shape)
    if bf < 1 or bt < 1:
        raise ConfigError("block shape must be positive")
    if bf * bt * 8 > memory_budget:
        raise ConfigError(f"block of {bf}x{bt} float64 exceeds the memory budget of {memory_budget} bytes")
    for f0 in range(0, source.n_firms, bf):
        f1 = min(f0 + bf, source.n_firms)
        for t0 in range(0, source.n_types, bt):
            yield source.block((f0, f1), (t0, min(t0 + bt, source.n_types)))


def assemble(blocks, n_firms, n_types):
    out = np.full((n_firms, n_types), np.nan)
    for b in blocks:
        out[b.firm_range[0]:b.firm_range[1], b.type_range[0]:b.type_range[1]] = b.values
    return out


# --- binary cache ------------------------------------------------------------
#
# Layout (little-endian): 8-byte magic, u32 header length, UTF-8 JSON header
# with I, Q, T, model and grid hashes, then I*Q float64 values, row-major.

MAGIC = b"EBLOGF01"


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def cache_header(model, table, data):
    return {
        "I": int(data.n_firms),
        "Q": int(table.Q),
        "T": int(data.n_periods),
        "model_hash": _hash({"family": model.family.value, "T": model.T}),
        "grid_hash": _hash(table.grid.to_dict()),
        "data_hash": data_fingerprint(data),
    }


def write_cache(source, path, header, block_shape=None, memory_budget=DEFAULT_BUDGET):
    if block_shape is None:
        block_shape = block_shape_for_budget(source.n_firms, source.n_types, memory_budget // 2)
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        offset = fh.tell()
        fh.truncate(offset + 8 * source.n_firms * source.n_types)
    mm = np.memmap(path, dtype="<f8", mode="r+", offset=offset, shape=(source.n_firms, source.n_types))
    for b in compute_blocks(source, block_shape, memory_budget):
        mm[b.firm_range[0]:b.firm_range[1], b.type_range[0]:b.type_range[1]] = b.values
    mm.flush()
    del mm


def read_cache_header(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path} is not a log-density cache")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode())
        return header, fh.tell()


class CachedDensity(DensitySource):
    """Memory-mapped view of a cache file; rows are paged in lazily."""

    def __init__(self, path, expect=None):
        self.header, offset = read_cache_header(path)
        if expect is not None:
            stale = {k for k in expect if self.header.get(k) != expect[k]}
            if stale:
                raise ValueError(f"cache {path} does not match this run ({sorted(stale)})")
        self.n_firms = int(self.header["I"])
        self.n_types = int(self.header["Q"])
        self._mm = np.memmap(path, dtype="<f8", mode="r", offset=offset, shape=(self.n_firms, self.n_types))

    def columns(self, qs, firms=None):
        rows = self._mm if firms is None else self._mm[firms]
        return np.ascontiguousarray(rows[:, np.asarray(qs, dtype=np.int64)], dtype=np.float64)
