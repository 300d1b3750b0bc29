import numpy as np
import pytest

from ebprod import _accel
from ebprod.panel import from_arrays


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not _accel.HAS_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


def cd_panel(I=30, T=7, seed=0, noise=0.2, sector=False, wage=False):
    """Small synthetic CD panel with firm-specific elasticities."""
    rng = np.random.default_rng(seed)
    k = rng.normal(8, 1, (I, 1)) + rng.normal(0, 0.3, (I, T))
    l = rng.normal(4, 1, (I, 1)) + rng.normal(0, 0.3, (I, T))
    a = rng.normal(3, 0.5, (I, 1))
    b = np.clip(rng.normal(0.3, 0.1, (I, 1)), 0, None)
    c = np.clip(rng.normal(0.4, 0.1, (I, 1)), 0, None)
    y = a + b * k + c * l + rng.normal(0, noise, (I, T))
    kw = {}
    if sector:
        kw["sector"] = np.array([f"s{i % 3}" for i in range(I)])
    if wage:
        kw["wage_share"] = rng.uniform(0.2, 0.6, (I, T))
    return from_arrays(y, k, l, **kw)


@pytest.fixture
def small_cd():
    return cd_panel()
