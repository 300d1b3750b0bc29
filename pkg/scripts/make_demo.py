"""Regenerate the bundled demo panel (20 firms, 7 periods, synthetic)."""

from pathlib import Path

import numpy as np

from ebprod.panel import from_arrays, save_panel
from ebprod.simulate import _rng, calibrated_dgp, generate_replication

OUT = Path(__file__).resolve().parents[1] / "src" / "ebprod" / "data" / "demo_panel.csv"


def main():
    spec = calibrated_dgp(I=20, T=7, B=1, seed=2024)
    data, truth = generate_replication(spec, 0)
    rng = _rng(2024, 0, 99)
    sector = np.array(["10", "20", "24", "29"])[np.arange(data.n_firms) % 4]
    markup = np.exp(np.log(1.4) + 0.2 * rng.standard_normal(data.y.shape))
    share = np.clip(np.maximum(truth.gamma, 0.05)[:, None] / markup, 0.05, 0.95)
    demo = from_arrays(np.round(data.y, 6), np.round(data.k, 6), np.round(data.l, 6),
                       firm_ids=[f"F{i + 1:03d}" for i in range(data.n_firms)],
                       sector=sector, wage_share=np.round(share, 6))
    save_panel(demo, OUT)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
