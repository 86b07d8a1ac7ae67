"""Share of realizations whose peak |normalized strain| stays below 1 (elastic range).

    python3 scripts/elastic_check.py configs/plate_A.toml --n 500
"""
import argparse

import numpy as np

from platecvae import pipeline
from platecvae.config import load_config

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--n", type=int, default=500)
    a = ap.parse_args()
    cfg = load_config(a.config)
    cfg.data.n_realizations = a.n
    ds = pipeline.generate(cfg)
    peak = np.abs(ds.fields).reshape(len(ds), -1).max(axis=1)
    print(f"elastic share {np.mean(peak < 1):.4f}; peak median {np.median(peak):.4f}, "
          f"p99 {np.percentile(peak, 99):.4f}, max {peak.max():.4f}")
    for c, name in enumerate(("xx", "yy", "xy")):
        f = ds.fields[:, c]
        print(f"  eps_{name}: [{f.min():.4f}, {f.max():.4f}]")
