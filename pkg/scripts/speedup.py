"""Time plate solves against surrogate sampling for a trained model.

    python3 scripts/speedup.py configs/acceptance_A.toml --component xx --n 3000

Needs the model file written by ``platecvae train`` for that config.
"""
import argparse
import time

from platecvae import pipeline
from platecvae.config import load_config
from platecvae.trainer import load_checkpoint

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--component", default="xx")
    ap.add_argument("--n", type=int, default=3000)
    a = ap.parse_args()

    cfg = load_config(a.config)
    ck = load_checkpoint(cfg.output_root() / f"model_{a.component}.cvck")
    cfg.data.n_realizations = a.n
    t0 = time.perf_counter()
    ds = pipeline.generate(cfg)
    t_solve = time.perf_counter() - t0
    mid = ds.conditions.mean(axis=0)
    t0 = time.perf_counter()
    pipeline.sample_fields(ck, [mid], a.n, seed=0)
    t_sample = time.perf_counter() - t0
    print(f"plate solves : {t_solve:8.2f} s ({1e3 * t_solve / a.n:.2f} ms each)")
    print(f"CVAE samples : {t_sample:8.2f} s ({1e3 * t_sample / a.n:.2f} ms each)")
    print(f"speedup      : {t_solve / t_sample:8.1f}x")
    print(f"time saved   : {100 * (1 - t_sample / t_solve):8.1f} %")
