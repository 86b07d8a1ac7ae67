"""Run generate -> train -> evaluate -> report for one configuration.

    python3 scripts/run_experiment.py configs/acceptance_A.toml
    python3 scripts/run_experiment.py configs/plate_A.toml --component xx

Everything lands in the config's ``out_dir`` (or under $PLATECVAE_OUT).
"""
import argparse
import sys
import time

from platecvae.cli import main


def run(config: str, component: str, extra: list[str]) -> int:
    base = ["--config", config, *extra]
    steps = [["generate", *base], ["train", *base, "--component", component],
             ["evaluate", *base, "--component", component], ["report", *base]]
    for step in steps:
        t0 = time.perf_counter()
        code = main(step)
        print(f"{step[0]:<9} exit={code} {time.perf_counter() - t0:8.1f} s", flush=True)
        if code:
            return code
    return 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--component", default="all")
    ap.add_argument("--seed")
    ap.add_argument("--out")
    a = ap.parse_args()
    extra = (["--seed", a.seed] if a.seed else []) + (["--out", a.out] if a.out else [])
    sys.exit(run(a.config, a.component, extra))
