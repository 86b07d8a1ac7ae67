"""Command line: ``python -m platecvae {generate,train,sample,evaluate,report}``.

Artifacts live under the run's output root::

    <out>/dataset.cvsd
    <out>/model_<component>.cvck, <out>/loss_<component>.csv
    <out>/samples_<component>.cvsd
    <out>/eval_<component>/{fields,errors,error_kde,probes}.csv, summary.txt
    <out>/report.txt

A command exits with status 0 only after its outputs were reloaded and checked.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as dsmod
from . import pipeline
from .config import ConfigError, RunConfig, load_config, preset
from .evaluator import summarize, write_report
from .fieldgen import COMPONENTS
from .trainer import load_checkpoint, save_checkpoint, write_history_csv

log = logging.getLogger("platecvae")


class OutputCheckError(RuntimeError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else preset(args.kind)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _paths(cfg: RunConfig, component: str | None = None) -> dict:
    root = cfg.output_root()
    p = {"root": root, "dataset": root / "dataset.cvsd", "report": root / "report.txt"}
    if component:
        p.update(model=root / f"model_{component}.cvck", loss=root / f"loss_{component}.csv",
                 samples=root / f"samples_{component}.cvsd", eval=root / f"eval_{component}")
    return p


def _components(arg) -> list[str]:
    if arg in (None, "all"):
        return list(COMPONENTS)
    if arg not in COMPONENTS:
        raise ConfigError(f"--component must be one of {COMPONENTS} or 'all'")
    return [arg]


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found at {path}; run the producing command first")
    return path


def cmd_generate(args) -> None:
    cfg = _config(args)
    paths = _paths(cfg)
    paths["root"].mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ds = pipeline.generate(cfg)
    elapsed = time.perf_counter() - t0
    dsmod.save(ds, paths["dataset"])
    if not dsmod.load(paths["dataset"]).equals(ds):
        raise OutputCheckError("dataset reload does not match what was written")
    (paths["root"] / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    log.info("wrote %s (%d records, %.2f s, %.2f ms per solve)", paths["dataset"], len(ds),
             elapsed, 1e3 * elapsed / len(ds))


def cmd_train(args) -> None:
    cfg = _config(args)
    ds = dsmod.load(_require(_paths(cfg)["dataset"], "dataset"))
    for comp in _components(args.component):
        paths = _paths(cfg, comp)
        resume = None
        if args.resume:
            resume = load_checkpoint(_require(paths["model"], "checkpoint to resume"))
        ck = pipeline.train_component(cfg, ds, comp, resume=resume, checkpoint_path=paths["model"])
        save_checkpoint(ck, paths["model"])
        write_history_csv(ck.history, paths["loss"])
        back = load_checkpoint(paths["model"])
        if not all(np.array_equal(a, b) for a, b in zip(back.model.params(), ck.model.params())):
            raise OutputCheckError(f"checkpoint reload mismatch for {comp}")
        n_rows = len(paths["loss"].read_text().splitlines()) - 1
        if n_rows != cfg.train.epochs:
            raise OutputCheckError(f"loss history has {n_rows} rows, expected {cfg.train.epochs}")
        log.info("wrote %s and %s", paths["model"], paths["loss"])


def _parse_conditions(text: str, k: int) -> np.ndarray:
    rows = [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != k:
        raise ConfigError(f"--t needs {k} comma-separated values per ';'-separated row")
    return arr


def cmd_sample(args) -> None:
    cfg = _config(args)
    for comp in _components(args.component):
        paths = _paths(cfg, comp)
        ck = load_checkpoint(_require(paths["model"], "checkpoint"))
        cond = _parse_conditions(args.t, ck.model.config.condition_dim)
        seed = cfg.seed
        t0 = time.perf_counter()
        out = pipeline.sample_fields(ck, cond, args.n, seed)
        elapsed = time.perf_counter() - t0
        dsmod.save(out, paths["samples"])
        if not dsmod.load(paths["samples"]).equals(out):
            raise OutputCheckError("sample file reload mismatch")
        log.info("sampled %d fields in %.3f s (%.3f ms per field) -> %s", len(out), elapsed,
                 1e3 * elapsed / len(out), paths["samples"])


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    ds = dsmod.load(_require(_paths(cfg)["dataset"], "dataset"))
    n_mc = args.n_mc if args.n_mc is not None else cfg.evaluate.n_mc
    for comp in _components(args.component):
        paths = _paths(cfg, comp)
        ck = load_checkpoint(_require(paths["model"], "checkpoint"))
        report = pipeline.evaluate_component(cfg, ck, ds, n_mc, cfg.seed)
        write_report(report, paths["eval"], f"component {comp}")
        for name in ("fields.csv", "errors.csv", "error_kde.csv", "probes.csv", "summary.txt"):
            _require(paths["eval"] / name, "report table")
        n_rows = len((paths["eval"] / "errors.csv").read_text().splitlines()) - 1
        if n_rows != n_mc:
            raise OutputCheckError(f"errors.csv has {n_rows} rows, expected {n_mc}")
        s = summarize(report.errors)
        log.info("%s: median e_mu=%.4f  median e_sigma=%.4f", comp, s["e_mu"]["median"],
                 s["e_sigma"]["median"])


def cmd_report(args) -> None:
    """Collect every component's summary into one text file."""
    cfg = _config(args)
    paths = _paths(cfg)
    lines = [f"run kind: {cfg.kind}", f"seed: {cfg.seed}", ""]
    found = 0
    for comp in COMPONENTS:
        summary = _paths(cfg, comp)["eval"] / "summary.txt"
        if summary.exists():
            found += 1
            lines += [f"== {comp} ==", summary.read_text().rstrip(), ""]
    if not found:
        raise FileNotFoundError(f"no evaluation summaries under {paths['root']}")
    paths["report"].write_text("\n".join(lines) + "\n")
    print(paths["report"].read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="platecvae", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--kind", default="plate_A", choices=["plate_A", "multi_region_B"],
                        help="preset used when no --config is given")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--component", default="all", help="xx, yy, xy or all")
    common.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("generate", parents=[common], help="Monte-Carlo plate solves -> dataset")
    t = sub.add_parser("train", parents=[common], help="train one model per strain component")
    t.add_argument("--resume", action="store_true", help="continue from the saved checkpoint")
    s = sub.add_parser("sample", parents=[common], help="draw fields from a trained model")
    s.add_argument("--t", required=True, help="conditions in mm, e.g. '8.5' or '1,0.5,0,2;0,0,0,0'")
    s.add_argument("--n", type=int, default=3000, help="fields per condition")
    e = sub.add_parser("evaluate", parents=[common], help="statistical comparison on the test split")
    e.add_argument("--n-mc", type=int, help="latent Monte-Carlo repetitions")
    sub.add_parser("report", parents=[common], help="collect evaluation summaries")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "sample": cmd_sample,
            "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, OutputCheckError, pipeline.SplitMismatchError,
            ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
