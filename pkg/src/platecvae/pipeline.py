"""End-to-end stages shared by the command line and the experiment scripts."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import dataset as dsmod
from .config import RunConfig
from .cvae import Cvae, sample_conditional
from .dataset import Dataset
from .evaluator import EvalReport, evaluate
from .fieldgen import COMPONENTS, FillLoad, GaussianLoad, PlateSolveError, fill_pressure, \
    gaussian_pressure, simulate
from .sampling import DistributionSpec, sample_lhs
from .trainer import Checkpoint, TrainConfig, train

log = logging.getLogger(__name__)


class SplitMismatchError(RuntimeError):
    pass


# --- generation --------------------------------------------------------------

def draw_inputs(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """LHS realizations split into ``(conditions_mm, source_rvs)``.

    The design columns are the load variables first, then one condition per
    region.
    """
    load_d = cfg.load.distributions()
    cond_d = [DistributionSpec("uniform", cfg.conditions.low_mm, cfg.conditions.high_mm)] \
        * cfg.condition_dim
    x = sample_lhs(load_d + cond_d, cfg.data.n_realizations, cfg.seed)
    return x[:, len(load_d):], x[:, :len(load_d)]


def region_thickness(cfg: RunConfig, condition_mm: np.ndarray) -> np.ndarray:
    if cfg.conditions.mode == "thickness":
        return np.asarray(condition_mm, dtype=float)
    base = np.array([r.base_thickness_mm for r in cfg.plate.spec().regions])
    return base - np.asarray(condition_mm, dtype=float)


def load_field(cfg: RunConfig, rvs: np.ndarray, spec=None) -> np.ndarray:
    """Nodal pressure (Pa) for one realization of the source variables."""
    spec = spec or cfg.plate.spec()
    x, y = spec.node_coordinates()
    if cfg.load.kind == "gaussian":
        q0, x0, y0 = rvs
        return gaussian_pressure(GaussianLoad(q0, x0, y0, cfg.load.shape_m), x, y)
    # piecewise-uniform patches, equal length along y
    n = cfg.load.n_patches
    idx = np.minimum(((y + spec.length_y / 2) / (spec.length_y / n)).astype(int), n - 1)
    levels = np.array([fill_pressure(FillLoad(cfg.load.p_nominal_pa, float(f))) for f in rvs])
    return levels[idx]


_WORKER_CFG: RunConfig | None = None


def _init_worker(cfg: RunConfig) -> None:
    global _WORKER_CFG
    _WORKER_CFG = cfg


def _solve_one(args) -> np.ndarray:
    i, cond, rvs = args
    cfg = _WORKER_CFG
    spec = cfg.plate.spec()
    try:
        return simulate(spec, region_thickness(cfg, cond), load_field(cfg, rvs, spec))
    except (PlateSolveError, ValueError) as exc:
        raise PlateSolveError(f"realization {i} (conditions {cond}, rvs {rvs}): {exc}") from exc


def generate(cfg: RunConfig) -> Dataset:
    """Sample, solve and normalise ``cfg.data.n_realizations`` plates.

    With ``workers > 1`` the solves run in a process pool; results are
    assembled in realization order, so the dataset does not depend on it.
    """
    t0 = time.perf_counter()
    cond, rvs = draw_inputs(cfg)
    n = len(cond)
    jobs = [(i, cond[i], rvs[i]) for i in range(n)]
    fields = np.empty((n, len(COMPONENTS), cfg.plate.grid_nx, cfg.plate.grid_ny), dtype=np.float32)
    if cfg.data.workers > 1:
        with ProcessPoolExecutor(cfg.data.workers, initializer=_init_worker,
                                 initargs=(cfg,)) as pool:
            for i, f in enumerate(pool.map(_solve_one, jobs, chunksize=max(1, n // 64))):
                fields[i] = f
    else:
        _init_worker(cfg)
        step = max(1, n // 10)
        for i, job in enumerate(jobs):
            fields[i] = _solve_one(job)
            if (i + 1) % step == 0:
                log.info("solved %d/%d plates (%.1f s)", i + 1, n, time.perf_counter() - t0)
    log.info("generated %d realizations in %.2f s", n, time.perf_counter() - t0)
    return Dataset(cond, rvs, fields)


# --- training / evaluation ---------------------------------------------------

def component_index(component) -> int:
    if isinstance(component, str):
        if component not in COMPONENTS:
            raise ValueError(f"component must be one of {COMPONENTS}, not {component!r}")
        return COMPONENTS.index(component)
    return int(component)


def split_meta(cfg: RunConfig, ds: Dataset) -> dict:
    return {"split_seed": cfg.seed, "train_fraction": cfg.data.train_fraction,
            "dataset_sha256": ds.digest(), "n_records": len(ds)}


def prepare_training(cfg: RunConfig, ds: Dataset, component) -> tuple[Cvae, np.ndarray, np.ndarray]:
    """Split, fit the scaler on the training part and build a fresh model."""
    c = component_index(component)
    train_ds, _ = dsmod.split(ds, cfg.data.train_fraction, cfg.seed)
    scaler = dsmod.scaler_fit(train_ds)
    model = Cvae(cfg.model.build(ds.field_shape, ds.k), seed=cfg.seed)
    model.scaler = scaler
    model.component = c
    x = scaler.scale_fields(train_ds.fields[:, c:c + 1].astype(np.float64), c)
    t = scaler.scale_conditions(train_ds.conditions)
    return model, x, t


def train_config(cfg: RunConfig) -> TrainConfig:
    tr = cfg.train
    return TrainConfig(tr.epochs, tr.batch_size, tr.learning_rate, cfg.seed, cfg.model.kl_weight,
                       tr.checkpoint_every)


def train_component(cfg: RunConfig, ds: Dataset, component, *, resume: Checkpoint | None = None,
                    checkpoint_path=None) -> Checkpoint:
    meta = dict(split_meta(cfg, ds), component=COMPONENTS[component_index(component)])
    if resume is not None:
        if resume.meta.get("dataset_sha256") != meta["dataset_sha256"]:
            raise SplitMismatchError("checkpoint was trained on a different dataset")
        model = resume.model
        _, x, t = prepare_training(cfg, ds, component)
    else:
        model, x, t = prepare_training(cfg, ds, component)
    t0 = time.perf_counter()
    ck = train(model, x, t, train_config(cfg), resume=resume, checkpoint_path=checkpoint_path,
               meta=meta)
    log.info("trained %s in %.1f s", meta["component"], time.perf_counter() - t0)
    return ck


def test_split(ck: Checkpoint, ds: Dataset) -> Dataset:
    """The held-out records exactly as they were held out at training time."""
    m = ck.meta
    if "split_seed" not in m:
        raise SplitMismatchError("checkpoint carries no split record")
    if m.get("dataset_sha256") != ds.digest():
        raise SplitMismatchError("dataset differs from the one the model was trained on; "
                                 "refusing to re-split")
    _, test = dsmod.split(ds, m["train_fraction"], m["split_seed"])
    return test


def evaluate_component(cfg: RunConfig, ck: Checkpoint, ds: Dataset, n_mc: int | None = None,
                       seed: int | None = None) -> EvalReport:
    test = test_split(ck, ds)
    c = ck.model.component
    n_mc = cfg.evaluate.n_mc if n_mc is None else n_mc
    seed = cfg.seed if seed is None else seed
    report = evaluate(ck.model, test.fields[:, c], test.conditions, n_mc, seed,
                      [tuple(p) for p in cfg.evaluate.probes_m],
                      (cfg.plate.length_x_m, cfg.plate.length_y_m))
    report.meta["component"] = COMPONENTS[c]
    return report


def sample_fields(ck: Checkpoint, conditions_mm, n: int, seed: int) -> Dataset:
    """``n`` surrogate fields per condition row, as a one-component dataset."""
    cond = np.atleast_2d(np.asarray(conditions_mm, dtype=np.float64))
    k = ck.model.config.condition_dim
    if cond.shape[1] != k:
        raise ValueError(f"model expects {k} condition values per row, got {cond.shape[1]}")
    out_f, out_c = [], []
    for r, row in enumerate(cond):
        f = sample_conditional(ck.model, row, n, seed=[seed, r])
        out_f.append(f[:, None])
        out_c.append(np.repeat(row[None], n, axis=0))
    return Dataset(np.concatenate(out_c), None, np.concatenate(out_f))
