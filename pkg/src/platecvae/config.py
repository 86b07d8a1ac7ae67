"""Declarative run configuration, read from TOML.

Physical quantities carry their unit in the key name (``_m``, ``_mm``, ``_pa``).
A file names its ``kind``; unspecified keys fall back to that kind's preset.

Schema (all sections optional)::

    kind = "plate_A" | "multi_region_B" | "custom"
    seed = 0
    out_dir = "runs/plate_A"

    [plate]      length_x_m, length_y_m, grid_nx, grid_ny, youngs_modulus_pa,
                 poisson_ratio, yield_stress_pa, base_thickness_mm, n_strips,
                 regions = [{x0_m, x1_m, y0_m, y1_m, base_thickness_mm}, ...]
    [conditions] mode = "thickness" | "loss", low_mm, high_mm
    [load]       kind = "gaussian" | "fill",
                 q0_mean_pa, q0_std_pa, x0_mean_m, x0_std_m, y0_mean_m, y0_std_m, shape_m,
                 p_nominal_pa, fill_mean, fill_std, n_patches
    [data]       n_realizations, train_fraction, workers
    [model]      architecture = "plate" | "hull", latent_dim, channels, hidden,
                 paddings, kl_weight
    [train]      epochs, batch_size, learning_rate, checkpoint_every
    [evaluate]   n_mc, probes_m = [[x, y], ...], probe_component
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cvae import CvaeConfig, hull_config, plate_config
from .fieldgen import PlateSpec, Region, strip_plate
from .sampling import DistributionSpec

KINDS = ("plate_A", "multi_region_B", "custom")
OUT_ENV = "PLATECVAE_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class PlateSection:
    length_x_m: float = 1.0
    length_y_m: float = 1.0
    grid_nx: int = 50
    grid_ny: int = 50
    youngs_modulus_pa: float = 206e9
    poisson_ratio: float = 0.3
    yield_stress_pa: float = 235e6
    base_thickness_mm: float = 10.0
    n_strips: int = 1
    regions: list = field(default_factory=list)

    def spec(self) -> PlateSpec:
        material = dict(youngs_modulus=self.youngs_modulus_pa, poisson_ratio=self.poisson_ratio,
                        yield_stress=self.yield_stress_pa)
        if self.regions:
            regions = tuple(Region(r["x0_m"], r["x1_m"], r["y0_m"], r["y1_m"],
                                   r["base_thickness_mm"]) for r in self.regions)
            return PlateSpec(self.length_x_m, self.length_y_m, self.grid_nx, self.grid_ny,
                             regions=regions, **material)
        return strip_plate(self.length_x_m, self.length_y_m, self.grid_nx, self.grid_ny,
                           self.n_strips, self.base_thickness_mm, **material)


@dataclass
class ConditionSection:
    mode: str = "thickness"  # region thickness itself, or loss from the base thickness
    low_mm: float = 7.0
    high_mm: float = 10.0

    def __post_init__(self):
        if self.mode not in ("thickness", "loss"):
            raise ConfigError(f"conditions.mode must be 'thickness' or 'loss', not {self.mode!r}")


@dataclass
class LoadSection:
    kind: str = "gaussian"
    q0_mean_pa: float = 25e3
    q0_std_pa: float = 2.5e3
    x0_mean_m: float = 0.0
    x0_std_m: float = 0.15
    y0_mean_m: float = 0.0
    y0_std_m: float = 0.15
    shape_m: float = 0.2
    p_nominal_pa: float = 20e3
    fill_mean: float = 0.95
    fill_std: float = 0.014
    n_patches: int = 6

    def __post_init__(self):
        if self.kind not in ("gaussian", "fill"):
            raise ConfigError(f"load.kind must be 'gaussian' or 'fill', not {self.kind!r}")

    def distributions(self) -> list[DistributionSpec]:
        if self.kind == "gaussian":
            return [DistributionSpec("normal", self.q0_mean_pa, self.q0_std_pa),
                    DistributionSpec("normal", self.x0_mean_m, self.x0_std_m),
                    DistributionSpec("normal", self.y0_mean_m, self.y0_std_m)]
        beta = DistributionSpec.beta_from_moments(self.fill_mean, self.fill_std)
        return [beta] * self.n_patches

    def rv_names(self) -> list[str]:
        if self.kind == "gaussian":
            return ["q0_pa", "x0_m", "y0_m"]
        return [f"fill_rate_{i}" for i in range(self.n_patches)]


@dataclass
class DataSection:
    n_realizations: int = 3000
    train_fraction: float = 0.65
    workers: int = 1


@dataclass
class ModelSection:
    architecture: str = "plate"
    latent_dim: int = 32
    channels: list = field(default_factory=lambda: [64, 128, 128, 64])
    hidden: list = field(default_factory=lambda: [512, 128])
    paddings: list | None = None
    kl_weight: float = 1.0

    def build(self, input_hw, condition_dim: int) -> CvaeConfig:
        make = {"plate": plate_config, "hull": hull_config}.get(self.architecture)
        if make is None:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        pads = [tuple(p) for p in self.paddings] if self.paddings else None
        return make(latent_dim=self.latent_dim, condition_dim=condition_dim,
                    input_hw=tuple(input_hw), channels=tuple(self.channels),
                    hidden=tuple(self.hidden), paddings=pads, kl_weight=self.kl_weight)


@dataclass
class TrainSection:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    checkpoint_every: int = 10


@dataclass
class EvalSection:
    n_mc: int = 1000
    probes_m: list = field(default_factory=list)


@dataclass
class RunConfig:
    kind: str = "plate_A"
    seed: int = 0
    out_dir: str = "runs/plate_A"
    plate: PlateSection = field(default_factory=PlateSection)
    conditions: ConditionSection = field(default_factory=ConditionSection)
    load: LoadSection = field(default_factory=LoadSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    evaluate: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, not {self.kind!r}")

    @property
    def condition_dim(self) -> int:
        return len(self.plate.spec().regions)

    def output_root(self) -> Path:
        """``out_dir``, re-rooted under ``$PLATECVAE_OUT`` when that is set."""
        root = os.environ.get(OUT_ENV)
        out = Path(self.out_dir)
        if root:
            return Path(root) / (out.relative_to(out.anchor) if out.is_absolute() else out)
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def preset(kind: str, thickness_range_mm=(7.0, 10.0)) -> RunConfig:
    """Defaults for the clamped square plate and the four-strip multi-region plate."""
    if kind == "plate_A" or kind == "custom":
        lo, hi = thickness_range_mm
        return RunConfig(kind=kind, out_dir=f"runs/{kind}",
                         conditions=ConditionSection("thickness", lo, hi),
                         evaluate=EvalSection(probes_m=[[0.0, 0.0], [0.25, 0.0], [0.25, 0.25],
                                                        [0.45, 0.0]]))
    if kind == "multi_region_B":
        return RunConfig(
            kind=kind, out_dir="runs/multi_region_B",
            plate=PlateSection(1.0, 3.0, 8, 24, base_thickness_mm=12.0, n_strips=4),
            conditions=ConditionSection("loss", 0.0, 2.0),
            load=LoadSection(kind="fill"),
            data=DataSection(1000, 0.70),
            model=ModelSection("hull", 2, [32, 32, 32], [64]),
            train=TrainSection(1000, 8, 5e-4, 50),
            evaluate=EvalSection(probes_m=[[0.0, 0.0], [-0.375, 0.0], [0.0, 1.0]]))
    raise ConfigError(f"unknown kind {kind!r}")


def _merge(section, values: dict, name: str):
    known = {f.name for f in fields(section)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return replace(section, **values)


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    kind = d.pop("kind", "plate_A")
    base = preset(kind, tuple(d.pop("thickness_preset_mm", (7.0, 10.0))))
    top = {k: d.pop(k) for k in ("seed", "out_dir") if k in d}
    sections = {}
    for f in fields(RunConfig):
        if f.name in d:
            val = d.pop(f.name)
            if not isinstance(val, dict):
                raise ConfigError(f"[{f.name}] must be a table")
            sections[f.name] = _merge(getattr(base, f.name), val, f.name)
    if d:
        raise ConfigError(f"unknown top-level keys: {sorted(d)}")
    return replace(base, kind=kind, **top, **sections)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        return from_dict(tomllib.load(fh))
