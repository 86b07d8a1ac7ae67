"""Monte-Carlo strain datasets: container, split, min-max scaling, binary I/O."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fieldgen import COMPONENTS

MAGIC = b"CVSD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")  # magic, version, n_records, k, n_components, H, W


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Records stored column-wise.

    ``conditions`` is ``(N, k)`` in mm, ``source_rvs`` ``(N, m)`` in the
    generator's documented order, ``fields`` ``(N, C, H, W)`` with C = 3
    (xx, yy, xy) for simulated data.  Everything is float32, which is what
    the file stores.
    """

    conditions: np.ndarray
    source_rvs: np.ndarray
    fields: np.ndarray

    def __post_init__(self):
        self.conditions = np.ascontiguousarray(self.conditions, dtype="<f4")
        self.fields = np.ascontiguousarray(self.fields, dtype="<f4")
        n = self.fields.shape[0]
        if self.source_rvs is None or np.size(self.source_rvs) == 0:
            self.source_rvs = np.zeros((n, 0))
        rvs = np.ascontiguousarray(self.source_rvs, dtype="<f4")
        self.source_rvs = rvs.reshape(n, -1) if n else rvs.reshape(0, rvs.shape[-1] if rvs.ndim > 1 else 0)
        if self.conditions.ndim == 1:
            self.conditions = self.conditions.reshape(-1, 1) if n else self.conditions.reshape(0, 1)
        if self.fields.ndim != 4:
            raise ValueError("fields must have shape (N, C, H, W)")
        if self.conditions.shape[0] != n:
            raise ValueError("conditions and fields disagree on record count")
        if self.conditions.shape[1] < 1:
            raise ValueError("records need at least one condition")
        if not np.all(np.isfinite(self.fields)):
            raise ValueError("strain fields must be finite")

    def __len__(self) -> int:
        return self.fields.shape[0]

    @property
    def k(self) -> int:
        return self.conditions.shape[1]

    @property
    def field_shape(self) -> tuple[int, int]:
        return self.fields.shape[2], self.fields.shape[3]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.conditions[idx], self.source_rvs[idx], self.fields[idx])

    def component(self, name: str) -> np.ndarray:
        if self.fields.shape[1] != len(COMPONENTS):
            raise ValueError("dataset does not carry all three strain components")
        return self.fields[:, COMPONENTS.index(name)]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.conditions, self.source_rvs, self.fields):
            h.update(a.tobytes())
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip((self.conditions, self.source_rvs, self.fields),
                            (other.conditions, other.source_rvs, other.fields))
        )


def split_indices(n: int, train_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(ds: Dataset, train_fraction: float, seed) -> tuple[Dataset, Dataset]:
    tr, te = split_indices(len(ds), train_fraction, seed)
    return ds.subset(tr), ds.subset(te)


# --- scaling -----------------------------------------------------------------

@dataclass
class MinMaxScaler:
    """Per-component global extrema of the fields, per-entry extrema of the conditions."""

    field_min: np.ndarray  # (C,)
    field_max: np.ndarray
    cond_min: np.ndarray  # (k,)
    cond_max: np.ndarray

    def __post_init__(self):
        for name in ("field_min", "field_max", "cond_min", "cond_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if np.any(self.field_max <= self.field_min) or np.any(self.cond_max <= self.cond_min):
            raise ValueError("degenerate scaler: max must exceed min for every quantity")

    def scale_fields(self, fields: np.ndarray, component: int | None = None) -> np.ndarray:
        lo, hi = self._field_bounds(fields, component)
        return (fields - lo) / (hi - lo)

    def invert_fields(self, scaled: np.ndarray, component: int | None = None) -> np.ndarray:
        lo, hi = self._field_bounds(scaled, component)
        return scaled * (hi - lo) + lo

    def scale_conditions(self, cond) -> np.ndarray:
        cond = np.asarray(cond, dtype=np.float64)
        return (cond - self.cond_min) / (self.cond_max - self.cond_min)

    def invert_conditions(self, scaled) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * (self.cond_max - self.cond_min) + self.cond_min

    def _field_bounds(self, arr, component):
        if component is not None:
            return self.field_min[component], self.field_max[component]
        # (..., C, H, W): broadcast along the channel axis
        shape = (-1, 1, 1)
        return self.field_min.reshape(shape), self.field_max.reshape(shape)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("field_min", "field_max", "cond_min", "cond_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(**{k: np.asarray(v) for k, v in d.items()})


def scaler_fit(train: Dataset) -> MinMaxScaler:
    if len(train) == 0:
        raise ValueError("cannot fit a scaler on an empty split")
    f = train.fields.astype(np.float64)
    c = train.conditions.astype(np.float64)
    return MinMaxScaler(f.min(axis=(0, 2, 3)), f.max(axis=(0, 2, 3)), c.min(axis=0), c.max(axis=0))


def scaler_apply(scaler: MinMaxScaler, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Scaled ``(fields, conditions)`` in float64; values outside [0, 1] are kept."""
    return (scaler.scale_fields(ds.fields.astype(np.float64)),
            scaler.scale_conditions(ds.conditions))


def scaler_invert(scaler: MinMaxScaler, fields_scaled, cond_scaled) -> tuple[np.ndarray, np.ndarray]:
    return scaler.invert_fields(np.asarray(fields_scaled)), scaler.invert_conditions(cond_scaled)


# --- persistence -------------------------------------------------------------

def to_bytes(ds: Dataset) -> bytes:
    n, c, h, w = ds.fields.shape
    out = [_HEADER.pack(MAGIC, VERSION, n, ds.k, c, h, w)]
    m = ds.source_rvs.shape[1]
    for i in range(n):
        out.append(ds.conditions[i].tobytes())
        out.append(struct.pack("<I", m))
        out.append(ds.source_rvs[i].tobytes())
        out.append(ds.fields[i].tobytes())
    return b"".join(out)


def from_bytes(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise DatasetFormatError("truncated dataset file (header)")
    magic, version, n, k, c, h, w = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version} (reader supports {VERSION})")
    if k < 1 or c < 1 or h < 1 or w < 1:
        raise DatasetFormatError(f"invalid dimensions k={k}, C={c}, H={h}, W={w}")
    pos = _HEADER.size
    cond = np.empty((n, k), dtype="<f4")
    fields = np.empty((n, c, h, w), dtype="<f4")
    rvs: list[np.ndarray] = []
    nf = c * h * w
    for i in range(n):
        need = 4 * k + 4
        if pos + need > len(buf):
            raise DatasetFormatError(f"truncated dataset file at record {i}")
        cond[i] = np.frombuffer(buf, "<f4", k, pos)
        (m,) = struct.unpack_from("<I", buf, pos + 4 * k)
        pos += need
        if rvs and m != rvs[0].size:
            raise DatasetFormatError(f"record {i} has {m} source variables, expected {rvs[0].size}")
        if pos + 4 * (m + nf) > len(buf):
            raise DatasetFormatError(f"truncated dataset file at record {i}")
        rvs.append(np.frombuffer(buf, "<f4", m, pos).copy())
        pos += 4 * m
        fields[i] = np.frombuffer(buf, "<f4", nf, pos).reshape(c, h, w)
        pos += 4 * nf
    if pos != len(buf):
        raise DatasetFormatError(f"{len(buf) - pos} trailing bytes after {n} records")
    m = rvs[0].size if rvs else 0
    src = np.stack(rvs) if rvs else np.zeros((0, m), dtype="<f4")
    return Dataset(cond, src, fields)


def save(ds: Dataset, path) -> None:
    Path(path).write_bytes(to_bytes(ds))


def load(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())


def write_record_csv(ds: Dataset, index: int, path) -> None:
    """One line per pixel: ``i, j, exx, eyy, exy``."""
    rec = ds.fields[index]
    h, w = ds.field_shape
    with open(path, "w") as fh:
        fh.write("i,j," + ",".join(f"e{c}" for c in COMPONENTS[: rec.shape[0]]) + "\n")
        for i in range(h):
            for j in range(w):
                vals = ",".join(repr(float(v)) for v in rec[:, i, j])
                fh.write(f"{i},{j},{vals}\n")
