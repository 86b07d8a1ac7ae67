"""Mini-batch Adam training of a :class:`~platecvae.cvae.Cvae` and checkpoint I/O."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cvae import Cvae, CvaeConfig
from .dataset import MinMaxScaler
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)

MAGIC = b"CVCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    kl_weight: float = 1.0
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("need epochs >= 1, batch_size >= 1 and learning_rate > 0")


@dataclass
class EpochLoss:
    mse: float
    kl: float
    total: float


@dataclass
class Checkpoint:
    model: Cvae
    adam: AdamState
    train: TrainConfig
    history: list[EpochLoss] = field(default_factory=list)
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Shuffling and latent noise for one epoch depend only on (seed, epoch)."""
    return np.random.default_rng([seed, epoch])


def train(model: Cvae, x: np.ndarray, t: np.ndarray, cfg: TrainConfig, *,
          resume: Checkpoint | None = None, checkpoint_path=None, meta=None) -> Checkpoint:
    """Train on scaled fields ``x (N, 1, H, W)`` and scaled conditions ``t (N, k)``.

    Runs ``epochs * ceil(N / batch_size)`` Adam steps; the last partial batch
    is kept.  With ``resume`` the run continues from the checkpoint's epoch
    count and reproduces an uninterrupted run.
    """
    x = np.asarray(x, dtype=model.dtype)
    t = np.asarray(t, dtype=model.dtype).reshape(len(x), -1)
    if x.shape[1:] != (1, *model.config.input_shape):
        raise ValueError(f"training fields {x.shape[1:]} do not match the model")
    if t.shape[1] != model.config.condition_dim:
        raise ValueError(f"conditions have width {t.shape[1]}, model expects "
                         f"{model.config.condition_dim}")
    model.config.kl_weight = cfg.kl_weight

    if resume is not None:
        adam, history = resume.adam, list(resume.history)
        adam.lr = cfg.learning_rate
    else:
        adam, history = AdamState(lr=cfg.learning_rate), []
    ckpt = Checkpoint(model, adam, cfg, history, None, dict(meta or {}))

    n, l = len(x), model.config.latent_dim
    for epoch in range(len(history), cfg.epochs):
        rng = epoch_rng(cfg.seed, epoch)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            e = rng.standard_normal((len(idx), l))
            try:
                terms = model.loss(x[idx], t[idx], e)
            except FloatingPointError as exc:
                if checkpoint_path is not None:
                    save_checkpoint(ckpt, checkpoint_path)
                raise TrainingAborted(
                    f"epoch {epoch}, batch at {start}: {exc}; last good state "
                    f"{'saved to ' + str(checkpoint_path) if checkpoint_path else 'not saved'}"
                ) from exc
            adam_step(model.params(), model.grads(), adam)
            sums += len(idx) * np.array([terms.mse, terms.kl, terms.total])
        mse, kl, total = sums / n
        history.append(EpochLoss(float(mse), float(kl), float(total)))
        ckpt.rng_state = rng.bit_generator.state
        log.info("epoch %d/%d  mse=%.3e  kl=%.3e  total=%.3e", epoch + 1, cfg.epochs, mse, kl, total)
        if checkpoint_path is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, checkpoint_path)
    return ckpt


def reconstruction_mse(model: Cvae, x, t, batch: int = 256) -> float:
    """Posterior-mean reconstruction error (z = mu) in scaled units."""
    x = np.asarray(x, dtype=model.dtype)
    t = np.asarray(t, dtype=model.dtype).reshape(len(x), -1)
    err = 0.0
    for s in range(0, len(x), batch):
        mu, _ = model.encode(x[s:s + batch])
        xhat = model.decode(np.concatenate([mu, t[s:s + batch]], axis=1))
        err += float(np.sum((xhat - x[s:s + batch]) ** 2))
    return err / x.size


def write_history_csv(history: list[EpochLoss], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,mse_term,kl_term,total\n")
        for i, h in enumerate(history, start=1):
            fh.write(f"{i},{h.mse!r},{h.kl!r},{h.total!r}\n")


# --- checkpoint format -------------------------------------------------------
#
# "CVCK" | u32 version | u32 header length | JSON header | parameter blobs in
# declaration order (f32 LE) | Adam first moments | Adam second moments

def _header(ck: Checkpoint) -> dict:
    model = ck.model
    adam = ck.adam
    return {
        "model": model.config.to_dict(),
        "component": model.component,
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "params": [[name, list(p.shape)] for name, p in model.named_params()],
        "train": asdict(ck.train),
        "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                 "step": adam.step, "has_moments": bool(adam.m)},
        "history": [[h.mse, h.kl, h.total] for h in ck.history],
        "rng_state": ck.rng_state,
        "meta": ck.meta,
    }


def save_checkpoint(ck: Checkpoint, path) -> None:
    header = json.dumps(_header(ck), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    for p in ck.model.params():
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    for arrs in (ck.adam.m, ck.adam.v):
        for a in arrs:
            parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if len(buf) < 12:
        raise CheckpointError("truncated checkpoint (header)")
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 12 + hlen > len(buf):
        raise CheckpointError("truncated checkpoint (json header)")
    try:
        hdr = json.loads(buf[12:12 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc

    model = Cvae(CvaeConfig.from_dict(hdr["model"]), seed=0, dtype=np.float32)
    model.component = hdr["component"]
    if hdr["scaler"] is not None:
        model.scaler = MinMaxScaler.from_dict(hdr["scaler"])
    named = model.named_params()
    if [[n, list(p.shape)] for n, p in named] != hdr["params"]:
        raise CheckpointError("parameter layout in checkpoint does not match its architecture")

    pos = 12 + hlen

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        if pos + 4 * count > len(buf):
            raise CheckpointError("truncated checkpoint (parameter data)")
        arr = np.frombuffer(buf, "<f4", count, pos).reshape(shape).astype(np.float32)
        pos += 4 * count
        return arr

    for _, p in named:
        p[...] = take(p.shape)
    a = hdr["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
    if a["has_moments"]:
        adam.m = [take(p.shape) for _, p in named]
        adam.v = [take(p.shape) for _, p in named]
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} unexpected trailing bytes in checkpoint")
    history = [EpochLoss(*h) for h in hdr["history"]]
    return Checkpoint(model, adam, TrainConfig(**hdr["train"]), history, hdr["rng_state"],
                      hdr["meta"])
