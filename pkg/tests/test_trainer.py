import numpy as np
import pytest

from platecvae.cvae import Cvae, conv_cvae_config
from platecvae.dataset import MinMaxScaler
from platecvae.trainer import (
    CheckpointError, TrainConfig, TrainingAborted, load_checkpoint, reconstruction_mse,
    save_checkpoint, train, write_history_csv,
)


def _toy(seed=1):
    cfg = conv_cvae_config((8, 8), (8, 16), (3, 3), ((1, 1), (2, 2)), None, (32,), 2, 1)
    m = Cvae(cfg, seed=seed)
    m.scaler = MinMaxScaler([0.0], [1.0], [0.0], [1.0])
    return m


def _smooth_data(n=8, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, 8), np.linspace(0, 1, 8))
    t = rng.uniform(size=(n, 1))
    x = np.stack([0.5 + 0.4 * np.sin(3 * xx * ti + 2 * yy) for ti in t[:, 0]])[:, None]
    return x, t


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_tiny_overfit():
    x, t = _smooth_data()
    m = _toy()
    ck = train(m, x, t, TrainConfig(epochs=200, batch_size=2, learning_rate=3e-3))
    assert len(ck.history) == 200
    assert reconstruction_mse(m, x, t) < 1e-3


def test_step_count_keeps_partial_batch():
    x, t = _smooth_data(n=7)
    ck = train(_toy(), x, t, TrainConfig(epochs=3, batch_size=3, learning_rate=1e-3))
    assert ck.adam.step == 3 * 3


def test_deterministic_history():
    x, t = _smooth_data()
    cfg = TrainConfig(epochs=5, batch_size=3, learning_rate=1e-3, seed=4)
    a = train(_toy(), x, t, cfg).history
    b = train(_toy(), x, t, cfg).history
    assert a == b


def test_resume_equals_uninterrupted(tmp_path):
    x, t = _smooth_data()
    full = train(_toy(), x, t, TrainConfig(epochs=8, batch_size=3, learning_rate=1e-3))
    half = train(_toy(), x, t, TrainConfig(epochs=4, batch_size=3, learning_rate=1e-3))
    save_checkpoint(half, tmp_path / "h.cvck")
    r = load_checkpoint(tmp_path / "h.cvck")
    done = train(r.model, x, t, TrainConfig(epochs=8, batch_size=3, learning_rate=1e-3), resume=r)
    assert done.history == full.history
    assert all(np.array_equal(a, b) for a, b in zip(done.model.params(), full.model.params()))


def test_checkpoint_roundtrip_bitwise(tmp_path):
    x, t = _smooth_data()
    ck = train(_toy(), x, t, TrainConfig(epochs=2, batch_size=4, learning_rate=1e-3),
               meta={"note": "x"})
    p = tmp_path / "m.cvck"
    save_checkpoint(ck, p)
    back = load_checkpoint(p)
    zc = np.random.default_rng(0).standard_normal((5, 3)).astype(np.float32)
    np.testing.assert_array_equal(back.model.decode(zc), ck.model.decode(zc))
    assert back.history == ck.history and back.meta == {"note": "x"}
    assert back.model.scaler.to_dict() == ck.model.scaler.to_dict()
    save_checkpoint(back, tmp_path / "m2.cvck")
    assert (tmp_path / "m2.cvck").read_bytes() == p.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    x, t = _smooth_data()
    ck = train(_toy(), x, t, TrainConfig(epochs=1, batch_size=8, learning_rate=1e-3))
    p = tmp_path / "m.cvck"
    save_checkpoint(ck, p)
    buf = p.read_bytes()
    for bad, match in [(buf[:-10], "truncated"), (b"NOPE" + buf[4:], "magic"),
                       (buf[:4] + (2).to_bytes(4, "little") + buf[8:], "version"),
                       (buf + b"\0" * 4, "trailing"), (buf[:8], "truncated")]:
        p.write_bytes(bad)
        with pytest.raises(CheckpointError, match=match):
            load_checkpoint(p)


def test_shape_mismatch():
    m = _toy()
    with pytest.raises(ValueError):
        train(m, np.zeros((4, 1, 6, 6)), np.zeros((4, 1)), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(m, np.zeros((4, 1, 8, 8)), np.zeros((4, 2)), TrainConfig(epochs=1))


def test_nonfinite_loss_aborts_with_checkpoint(tmp_path):
    x, t = _smooth_data()
    x[3, 0, 0, 0] = np.nan
    p = tmp_path / "last.cvck"
    with pytest.raises(TrainingAborted):
        train(_toy(), x, t, TrainConfig(epochs=2, batch_size=2), checkpoint_path=p)
    assert load_checkpoint(p).model is not None


def test_history_csv(tmp_path):
    x, t = _smooth_data()
    ck = train(_toy(), x, t, TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3))
    write_history_csv(ck.history, tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mse_term,kl_term,total" and len(lines) == 4
