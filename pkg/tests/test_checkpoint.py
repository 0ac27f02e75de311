import csv
import signal

import numpy as np
import pytest

from dsvae_lab.core.checkpoint_manager import (
    MAGIC,
    Checkpoint,
    CheckpointManager,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from dsvae_lab.core.graceful_shutdown import GracefulShutdown
from dsvae_lab.core.metrics_manager import METRICS_HEADER, MetricSnapshot, MetricsManager
from dsvae_lab.core.optim import Adam, AdamState, clip_grad_norm
from dsvae_lab.core.output_writer import OutputWriter, decode_pgm, encode_pgm
from dsvae_lab.core.tensor import Tensor
from dsvae_lab.core.worker_pool import WorkerPool
from dsvae_lab.errors import CheckpointFormatError, DatasetFormatError


def _checkpoint():
    rng = np.random.default_rng(0)
    params = {
        "encoder.weight": rng.standard_normal((3, 2)).astype(np.float32),
        "encoder.bias": rng.standard_normal(3).astype(np.float32),
        "scalar": np.full((), 0.5, dtype=np.float32),
    }
    moments = {"m:encoder.bias": np.ones(3, dtype=np.float32), "v:encoder.bias": np.full(3, 2.0, dtype=np.float32)}
    return Checkpoint(params=params, moments=moments, iteration=42, seed=7)


def test_encoding_preserves_names_order_and_counters():
    original = _checkpoint()
    payload = encode_checkpoint(original)
    assert payload.startswith(MAGIC)
    restored = decode_checkpoint(payload)
    assert list(restored.params) == list(original.params)
    assert list(restored.moments) == list(original.moments)
    for name, value in original.params.items():
        np.testing.assert_array_equal(restored.params[name], value)
    assert restored.params["scalar"].shape == ()
    assert (restored.iteration, restored.seed) == (42, 7)
    assert encode_checkpoint(restored) == payload


def test_bad_magic_is_reported():
    payload = b"NOTADSVA" + encode_checkpoint(_checkpoint())[len(MAGIC) :]
    with pytest.raises(CheckpointFormatError, match="bad magic"):
        decode_checkpoint(payload)


def test_truncation_reports_the_offset():
    payload = encode_checkpoint(_checkpoint())
    with pytest.raises(CheckpointFormatError, match="truncated at byte"):
        decode_checkpoint(payload[:-3])


def test_trailing_bytes_are_rejected():
    payload = encode_checkpoint(_checkpoint())
    with pytest.raises(CheckpointFormatError, match="2 trailing bytes"):
        decode_checkpoint(payload + b"\x00\x00")


def test_missing_file_is_a_format_error(tmp_path):
    with pytest.raises(CheckpointFormatError, match="file not found"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_load_checks_expected_shapes(tmp_path):
    path = save_checkpoint(_checkpoint(), tmp_path / "run" / "model.ckpt")
    assert not path.with_suffix(".ckpt.tmp").exists()
    shapes = {"encoder.weight": (3, 2), "encoder.bias": (3,), "scalar": ()}
    assert load_checkpoint(path, expected=shapes).iteration == 42
    with pytest.raises(CheckpointFormatError, match="shape mismatch"):
        load_checkpoint(path, expected={**shapes, "encoder.bias": (4,)})
    with pytest.raises(CheckpointFormatError, match="parameter names differ"):
        load_checkpoint(path, expected={"encoder.weight": (3, 2)})


def test_optimizer_state_round_trips_through_checkpoint():
    params = {"w": Tensor(np.ones((2, 2)), requires_grad=True)}
    optimizer = Adam(params)
    params["w"].grad = np.full((2, 2), 0.5, dtype=np.float32)
    optimizer.step()
    checkpoint = Checkpoint.from_training(
        {name: p.data for name, p in params.items()}, optimizer.state, iteration=1, seed=0
    )
    restored = decode_checkpoint(encode_checkpoint(checkpoint)).restore_optimizer(AdamState())
    assert restored.step == 1
    np.testing.assert_array_equal(restored.first_moment["w"], optimizer.state.first_moment["w"])
    np.testing.assert_array_equal(restored.second_moment["w"], optimizer.state.second_moment["w"])


def test_clip_grad_norm_scales_to_the_limit():
    a = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([3.0, 4.0], dtype=np.float32)
    assert clip_grad_norm([a], 1.0) == pytest.approx(5.0)
    assert float(np.linalg.norm(a.grad)) == pytest.approx(1.0, rel=1e-5)


def test_checkpoint_manager_interval(tmp_path, logger):
    manager = CheckpointManager(tmp_path / "model.ckpt", interval_iterations=3, seed=1, logger=logger)
    params = {"w": np.zeros(2, dtype=np.float32)}
    assert not manager.maybe_checkpoint(params, AdamState(), 2)
    assert manager.maybe_checkpoint(params, AdamState(), 3)
    assert not manager.due(5)
    assert manager.due(6)
    assert load_checkpoint(manager.path).iteration == 3


def _snapshot(iteration):
    return MetricSnapshot(iteration=iteration, beta=1.0, recon=-2.0, kl_f=0.1, kl_z=0.2, elbo=-2.3)


def test_metrics_resume_keeps_only_earlier_rows(tmp_path, logger):
    first = MetricsManager(tmp_path, flush_every=1, include_system=False, logger=logger)
    for iteration in range(4):
        first.record(_snapshot(iteration))
    resumed = MetricsManager(tmp_path, flush_every=1, include_system=False, logger=logger, start_iteration=2)
    resumed.record(_snapshot(2))
    with open(tmp_path / "metrics.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert tuple(rows[0]) == METRICS_HEADER
    assert [row[0] for row in rows[1:]] == ["0", "1", "2"]


def test_pgm_header_and_decode(tmp_path, logger):
    frame = np.zeros((1, 3, 2))
    frame[0, 1, 1] = 1.0
    payload = encode_pgm(frame)
    assert payload.startswith(b"P5\n2 3\n255\n")
    pixels = decode_pgm(payload)
    assert pixels[1, 1] == 255 and pixels.sum() == 255
    with pytest.raises(DatasetFormatError):
        decode_pgm(payload[:-1])

    writer = OutputWriter(tmp_path, logger=logger)
    paths = writer.write_sequence(np.stack([frame, frame]), seq_index=4, subdir="gen")
    assert [p.name for p in paths] == ["seq4_t00.pgm", "seq4_t01.pgm"]


def test_worker_pool_preserves_input_order():
    pool = WorkerPool(4)
    assert pool.map(lambda index, item: (index, item * item), range(20)) == [(i, i * i) for i in range(20)]


def test_graceful_shutdown_trigger_and_restore():
    previous = signal.getsignal(signal.SIGTERM)
    shutdown = GracefulShutdown()
    shutdown.install([signal.SIGTERM])
    assert not shutdown.is_triggered()
    shutdown.trigger()
    assert shutdown.is_triggered()
    shutdown.uninstall()
    assert signal.getsignal(signal.SIGTERM) is previous
