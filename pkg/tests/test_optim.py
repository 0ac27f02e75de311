import numpy as np
import pytest

from dsvae_lab.core.optim import Adam, AdamState, adam_step
from dsvae_lab.core.tensor import Tensor
from dsvae_lab.errors import DomainError, ShapeError


def _param(values):
    return Tensor(np.asarray(values, dtype=np.float64), dtype=np.float64, requires_grad=True)


def test_first_step_on_a_unit_gradient_moves_by_the_learning_rate():
    w = _param([0.25])
    adam_step({"w": w}, {"w": np.array([1.0])}, AdamState(lr=1e-3))
    assert w.data[0] - 0.25 == pytest.approx(-1e-3, rel=1e-6)


def test_zero_gradient_leaves_parameters_unchanged():
    w = _param([0.5, -1.5, 2.0])
    before = w.data.copy()
    state = AdamState(lr=1e-2)
    for _ in range(3):
        adam_step({"w": w}, {"w": np.zeros(3)}, state)
    np.testing.assert_array_equal(w.data, before)
    assert state.step == 3


def test_zero_learning_rate_is_bit_identical():
    rng = np.random.default_rng(4)
    w = Tensor(rng.normal(size=(3, 4)).astype(np.float32), requires_grad=True)
    before = w.data.copy()
    state = AdamState(lr=0.0)
    for _ in range(5):
        adam_step({"w": w}, {"w": rng.normal(size=(3, 4)).astype(np.float32)}, state)
    assert w.data.tobytes() == before.tobytes()
    assert np.any(state.first_moment["w"] != 0)


def test_constant_gradient_moves_monotonically_against_it():
    w = _param([0.0, 0.0])
    state = AdamState(lr=1e-2)
    trace = []
    for _ in range(4):
        adam_step({"w": w}, {"w": np.array([2.0, -0.5])}, state)
        trace.append(w.data.copy())
    trace = np.array(trace)
    assert np.all(np.diff(trace[:, 0]) < 0)
    assert np.all(np.diff(trace[:, 1]) > 0)


def test_missing_gradients_are_skipped_and_shapes_checked():
    w, b = _param([1.0, 2.0]), _param([3.0])
    adam_step({"w": w, "b": b}, {"w": np.ones(2), "b": None}, AdamState())
    assert b.data[0] == 3.0
    with pytest.raises(ShapeError):
        adam_step({"w": w}, {"w": np.ones(3)}, AdamState())
    with pytest.raises(DomainError):
        adam_step({"w": w}, {"w": np.ones(2)}, AdamState(step=-1))


def test_optimizer_step_applies_clipping_before_the_update():
    w = _param([0.0, 0.0])
    w.grad = np.array([30.0, 40.0])
    optimizer = Adam({"w": w}, AdamState(lr=1e-3), clip_norm=5.0)
    norm = optimizer.step()
    assert norm == pytest.approx(50.0)
    np.testing.assert_allclose(w.grad, [3.0, 4.0], rtol=1e-5)
    assert np.all(w.data < 0)
