import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsvae_lab.core.rng import make_rng
from dsvae_lab.errors import DatasetFormatError, DomainError, ShapeError
from dsvae_lab.utils.datasets import (
    FRAMES,
    TEST,
    VECTORS,
    DatasetFile,
    decode_dataset,
    encode_dataset,
    load_dataset,
    save_dataset,
    split_last_fifth,
)
from dsvae_lab.utils.physics import (
    SQUARE,
    BallState,
    PolygonArena,
    check_state,
    divergence,
    gen_bouncing,
    point_in_polygon,
    random_start,
    render,
    simulate,
    step_ball,
)
from dsvae_lab.utils.sprites import ACTIONS, CATEGORIES, content_index, gen_sprites, is_test_combination
from dsvae_lab.utils.strokes import gen_strokes


@pytest.fixture(scope="module")
def arena():
    return PolygonArena.default(32)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ball_keeps_speed_and_stays_inside(arena, seed):
    start = random_start(arena, 3.0, 2.0, make_rng(seed, "synth"))
    states = simulate(start, arena, 1000)
    assert len(states) == 1000 and states[0] is start
    for state in states:
        assert state.speed == pytest.approx(2.0, rel=1e-9)
        assert point_in_polygon(state.position, arena.vertices)
        assert arena.clearance(state.position) >= state.radius - 1e-6


def test_ball_reflects_off_a_wall():
    square = PolygonArena(((0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)))
    state = BallState(position=(8.0, 5.0), velocity=(2.0, 0.0), radius=1.0)
    after = step_ball(state, square)
    assert after.velocity == pytest.approx((-2.0, 0.0))
    assert after.position == pytest.approx((8.0, 5.0))


def test_zero_perturbation_does_not_diverge(arena):
    start = random_start(arena, 3.0, 2.0, make_rng(4, "synth"))
    assert divergence(start, arena, perturbation=0.0) == 0.0


@pytest.mark.slow
def test_perturbed_trajectories_stay_parallel_in_the_convex_default_arena(arena):
    """Reflections are isometries: a 1e-3 offset only grows when a corner splits the pair."""

    gaps = []
    for index in range(100):
        start = replace(random_start(arena, 3.05, 2.0, make_rng(0, "eval", index)), radius=3.0)
        gaps.append(divergence(start, arena, perturbation=1e-3, frames=30))
    gaps = np.asarray(gaps)
    assert np.mean(gaps <= 3.5e-3) >= 0.9
    assert np.mean(gaps > 5.0) <= 0.1


def test_invalid_states_and_arenas_are_rejected(arena):
    with pytest.raises(DomainError):
        check_state(BallState(position=(100.0, 100.0), velocity=(1.0, 0.0), radius=1.0), arena)
    with pytest.raises(DomainError):
        check_state(BallState(position=(4.5, 10.0), velocity=(1.0, 0.0), radius=3.0), arena)
    with pytest.raises(DomainError):
        check_state(BallState(position=(16.0, 16.0), velocity=(1.0, 0.0), radius=0.0), arena)
    with pytest.raises(DomainError):
        PolygonArena(((0.0, 0.0), (1.0, 1.0)))
    with pytest.raises(DomainError):
        PolygonArena(((0.0, 0.0), (1.0, 1.0), (2.0, 2.0)))


def test_render_lights_pixels_whose_centres_are_inside():
    ball = render(BallState(position=(16.0, 16.0), velocity=(0.0, 0.0), radius=6.0), 32)
    assert set(np.unique(ball)) == {0, 255}
    assert np.count_nonzero(ball) == pytest.approx(math.pi * 36.0, rel=0.15)
    square = render(BallState(position=(16.0, 16.0), velocity=(0.0, 0.0), radius=3.0, shape=SQUARE), 32)
    assert np.count_nonzero(square) == 36


def test_bouncing_dataset_shape_and_determinism():
    first = gen_bouncing(10, seed=5)
    second = gen_bouncing(10, seed=5)
    assert first.kind == FRAMES
    assert first.payload.shape == (10, 30, 1, 32, 32)
    np.testing.assert_array_equal(first.payload, second.payload)
    assert set(np.unique(first.payload)) <= {0, 255}
    np.testing.assert_array_equal(first.labels["split"], split_last_fifth(10))
    assert not np.array_equal(first.payload, gen_bouncing(10, seed=6).payload)


def test_bouncing_rejects_empty_request():
    with pytest.raises(DomainError):
        gen_bouncing(0, seed=0)


@pytest.fixture(scope="module")
def sprites():
    return gen_sprites(60, seed=2)


def test_sprite_labels_and_split_rule(sprites):
    assert sprites.payload.shape == (60, 8, 1, 16, 16)
    for name in (*CATEGORIES, "content", "split"):
        assert sprites.labels[name].shape == (60,)
    for index in range(sprites.num_sequences):
        labels = {name: int(values[index]) for name, values in sprites.labels.items()}
        assert labels["content"] == content_index(labels["shape"], labels["color"], labels["size"])
        assert (labels["split"] == TEST) == is_test_combination(labels["content"], labels["action"])
        assert labels["action"] < len(ACTIONS)


def test_test_split_holds_only_unseen_pairings(sprites):
    test = sprites.subset("test")
    train = sprites.subset("train")
    assert test.num_sequences + train.num_sequences == sprites.num_sequences
    assert np.all((test.labels["content"] + test.labels["action"]) % 6 == 0)
    assert set(np.unique(test.labels["content"] % 6)) <= {0, 4, 5}


def test_horizontal_actions_shift_one_column_per_frame(sprites):
    for index in range(sprites.num_sequences):
        if int(sprites.labels["action"][index]) not in (0, 2):
            continue
        lit = sprites.payload[index, :, 0] > 0
        leftmost = [int(np.flatnonzero(frame.any(axis=0))[0]) for frame in lit]
        assert np.all(np.diff(leftmost) == 1)


def test_stroke_drawings_are_well_formed():
    strokes = gen_strokes(12, seed=1)
    assert strokes.kind == VECTORS
    assert strokes.payload.shape == (12, 20, 5)
    pens = strokes.payload[..., 2:]
    np.testing.assert_array_equal(pens.sum(axis=-1), np.ones((12, 20)))
    assert set(np.unique(pens)) <= {0.0, 1.0}
    for drawing in strokes.payload:
        lifted = np.flatnonzero(drawing[:, 3] == 1.0)
        assert len(lifted) == 1
        last = int(lifted[0])
        assert np.all(drawing[: last + 1, 4] == 0.0)
        assert np.all(drawing[last + 1 :, 4] == 1.0)
        assert np.all(drawing[last + 1 :, :2] == 0.0)
        np.testing.assert_allclose(drawing[: last + 1, :2].sum(axis=0), [0.0, 0.0], atol=1e-5)


def test_dataset_round_trip_through_disk(tmp_path, sprites):
    path = save_dataset(sprites, tmp_path / "data" / "sprites.dsd")
    loaded = load_dataset(path)
    np.testing.assert_array_equal(loaded.payload, sprites.payload)
    assert list(loaded.labels) == list(sprites.labels)
    strokes = gen_strokes(3, seed=0)
    np.testing.assert_array_equal(decode_dataset(encode_dataset(strokes)).payload, strokes.payload)


def test_dataset_decode_errors(tmp_path, sprites):
    payload = encode_dataset(sprites.select([0, 1]))
    with pytest.raises(DatasetFormatError, match="bad magic"):
        decode_dataset(b"X" * 8 + payload[8:])
    with pytest.raises(DatasetFormatError, match="truncated at byte"):
        decode_dataset(payload[:40])
    with pytest.raises(DatasetFormatError, match="1 trailing bytes"):
        decode_dataset(payload + b"\x00")
    with pytest.raises(DatasetFormatError, match="file not found"):
        load_dataset(tmp_path / "missing.dsd")


def test_dataset_validation(sprites):
    with pytest.raises(ShapeError):
        DatasetFile(kind=FRAMES, payload=np.zeros((2, 3, 4, 4), dtype=np.uint8))
    with pytest.raises(ShapeError):
        DatasetFile(kind=VECTORS, payload=np.zeros((2, 3, 5)), labels={"shape": np.zeros(3)})
    with pytest.raises(DomainError):
        sprites.select([0, 60])
    with pytest.raises(DomainError):
        sprites.subset("validation")
    with pytest.raises(DomainError):
        sprites.label("mood")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 9), st.integers(0, 5))
def test_batches_visit_every_sequence_once(count, batch_size, epoch):
    dataset = DatasetFile(kind=VECTORS, payload=np.zeros((count, 2, 3)))
    batches = list(dataset.batches(batch_size, seed=1, epoch=epoch))
    assert all(len(batch) <= batch_size for batch in batches)
    assert sorted(np.concatenate(batches).tolist()) == list(range(count))
