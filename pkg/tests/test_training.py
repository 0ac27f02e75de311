import copy
import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dsvae_lab.core.checkpoint_manager import load_checkpoint
from dsvae_lab.core.layers import GaussianParams
from dsvae_lab.core.rng import make_rng
from dsvae_lab.core.tensor import Tensor, default_dtype, no_grad
from dsvae_lab.errors import ConfigError, DomainError, NonFiniteLossError, ShapeError
from dsvae_lab.models import VARIANTS, build_model
from dsvae_lab.training import TrainConfig, kl_diag_gaussians, model_elbo, train, warmup_beta
from dsvae_lab.utils.sprites import gen_sprites
from factories import binary_dataset, binary_frames, tiny_model
from gradcheck import max_relative_error


def _gaussian(mean, logvar):
    return GaussianParams(mean=Tensor(mean, dtype=np.float64), logvar=Tensor(logvar, dtype=np.float64))


def test_kl_of_identical_gaussians_is_zero():
    q = _gaussian(np.array([[0.3, -1.0]]), np.array([[0.5, -0.2]]))
    np.testing.assert_allclose(kl_diag_gaussians(q, q).data, [0.0], atol=1e-12)


def test_kl_against_standard_normal_closed_form():
    q = _gaussian(np.array([[1.0]]), np.array([[0.0]]))
    p = _gaussian(np.zeros((1, 1)), np.zeros((1, 1)))
    assert kl_diag_gaussians(q, p).item() == pytest.approx(0.5)


def test_kl_matches_monte_carlo_estimate():
    rng = np.random.default_rng(11)
    mu_q, lv_q = rng.normal(size=3), rng.uniform(-1.0, 1.0, size=3)
    mu_p, lv_p = rng.normal(size=3), rng.uniform(-1.0, 1.0, size=3)
    exact = kl_diag_gaussians(_gaussian(mu_q[None], lv_q[None]), _gaussian(mu_p[None], lv_p[None])).item()

    samples = mu_q + np.exp(0.5 * lv_q) * rng.standard_normal((400_000, 3))

    def log_density(x, mu, lv):
        return np.sum(-0.5 * (np.log(2 * np.pi) + lv + (x - mu) ** 2 / np.exp(lv)), axis=1)

    estimate = float(np.mean(log_density(samples, mu_q, lv_q) - log_density(samples, mu_p, lv_p)))
    assert estimate == pytest.approx(exact, rel=0.02, abs=0.01)


def test_kl_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        kl_diag_gaussians(_gaussian(np.zeros((1, 2)), np.zeros((1, 2))), _gaussian(np.zeros((1, 3)), np.zeros((1, 3))))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (2, 4), elements=st.floats(-5.0, 5.0)),
    arrays(np.float64, (2, 4), elements=st.floats(-4.0, 4.0)),
    arrays(np.float64, (2, 4), elements=st.floats(-5.0, 5.0)),
    arrays(np.float64, (2, 4), elements=st.floats(-4.0, 4.0)),
)
def test_kl_is_never_negative(mu_q, lv_q, mu_p, lv_p):
    value = kl_diag_gaussians(_gaussian(mu_q, lv_q), _gaussian(mu_p, lv_p)).data
    assert np.all(value >= -1e-9)


def test_warmup_schedule_endpoints():
    assert warmup_beta(0, 100) == 0.0
    assert warmup_beta(50, 100) == pytest.approx(0.5)
    assert warmup_beta(100, 100) == 1.0
    assert warmup_beta(5000, 100) == 1.0
    assert warmup_beta(0, 0) == 1.0
    with pytest.raises(DomainError):
        warmup_beta(-1, 100)


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 5_000))
def test_warmup_is_monotone_and_bounded(a, b, warmup):
    low, high = sorted((a, b))
    assert 0.0 <= warmup_beta(low, warmup) <= warmup_beta(high, warmup) <= 1.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_elbo_terms_are_finite_and_consistent(variant):
    model = tiny_model(variant, frame_shape=(1, 8, 8))
    breakdown = model_elbo(model, binary_frames(3, 4), 0.5, make_rng(0, "sampling", 0))
    assert np.isfinite([breakdown.recon_loglik, breakdown.kl_f, breakdown.kl_z]).all()
    assert breakdown.kl_f >= -1e-5 and breakdown.kl_z >= -1e-5
    assert breakdown.elbo == pytest.approx(breakdown.recon_loglik - 0.5 * (breakdown.kl_f + breakdown.kl_z))
    assert breakdown.loss.item() == pytest.approx(-breakdown.elbo, rel=1e-4)


def test_elbo_reports_non_finite_reconstruction():
    model = tiny_model(frame_shape=(1, 8, 8))
    batch = binary_frames(2, 3)
    batch[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        model_elbo(model, batch, 1.0, make_rng(0, "sampling", 0), iteration=7)
    assert info.value.term == "recon"
    assert info.value.iteration == 7


def test_elbo_rejects_empty_batch():
    model = tiny_model(frame_shape=(1, 8, 8))
    with pytest.raises(ShapeError):
        model_elbo(model, np.zeros((0, 3, 1, 8, 8), dtype=np.float32), 1.0, make_rng(0, "sampling"))


@pytest.mark.parametrize("variant", VARIANTS)
def test_elbo_gradient_matches_central_differences(variant):
    with default_dtype(np.float64):
        model = tiny_model(variant, frame_shape=(1, 4, 4))
        x = binary_frames(2, 3, size=4).astype(np.float64)

        def loss():
            return model_elbo(model, x, 0.7, make_rng(0, "sampling", 0)).loss

        error = max_relative_error(loss, dict(model.named_parameters()), max_entries=4)
    assert error < 1e-4


def test_elbo_is_deterministic_for_a_fixed_rng():
    model = tiny_model(frame_shape=(1, 8, 8))
    x = binary_frames(2, 3)
    with no_grad():
        first = model_elbo(model, x, 1.0, make_rng(5, "sampling", 3))
        second = model_elbo(model, x, 1.0, make_rng(5, "sampling", 3))
    assert first.elbo == second.elbo


def test_warmup_auto_only_applies_to_strokes(tiny_config, tmp_path):
    assert TrainConfig.from_config(tiny_config, output_dir=tmp_path).warmup_iters == 0
    strokes = copy.deepcopy(tiny_config)
    strokes["data"]["kind"] = "strokes"
    assert TrainConfig.from_config(strokes, output_dir=tmp_path).warmup_iters == 10000
    forced = copy.deepcopy(tiny_config)
    forced["training"]["warmup"] = "on"
    assert TrainConfig.from_config(forced, output_dir=tmp_path).warmup_iters == 10000


@pytest.fixture(scope="module")
def sprites():
    return gen_sprites(24, seed=3)


def _train(config, dataset, logger, **changes):
    run = copy.deepcopy(config)
    for key, value in changes.items():
        section, name = key.split("__")
        run[section][name] = value
    return train(run, dataset, output_dir=run["run"]["output_dir"], logger=logger)


def test_train_writes_metrics_summary_and_checkpoint(tiny_config, sprites, logger):
    result = _train(tiny_config, sprites, logger, training__epochs=2, training__max_iterations=3)
    out = tiny_config["run"]["output_dir"]
    assert result.iterations == 3
    assert result.checkpoint_path.exists()
    with open(f"{out}/metrics.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["iteration", "beta", "recon", "kl_f", "kl_z", "elbo"]
    assert [row[0] for row in rows[1:]] == ["0", "1", "2"]
    summary = json.loads(open(f"{out}/summary.json").read())
    assert summary["iterations"] == 3
    assert load_checkpoint(result.checkpoint_path).iteration == 3


def test_resumed_training_matches_uninterrupted_run(tiny_config, sprites, logger, tmp_path):
    straight = copy.deepcopy(tiny_config)
    straight["run"]["output_dir"] = str(tmp_path / "straight")
    resumed = copy.deepcopy(tiny_config)
    resumed["run"]["output_dir"] = str(tmp_path / "resumed")

    full = _train(straight, sprites, logger, training__epochs=2, training__max_iterations=5)
    _train(resumed, sprites, logger, training__epochs=2, training__max_iterations=2)
    second = _train(resumed, sprites, logger, training__epochs=2, training__max_iterations=5, training__resume=True)

    assert second.iterations == 5
    a = load_checkpoint(full.checkpoint_path)
    b = load_checkpoint(second.checkpoint_path)
    assert list(a.params) == list(b.params)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])
    assert (tmp_path / "straight" / "metrics.csv").read_text() == (tmp_path / "resumed" / "metrics.csv").read_text()


def test_resume_with_other_seed_is_refused(tiny_config, sprites, logger):
    _train(tiny_config, sprites, logger, training__epochs=2, training__max_iterations=1)
    with pytest.raises(ConfigError):
        _train(tiny_config, sprites, logger, training__epochs=2, training__max_iterations=2, training__resume=True, run__seed=9)


def test_metrics_log_the_warmup_ramp(tiny_config, sprites, logger):
    _train(tiny_config, sprites, logger, training__epochs=2, training__max_iterations=3, training__warmup="on")
    with open(f"{tiny_config['run']['output_dir']}/metrics.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert [float(row["beta"]) for row in rows] == [0.0, 1 / 10000, 2 / 10000]


def _initial_model(config):
    return build_model(config["model"], (1, 16, 16), make_rng(config["run"]["seed"], "init"))


def test_short_run_on_toy_sequences_improves_the_elbo(tiny_config, logger):
    dataset = binary_dataset(8, 4, size=16, seed=2)
    x = dataset.sequences(np.arange(8))
    initial = _initial_model(tiny_config)
    result = _train(
        tiny_config,
        dataset,
        logger,
        training__epochs=50,
        training__batch_size=8,
        training__max_iterations=50,
        training__learning_rate=1e-2,
    )
    assert result.iterations == 50
    with no_grad():
        before = model_elbo(initial, x, 1.0, make_rng(0, "eval"))
        after = model_elbo(result.model, x, 1.0, make_rng(0, "eval"))
    assert np.isfinite(after.elbo)
    assert after.elbo > before.elbo


def test_zero_learning_rate_keeps_the_initial_parameters(tiny_config, sprites, logger):
    initial = _initial_model(tiny_config).state_dict()
    result = _train(tiny_config, sprites, logger, training__epochs=2, training__max_iterations=3, training__learning_rate=0.0)
    final = result.model.state_dict()
    assert list(final) == list(initial)
    for name in initial:
        assert final[name].tobytes() == initial[name].tobytes(), name
