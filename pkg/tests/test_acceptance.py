"""Desk-scale experiments and large oracles; run with ``pytest --run-slow``."""

import copy
import logging

import numpy as np
import pytest

from dsvae_lab.config import DEFAULT_CONFIG
from dsvae_lab.core.layers import GaussianParams
from dsvae_lab.core.rng import make_rng
from dsvae_lab.core.tensor import Tensor
from dsvae_lab.evaluation import (
    classifier_accuracy,
    constant_fraction,
    equal_error_rate,
    pixel_error_curve,
    table1,
    train_classifier,
    trajectory_export,
    verification_experiment,
)
from dsvae_lab.generation import generate_fixed_f, swap_features
from dsvae_lab.training import kl_diag_gaussians, train
from dsvae_lab.utils.physics import gen_bouncing
from dsvae_lab.utils.sprites import gen_sprites

pytestmark = pytest.mark.slow

LOGGER = logging.getLogger("dsvae_lab.tests.acceptance")


def test_kl_matches_large_monte_carlo_estimates():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        mu_q, mu_p = rng.normal(size=(2, 4))
        lv_q, lv_p = rng.uniform(-2.0, 2.0, size=(2, 4))
        q = GaussianParams(mean=Tensor(mu_q[None], dtype=np.float64), logvar=Tensor(lv_q[None], dtype=np.float64))
        p = GaussianParams(mean=Tensor(mu_p[None], dtype=np.float64), logvar=Tensor(lv_p[None], dtype=np.float64))
        exact = kl_diag_gaussians(q, p).item()
        x = mu_q + np.exp(0.5 * lv_q) * rng.standard_normal((1_000_000, 4))
        log_q = -0.5 * np.sum(lv_q + (x - mu_q) ** 2 / np.exp(lv_q), axis=1)
        log_p = -0.5 * np.sum(lv_p + (x - mu_p) ** 2 / np.exp(lv_p), axis=1)
        assert float(np.mean(log_q - log_p)) == pytest.approx(exact, rel=0.01, abs=5e-3)


def test_equal_error_rate_matches_grid_sweeps():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        genuine = np.sort(rng.normal(rng.uniform(0.5, 3.0), 1.0, size=5000))
        impostor = np.sort(rng.normal(0.0, 1.0, size=5000))
        grid = np.linspace(min(genuine[0], impostor[0]), max(genuine[-1], impostor[-1]), 10_000)
        frr = np.searchsorted(genuine, grid, side="left") / genuine.size
        far = 1.0 - np.searchsorted(impostor, grid, side="left") / impostor.size
        best = int(np.argmin(np.abs(frr - far)))
        assert equal_error_rate(genuine, impostor) == pytest.approx(0.5 * (frr[best] + far[best]), abs=1e-3)


def _config(tmp_path, name, **model):
    config = copy.deepcopy(DEFAULT_CONFIG)
    config["run"]["output_dir"] = str(tmp_path / name)
    config["model"].update(model)
    config["logging"]["color"] = False
    return config


@pytest.fixture(scope="module")
def sprite_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("sprites")
    dataset = gen_sprites(1000, seed=0)
    config = _config(root, "factorised", variant="dsvae-factorised", dim_f=32, dim_z=8)
    result = train(config, dataset, output_dir=config["run"]["output_dir"], logger=LOGGER)
    classifier = train_classifier(dataset, config["classifier"], seed=0, logger=LOGGER)
    return dataset, result.model, classifier


def test_classifier_separates_held_out_sprites(sprite_run):
    dataset, _, classifier = sprite_run
    assert all(value >= 0.95 for value in classifier_accuracy(classifier, dataset.subset("test")).values())


def test_content_and_dynamics_are_disentangled(sprite_run):
    dataset, model, classifier = sprite_run
    rows, control = table1(model, classifier, dataset.subset("test"), seed=0)
    for row in rows:
        limit = 0.25 if row.category == "action" else 0.20
        assert row.disagreement <= limit, row
    for row in control:
        assert abs(row.agreement - row.chance) <= 0.20, row


def test_content_features_verify_better_than_dynamics(sprite_run):
    dataset, model, _ = sprite_run
    eers = verification_experiment(model, dataset.subset("test"))
    assert eers["f"] + 0.05 < eers["z"]


def test_swapped_sequences_keep_the_first_attributes(sprite_run):
    dataset, model, classifier = sprite_run
    test = dataset.subset("test")
    data = test.sequences()
    matches, total = 0, 0
    for a in range(0, test.num_sequences - 1, 2):
        swapped = swap_features(model, data[a : a + 1], data[a + 1 : a + 2], make_rng(0, "sampling", a))
        predicted = classifier.predict(swapped.frames.reshape(-1, *test.frame_shape))
        for name in ("shape", "color", "size"):
            matches += int(np.sum(predicted[name] == int(test.label(name)[a])))
            total += len(predicted[name])
    assert matches / total >= 0.70


def test_fixed_content_generations_keep_their_attributes(sprite_run):
    dataset, model, classifier = sprite_run
    batch = generate_fixed_f(model, 50, dataset.length, make_rng(0, "sampling"))
    rows = trajectory_export(classifier, batch.frames)
    for name in ("shape", "color", "size"):
        assert constant_fraction(rows, name) >= 0.80


def test_stochastic_dynamics_predict_bouncing_balls_best(tmp_path):
    dataset = gen_bouncing(1000, seed=0, resolution=16)
    models = {}
    for variant, dim_z in (("dsvae-full", 16), ("lstm-f", 64), ("lstm-c", 64)):
        config = _config(tmp_path, variant, variant=variant, dim_z=dim_z, dim_f=16)
        models[variant] = train(config, dataset, output_dir=config["run"]["output_dir"], logger=LOGGER).model
    curves = pixel_error_curve(models, dataset.subset("test"), (10, 15, 20), seed=0)
    stochastic = curves["dsvae-full"][1].as_dict()
    for baseline in ("lstm-f", "lstm-c"):
        deterministic = curves[baseline][1].as_dict()
        for m in (10, 15, 20):
            assert stochastic[m] < deterministic[m], (baseline, m)
