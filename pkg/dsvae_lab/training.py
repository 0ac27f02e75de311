"""ELBO objective, KL warm-up and the optimisation loop."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .core import (
    Adam,
    AdamState,
    CheckpointManager,
    GracefulShutdown,
    MetricSnapshot,
    MetricsManager,
    SystemMonitor,
    load_checkpoint,
    make_rng,
)
from .core.layers import GaussianParams
from .core.tensor import Tensor, exp, stack
from .errors import ConfigError, DomainError, NonFiniteLossError, ShapeError
from .models import DeterministicBaseline, GenerativeModel, SequenceModel, build_model
from .utils.datasets import DatasetFile

WARMUP_MODES = ("auto", "on", "off")


@dataclass
class ElboBreakdown:
    """Batch-averaged ELBO terms; ``loss`` is the differentiable ``-elbo``."""

    recon_loglik: float
    kl_f: float
    kl_z: float
    beta: float
    elbo: float
    loss: Tensor | None = None

    def snapshot(self, iteration: int) -> MetricSnapshot:
        return MetricSnapshot(
            iteration=iteration,
            beta=self.beta,
            recon=self.recon_loglik,
            kl_f=self.kl_f,
            kl_z=self.kl_z,
            elbo=self.elbo,
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    warmup_iters: int
    seed: int
    variant: str
    dataset_path: str
    checkpoint_path: Path
    checkpoint_every: int
    max_iterations: int
    clip_norm: float
    flush_every: int
    monitor_system: bool
    resume: bool

    @classmethod
    def from_config(cls, config: Mapping[str, Any], *, output_dir: str | Path) -> "TrainConfig":
        training = config["training"]
        data_kind = config["data"]["kind"]
        mode = training["warmup"]
        if mode not in WARMUP_MODES:
            raise ConfigError(f"warmup must be one of {list(WARMUP_MODES)}", key="training.warmup")
        if training["warmup_iters"] < 0:
            raise ConfigError("warm-up iterations must be >= 0", key="training.warmup_iters")
        enabled = mode == "on" or (mode == "auto" and data_kind == "strokes")
        checkpoint = training["checkpoint_path"] or str(Path(output_dir) / "model.ckpt")
        return cls(
            epochs=int(training["epochs"]),
            batch_size=int(training["batch_size"]),
            learning_rate=float(training["learning_rate"]),
            warmup_iters=int(training["warmup_iters"]) if enabled else 0,
            seed=int(config["run"]["seed"]),
            variant=str(config["model"]["variant"]),
            dataset_path=str(config["data"]["path"]),
            checkpoint_path=Path(checkpoint),
            checkpoint_every=int(training["checkpoint_every"]),
            max_iterations=int(training["max_iterations"]),
            clip_norm=float(training["clip_norm"]),
            flush_every=int(training["metrics_flush_every"]),
            monitor_system=bool(config["run"]["monitor_system"]),
            resume=bool(training["resume"]),
        )


@dataclass
class TrainResult:
    model: SequenceModel
    checkpoint_path: Path
    iterations: int
    last: ElboBreakdown | None
    interrupted: bool = False


# ----------------------------------------------------------------------
def kl_diag_gaussians(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) between diagonal Gaussians, summed over the last axis.

    Returns one value per row of the batch.
    """

    if q.mean.shape != p.mean.shape or q.logvar.shape != p.logvar.shape:
        raise ShapeError("KL operands differ", q.mean.shape, p.mean.shape)
    ratio = exp(q.logvar - p.logvar)
    mahalanobis = (q.mean - p.mean).square() * exp(-p.logvar)
    return ((ratio + mahalanobis - 1.0 + p.logvar - q.logvar) * 0.5).sum(axis=-1)


def warmup_beta(iteration: int, warmup_iters: int) -> float:
    if iteration < 0:
        raise DomainError(f"iteration must be >= 0, got {iteration}")
    if warmup_iters <= 0:
        return 1.0
    return min(1.0, iteration / warmup_iters)


def _finite(term: str, value: Tensor, iteration: int | None) -> float:
    number = value.item()
    if not math.isfinite(number):
        raise NonFiniteLossError(term, number, iteration=iteration)
    return number


def _reconstruction(generator, params: Tensor, x: Tensor) -> Tensor:
    batch, steps = x.shape[:2]
    flat_params = params.reshape(batch * steps, *params.shape[2:])
    flat_x = x.reshape(batch * steps, *x.shape[2:])
    return generator.log_likelihood(flat_params, flat_x).reshape(batch, steps).sum(axis=1).mean()


def elbo(
    generator: GenerativeModel | DeterministicBaseline,
    encoder,
    batch: np.ndarray | Tensor,
    beta: float,
    rng: np.random.Generator,
    *,
    iteration: int | None = None,
) -> ElboBreakdown:
    """Single-sample reparameterised ELBO estimate for a (B, T, ...) batch."""

    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim < 3 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ShapeError("ELBO needs a non-empty (B, T, ...) batch", x.shape)
    size, steps = x.shape[:2]
    latents = encoder.encode(x, rng)
    kl_f = kl_diag_gaussians(latents.f_params, generator.prior_f(size, like=x)).mean()
    if isinstance(generator, DeterministicBaseline):
        h = generator.baseline_rollout(latents.z, latents.f, steps)
        params = generator.decode_sequence(h, latents.f)
        kl_z = kl_diag_gaussians(latents.z_params, generator.prior_z(size, like=x)).mean()
    else:
        params = generator.decode_sequence(latents.z, latents.f)
        prior, _ = generator.prior_along(latents.z)
        per_step = [kl_diag_gaussians(q, p) for q, p in zip(latents.z_params, prior)]
        kl_z = stack(per_step, axis=1).sum(axis=1).mean()
    recon = _reconstruction(generator, params, x)

    recon_value = _finite("recon", recon, iteration)
    kl_f_value = _finite("kl_f", kl_f, iteration)
    kl_z_value = _finite("kl_z", kl_z, iteration)
    loss = (kl_f + kl_z) * beta - recon
    return ElboBreakdown(
        recon_loglik=recon_value,
        kl_f=kl_f_value,
        kl_z=kl_z_value,
        beta=float(beta),
        elbo=recon_value - float(beta) * (kl_f_value + kl_z_value),
        loss=loss,
    )


def model_elbo(model: SequenceModel, batch, beta: float, rng: np.random.Generator, **kwargs) -> ElboBreakdown:
    return elbo(model.generator, model.encoder, batch, beta, rng, **kwargs)


# ----------------------------------------------------------------------
def _resume_state(model: SequenceModel, state: AdamState, path: Path, seed: int, logger) -> int:
    checkpoint = load_checkpoint(path, expected=model.parameter_shapes())
    if checkpoint.seed != seed:
        raise ConfigError(f"checkpoint seed {checkpoint.seed} differs from run seed {seed}", key="run.seed", source=path)
    model.load_state_dict(checkpoint.params)
    checkpoint.restore_optimizer(state)
    logger.info("Resuming from %s at iteration %d", path, checkpoint.iteration)
    return checkpoint.iteration


def train(
    config: Mapping[str, Any],
    dataset: DatasetFile,
    *,
    output_dir: str | Path,
    logger,
    shutdown: GracefulShutdown | None = None,
) -> TrainResult:
    """Maximise the ELBO with Adam; writes metrics.csv, checkpoints and summary.json."""

    settings = TrainConfig.from_config(config, output_dir=output_dir)
    train_set = dataset.subset("train")
    if train_set.num_sequences == 0:
        raise ShapeError("training split is empty", dataset.payload.shape)
    model = build_model(config["model"], train_set.frame_shape, make_rng(settings.seed, "init"))
    logger.info(
        "Model %s with %d parameters on %d training sequence(s) of shape %s",
        settings.variant,
        model.num_parameters(),
        train_set.num_sequences,
        (train_set.length, *train_set.frame_shape),
    )
    state = AdamState(lr=settings.learning_rate)
    start = 0
    if settings.resume and settings.checkpoint_path.exists():
        start = _resume_state(model, state, settings.checkpoint_path, settings.seed, logger)
    optimizer = Adam(dict(model.named_parameters()), state, clip_norm=settings.clip_norm)

    per_epoch = math.ceil(train_set.num_sequences / settings.batch_size)
    total = settings.epochs * per_epoch
    if settings.max_iterations > 0:
        total = min(total, settings.max_iterations)

    metrics = MetricsManager(
        output_dir,
        flush_every=settings.flush_every,
        include_system=settings.monitor_system,
        logger=logger,
        start_iteration=start,
    )
    checkpoints = CheckpointManager(
        settings.checkpoint_path,
        interval_iterations=settings.checkpoint_every,
        seed=settings.seed,
        logger=logger,
        start_iteration=start,
    )
    monitor = (
        SystemMonitor(interval_iterations=settings.flush_every, metrics=metrics, logger=logger)
        if settings.monitor_system
        else None
    )
    shutdown = shutdown or GracefulShutdown()
    shutdown.install()

    last: ElboBreakdown | None = None
    order_epoch, order = -1, np.empty(0, dtype=np.int64)
    iteration = start
    interrupted = False
    try:
        while iteration < total:
            epoch, step = divmod(iteration, per_epoch)
            if epoch != order_epoch:
                order_epoch, order = epoch, train_set.epoch_order(settings.seed, epoch)
            indices = order[step * settings.batch_size : (step + 1) * settings.batch_size]
            beta = warmup_beta(iteration, settings.warmup_iters)

            optimizer.zero_grads()
            last = model_elbo(
                model,
                train_set.sequences(indices),
                beta,
                make_rng(settings.seed, "sampling", iteration),
                iteration=iteration,
            )
            last.loss.backward()
            optimizer.step()
            metrics.record(last.snapshot(iteration))
            iteration += 1

            if monitor is not None:
                monitor.maybe_sample(iteration)
            if checkpoints.due(iteration):
                metrics.flush()
                checkpoints.force_checkpoint(model.state_dict(), optimizer.state, iteration)
            if shutdown.is_triggered():
                logger.warning("Stop requested; checkpointing at iteration %d", iteration)
                interrupted = True
                break
    finally:
        shutdown.uninstall()
        metrics.flush()

    path = checkpoints.force_checkpoint(model.state_dict(), optimizer.state, iteration)
    metrics.write_summary(
        Path(output_dir) / "summary.json",
        extra={
            "variant": settings.variant,
            "iterations": iteration,
            "interrupted": interrupted,
            "checkpoint": str(path),
        },
    )
    logger.info("Training finished after %d iteration(s); checkpoint %s", iteration, path)
    return TrainResult(model=model, checkpoint_path=path, iterations=iteration, last=last, interrupted=interrupted)


__all__ = [
    "ElboBreakdown",
    "TrainConfig",
    "TrainResult",
    "elbo",
    "kl_diag_gaussians",
    "model_elbo",
    "train",
    "warmup_beta",
]
