"""Runtime orchestration for dsvae_lab commands."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np

from .config import config_for_checkpoint, write_resolved_config
from .core import GracefulShutdown, OutputWriter, load_checkpoint, make_rng
from .core.output_writer import latent_hash
from .errors import DatasetFormatError, DomainError
from .evaluation import (
    classifier_accuracy,
    constant_fraction,
    load_classifier,
    pixel_error_curve,
    save_classifier,
    table1,
    train_classifier,
    trajectory_export,
    verification_experiment,
)
from .generation import GeneratedBatch, GenerationRequest, impute, run_request, swap_features
from .models import SequenceModel, build_model
from .training import TrainResult, train
from .utils import GENERATORS, DatasetFile, load_dataset, save_dataset

SUITES = ("table1", "verify", "pixel-curve", "trajectory")
STROKE_HEADER = ("dx", "dy", "p1", "p2", "p3")
CLASSIFIER_FILE = "classifier.ckpt"


class DsvaeRuntime:
    """One method per command; every command writes into a single output directory."""

    def __init__(self, config: Dict[str, Any], logger) -> None:
        self.config = config
        self.logger = logger

    @property
    def threads(self) -> int:
        return int(self.config["run"]["threads"])

    @property
    def seed(self) -> int:
        return int(self.config["run"]["seed"])

    def _writer(self, out: str | Path) -> OutputWriter:
        writer = OutputWriter(out, logger=self.logger)
        write_resolved_config(self.config, writer.output_dir)
        return writer

    def _dataset(self, path: str | Path | None = None) -> DatasetFile:
        source = path or self.config["data"]["path"]
        dataset = load_dataset(source)
        self.logger.debug("Loaded dataset %s: %d sequence(s) of shape %s", source, dataset.num_sequences, dataset.frame_shape)
        return dataset

    def load_model(self, checkpoint: str | Path, frame_shape: Sequence[int]) -> SequenceModel:
        model = build_model(self.config["model"], frame_shape)
        state = load_checkpoint(checkpoint, expected=model.parameter_shapes())
        model.load_state_dict(state.params)
        self.logger.info("Loaded %s model from %s (iteration %d)", model.variant, checkpoint, state.iteration)
        return model

    # ------------------------------------------------------------------
    def gen_data(self, kind: str, n: int, seed: int, out: str | Path) -> DatasetFile:
        if kind not in GENERATORS:
            raise DomainError(f"unknown dataset kind {kind!r}; expected one of {sorted(GENERATORS)}")
        data = self.config["data"]
        options: Dict[str, Any] = {"length": int(data["length"])} if data["length"] else {}
        if kind == "bounce":
            options.update(
                resolution=int(data["resolution"]),
                radius=float(data["radius"]),
                speed=float(data["speed"]),
                square_fraction=float(data["square_fraction"]),
            )
        dataset = GENERATORS[kind](n, seed, **options)
        try:
            path = save_dataset(dataset, out)
        except OSError as exc:
            raise DatasetFormatError(out, f"cannot write: {exc.strerror or exc}") from exc
        self.logger.info(
            "Wrote %s dataset %s: B=%d T=%d frame=%s labels=%s",
            kind,
            path,
            dataset.num_sequences,
            dataset.length,
            "x".join(str(dim) for dim in dataset.frame_shape),
            ",".join(dataset.labels) or "-",
        )
        return dataset

    def train(self, *, shutdown: GracefulShutdown | None = None) -> TrainResult:
        output_dir = Path(self.config["run"]["output_dir"])
        write_resolved_config(self.config, output_dir)
        dataset = self._dataset()
        return train(self.config, dataset, output_dir=output_dir, logger=self.logger, shutdown=shutdown)

    def train_classifier(self, dataset_path: str | Path, out: str | Path) -> Path:
        writer = self._writer(out)
        dataset = self._dataset(dataset_path)
        classifier = train_classifier(dataset, self.config["classifier"], seed=self.seed, logger=self.logger)
        path = save_classifier(classifier, writer.path(CLASSIFIER_FILE), seed=self.seed)
        for name, accuracy in classifier_accuracy(classifier, dataset.subset("test")).items():
            self.logger.info("Classifier test accuracy %s: %.3f", name, accuracy)
        self.logger.info("Classifier written to %s", path)
        return path

    # ------------------------------------------------------------------
    def _write_frames(self, writer: OutputWriter, frames: np.ndarray, *, subdir: str = "", first_predicted: int | None = None) -> None:
        """PGM files for image data, one CSV per sequence for pen strokes; plus ``index.csv``."""

        rows: List[Sequence[object]] = []
        prefix = f"{subdir}/" if subdir else ""
        for seq, sequence in enumerate(frames):
            if sequence.ndim == 2:
                name = f"{prefix}seq{seq}.csv"
                writer.write_csv(name, STROKE_HEADER, sequence.tolist())
                files = [name] * len(sequence)
            else:
                files = [str(p.relative_to(writer.output_dir)) for p in writer.write_sequence(sequence, seq_index=seq, subdir=subdir)]
            for t, name in enumerate(files):
                predicted = first_predicted is not None and t >= first_predicted
                rows.append((seq, t, name, int(predicted)))
        writer.write_csv(f"{prefix}index.csv", ("seq", "t", "file", "predicted"), rows)

    def _log_latents(self, batch: GeneratedBatch) -> None:
        for seq in range(batch.count):
            self.logger.info("seq %d: f hash %s", seq, latent_hash(batch.f[seq])[:16])

    def generate(self, checkpoint: str | Path, mode: str, count: int, steps: int, seed: int, out: str | Path, *, randomize: str = "none") -> GeneratedBatch:
        dataset = self._dataset()
        model = self.load_model(checkpoint, dataset.frame_shape)
        request = GenerationRequest(mode=mode, count=count, horizon=steps, seed=seed, randomize=randomize).validate()
        batch = run_request(model, request, [])
        writer = self._writer(out)
        self._write_frames(writer, batch.frames)
        self._log_latents(batch)
        return batch

    def swap(self, checkpoint: str | Path, index_a: int, index_b: int, out: str | Path) -> GeneratedBatch:
        dataset = self._dataset()
        model = self.load_model(checkpoint, dataset.frame_shape)
        pair = dataset.select([index_a, index_b]).sequences()
        batch = swap_features(model, pair[0], pair[1], make_rng(self.seed, "sampling"))
        writer = self._writer(out)
        self._write_frames(writer, pair[:1], subdir="source_a")
        self._write_frames(writer, pair[1:], subdir="source_b")
        self._write_frames(writer, batch.frames, subdir="swapped")
        self._log_latents(batch)
        return batch

    def impute(self, checkpoint: str | Path, t_obs: int, out: str | Path, *, indices: Sequence[int] | None = None) -> GeneratedBatch:
        dataset = self._dataset()
        test = dataset.subset("test") if indices is None else dataset.select(indices)
        model = self.load_model(checkpoint, dataset.frame_shape)
        result = impute(model, test.sequences(), t_obs, make_rng(self.seed, "sampling"))
        writer = self._writer(out)
        self._write_frames(writer, result.frames, first_predicted=result.first_predicted)
        self.logger.info(
            "Imputed %d frame(s) per sequence for %d sequence(s) after observing %d",
            test.length - t_obs,
            test.num_sequences,
            t_obs,
        )
        return result.batch

    def export_frames(self, dataset_path: str | Path, index: int, out: str | Path) -> List[Path]:
        dataset = self._dataset(dataset_path)
        if not 0 <= index < dataset.num_sequences:
            raise DomainError(f"sequence index {index} out of range [0, {dataset.num_sequences})")
        writer = OutputWriter(out, logger=self.logger)
        if len(dataset.frame_shape) != 3:
            raise DomainError("export-frames needs image data; stroke datasets have no frames")
        paths = writer.write_sequence(dataset.payload[index], seq_index=index)
        writer.write_csv(
            "index.csv",
            ("seq", "t", "file", "predicted"),
            [(index, t, path.name, 0) for t, path in enumerate(paths)],
        )
        self.logger.info("Exported %d frame(s) of sequence %d to %s", len(paths), index, writer.output_dir)
        return paths

    # ------------------------------------------------------------------
    def _classifier(self, path: str | Path | None, frame_shape: Sequence[int]):
        source = path or self.config["classifier"]["path"]
        if not source:
            raise DomainError("this suite needs a trained classifier (--classifier)")
        classifier_config = config_for_checkpoint(source)["classifier"]
        return load_classifier(source, frame_shape, classifier_config)

    def evaluate(
        self,
        checkpoints: Sequence[str | Path],
        suite: str,
        out: str | Path,
        *,
        classifier_path: str | Path | None = None,
        m_values: Sequence[int] | None = None,
        runs: int = 50,
    ) -> Dict[str, Any]:
        if suite not in SUITES:
            raise DomainError(f"unknown suite {suite!r}; expected one of {list(SUITES)}")
        if not checkpoints:
            raise DomainError("evaluate needs at least one checkpoint")
        dataset = self._dataset()
        test = dataset.subset("test")
        writer = self._writer(out)
        model = self.load_model(checkpoints[0], dataset.frame_shape)
        results: Dict[str, Any] = {}

        if suite == "table1":
            classifier = self._classifier(classifier_path, dataset.frame_shape)
            rows, control = table1(model, classifier, test, seed=self.seed, threads=self.threads)
            writer.write_csv(
                "table1.csv",
                ("category", "disagreement", "kl_recon", "kl_random"),
                [(row.category, row.disagreement, row.kl_recon, row.kl_random) for row in rows],
            )
            writer.write_csv(
                "control.csv", ("category", "agreement", "chance"), [(row.category, row.agreement, row.chance) for row in control]
            )
            for row in rows:
                self.logger.info("%s: disagreement %.3f kl %.4f (random %.4f)", row.category, row.disagreement, row.kl_recon, row.kl_random)
            results = {"table1": rows, "control": control}
        elif suite == "verify":
            eers = verification_experiment(model, test, threads=self.threads)
            dims = {"f": model.dims.dim_f, "z": model.dims.dim_z}
            writer.write_csv("verify.csv", ("feature", "dim", "eer"), [(name, dims[name], eer) for name, eer in eers.items()])
            self.logger.info("EER mu_f %.4f, mu_z %.4f", eers["f"], eers["z"])
            results = eers
        elif suite == "pixel-curve":
            models = {self._model_name(model, checkpoints[0], 0): model}
            for position, path in enumerate(checkpoints[1:], start=1):
                other = self._model_for(path, dataset.frame_shape)
                models[self._model_name(other, path, position)] = other
            curves = pixel_error_curve(
                models, test, m_values or _default_m_values(test.length), seed=self.seed, threads=self.threads
            )
            writer.write_csv(
                "pixel_curve.csv", ("model", "m", "error"), [(name, m, e) for name, (_, pred) in curves.items() for m, e in pred.points]
            )
            writer.write_csv(
                "pixel_recon.csv", ("model", "m", "error"), [(name, m, e) for name, (rec, _) in curves.items() for m, e in rec.points]
            )
            results = curves
        else:
            classifier = self._classifier(classifier_path, dataset.frame_shape)
            request = GenerationRequest(mode="unconditional", count=runs, horizon=test.length, seed=self.seed).validate()
            batch = run_request(model, request, [])
            rows = trajectory_export(classifier, batch.frames)
            writer.write_csv("trajectory.csv", ("run", "t", "category", "class"), rows)
            results = {name: constant_fraction(rows, name) for name in classifier.categories}
            for name, fraction in results.items():
                self.logger.info("%s constant over t in %.0f%% of runs", name, 100.0 * fraction)
        return results

    def _model_for(self, checkpoint: str | Path, frame_shape: Sequence[int]) -> SequenceModel:
        other = DsvaeRuntime(config_for_checkpoint(checkpoint, overrides=_thread_override(self.config)), self.logger)
        return other.load_model(checkpoint, frame_shape)

    @staticmethod
    def _model_name(model: SequenceModel, checkpoint: str | Path, position: int) -> str:
        return f"{model.variant}@{Path(checkpoint).parent.name or position}"


def _default_m_values(length: int) -> List[int]:
    return [m for m in (1, 2, 5, 10, 15, 20, 25) if m < length]


def _thread_override(config: Mapping[str, Any]) -> Dict[str, Any]:
    return {"run.threads": config["run"]["threads"]}


__all__ = ["SUITES", "DsvaeRuntime"]
