"""Disentanglement metrics, verification EER and imputation error curves."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from .core import Adam, AdamState, Checkpoint, WorkerPool, load_checkpoint, make_rng, save_checkpoint
from .core.layers import Linear, Module, init_params
from .core.tensor import Tensor, log_softmax, no_grad
from .errors import CheckpointFormatError, DomainError, ShapeError
from .generation import impute, reconstruct
from .models import ModelDims, SequenceModel
from .models.dsvae import FeatureNet
from .utils.datasets import DatasetFile

KL_EPS = 1e-8
NORMALISATION_TOL = 1e-4
BINARY_THRESHOLD = 0.5
IGNORED_LABELS = ("split", "content")
ATTRIBUTE_RANDOMIZE = "z"
ACTION_CATEGORY = "action"
DEFAULT_M_VALUES = (1, 2, 5, 10, 15, 20, 25)
CHUNK = 32


# ----------------------------------------------------------------------
class FrameClassifier(Module):
    """Shared per-frame features with one softmax head per label category."""

    def __init__(
        self,
        frame_shape: Sequence[int],
        categories: Sequence[str],
        classes: Sequence[int],
        *,
        hidden: int = 64,
        channels: int = 16,
        conv_layers: int = 2,
    ) -> None:
        if len(categories) != len(classes) or not categories:
            raise DomainError("classifier needs at least one category with a class count")
        self.frame_shape = tuple(frame_shape)
        self.categories = tuple(categories)
        self.classes = tuple(int(count) for count in classes)
        dims = ModelDims(frame_shape=self.frame_shape, hidden=hidden, feature_dim=hidden, channels=channels, conv_layers=conv_layers)
        self.features = FeatureNet(dims)
        self.heads = [Linear(hidden, count) for count in self.classes]

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        yield from self.features.named_parameters(prefix + "features.")
        for name, head in zip(self.categories, self.heads):
            yield from head.named_parameters(f"{prefix}head.{name}.")

    def logits(self, frames: Tensor) -> Dict[str, Tensor]:
        hidden = self.features(frames)
        return {name: head(hidden) for name, head in zip(self.categories, self.heads)}

    def predict_proba(self, frames: np.ndarray) -> Dict[str, np.ndarray]:
        """Class probabilities for (N, *frame); each row sums to 1."""

        data = np.asarray(frames)
        if tuple(data.shape[1:]) != self.frame_shape:
            raise ShapeError("frames do not match the classifier", data.shape, self.frame_shape)
        with no_grad():
            logits = self.logits(Tensor(data))
        out = {}
        for name, value in logits.items():
            shifted = value.data.astype(np.float64) - value.data.max(axis=1, keepdims=True)
            probs = np.exp(shifted)
            out[name] = probs / probs.sum(axis=1, keepdims=True)
        return out

    def predict(self, frames: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: np.argmax(probs, axis=1) for name, probs in self.predict_proba(frames).items()}


def _frame_labels(dataset: DatasetFile, categories: Sequence[str]) -> Dict[str, np.ndarray]:
    return {name: np.repeat(dataset.label(name).astype(np.int64), dataset.length) for name in categories}


def label_categories(dataset: DatasetFile) -> List[str]:
    return [name for name in dataset.labels if name not in IGNORED_LABELS]


def train_classifier(
    dataset: DatasetFile,
    classifier_config: Mapping[str, Any],
    *,
    seed: int,
    logger,
    categories: Sequence[str] | None = None,
) -> FrameClassifier:
    """Cross-entropy training on individually labelled frames of the train split."""

    names = list(categories) if categories is not None else label_categories(dataset)
    if not names:
        raise DomainError("dataset carries no labels to train a classifier on")
    for name in names:
        dataset.label(name)
    classes = [int(dataset.label(name).max()) + 1 for name in names]
    train_set = dataset.subset("train")
    frames = train_set.sequences().reshape(-1, *train_set.frame_shape)
    labels = _frame_labels(train_set, names)
    model = FrameClassifier(
        train_set.frame_shape,
        names,
        classes,
        hidden=int(classifier_config["hidden"]),
        channels=int(classifier_config["channels"]),
        conv_layers=int(classifier_config["conv_layers"]),
    )
    init_params(model, make_rng(seed, "classifier"))
    optimizer = Adam(dict(model.named_parameters()), AdamState(lr=float(classifier_config["learning_rate"])))
    batch_size = int(classifier_config["batch_size"])
    for epoch in range(int(classifier_config["epochs"])):
        order = make_rng(seed, "classifier", epoch).permutation(len(frames))
        total = 0.0
        for start in range(0, len(order), batch_size):
            index = order[start : start + batch_size]
            optimizer.zero_grads()
            logits = model.logits(Tensor(frames[index]))
            rows = np.arange(len(index))
            loss = None
            for name in names:
                term = -log_softmax(logits[name], axis=1)[rows, labels[name][index]].mean()
                loss = term if loss is None else loss + term
            loss.backward()
            optimizer.step()
            total += loss.item() * len(index)
        logger.info("classifier epoch %d: cross-entropy %.4f", epoch + 1, total / max(1, len(order)))
    return model


def classifier_accuracy(classifier: FrameClassifier, dataset: DatasetFile) -> Dict[str, float]:
    frames = dataset.sequences().reshape(-1, *dataset.frame_shape)
    labels = _frame_labels(dataset, classifier.categories)
    predicted = classifier.predict(frames)
    return {name: float(np.mean(predicted[name] == labels[name])) for name in classifier.categories}


def save_classifier(classifier: FrameClassifier, path: str | Path, *, seed: int = 0) -> Path:
    return save_checkpoint(Checkpoint(params=classifier.state_dict(), seed=seed), path)


def load_classifier(path: str | Path, frame_shape: Sequence[int], classifier_config: Mapping[str, Any]) -> FrameClassifier:
    """Rebuild a classifier; categories and class counts come from the head tensor names."""

    checkpoint = load_checkpoint(path)
    categories: List[str] = []
    classes: List[int] = []
    for name, value in checkpoint.params.items():
        if name.startswith("head.") and name.endswith(".weight"):
            categories.append(name[len("head.") : -len(".weight")])
            classes.append(int(value.shape[0]))
    if not categories:
        raise CheckpointFormatError(path, "no classifier heads found")
    classifier = FrameClassifier(
        frame_shape,
        categories,
        classes,
        hidden=int(classifier_config["hidden"]),
        channels=int(classifier_config["channels"]),
        conv_layers=int(classifier_config["conv_layers"]),
    )
    checkpoint.check_against({key: param.shape for key, param in classifier.named_parameters()}, path)
    classifier.load_state_dict(checkpoint.params)
    return classifier


# ----------------------------------------------------------------------
def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    left, right = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if left.ndim != 2 or left.shape != right.shape:
        raise ShapeError("probability lists differ", left.shape, right.shape)
    return left, right


def _check_distributions(p: np.ndarray) -> None:
    if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=1) - 1.0) > NORMALISATION_TOL):
        raise DomainError(f"probability vectors must be non-negative and sum to 1 within {NORMALISATION_TOL}")


def disagreement(p_data: np.ndarray, p_recon: np.ndarray) -> float:
    """Fraction of pairs whose argmax labels differ; ties go to the lowest index."""

    data, recon = _check_pair(p_data, p_recon)
    if len(data) == 0:
        raise DomainError("no predictions to compare")
    return float(np.mean(np.argmax(data, axis=1) != np.argmax(recon, axis=1)))


def kl_metric(p_recon: np.ndarray, p_data: np.ndarray) -> float:
    """Mean KL[p_recon || p_data] with ``KL_EPS`` inside the logarithms."""

    recon, data = _check_pair(p_recon, p_data)
    _check_distributions(recon)
    _check_distributions(data)
    per_frame = np.sum(recon * (np.log(recon + KL_EPS) - np.log(data + KL_EPS)), axis=1)
    return float(np.mean(per_frame))


def kl_random_baseline(p_data: np.ndarray, n_class: int) -> float:
    data = np.asarray(p_data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != n_class:
        raise ShapeError("p_data does not have n_class columns", data.shape)
    return kl_metric(np.full_like(data, 1.0 / n_class), data)


# ----------------------------------------------------------------------
@dataclass
class VerificationFeatures:
    mu_f: np.ndarray
    mu_z: np.ndarray


def posterior_means(model: SequenceModel, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means of f (N, dim_f) and z ((N, T, dim_z) or (N, dim_z) for baselines)."""

    with no_grad():
        latents = model.encoder.encode(Tensor(x), None, sample=False)
    f = latents.f_params.mean.data.astype(np.float64)
    if model.is_baseline:
        return f, latents.z_params.mean.data.astype(np.float64)
    return f, np.stack([params.mean.data for params in latents.z_params], axis=1).astype(np.float64)


def extract_features(model: SequenceModel, segments: np.ndarray) -> VerificationFeatures:
    """Average posterior means over segments (f) and over segments and time (z)."""

    data = np.asarray(segments)
    if data.ndim < 3 or len(data) == 0:
        raise DomainError("extract_features needs at least one segment")
    f, z = posterior_means(model, data)
    return VerificationFeatures(mu_f=f.mean(axis=0), mu_z=z.reshape(-1, z.shape[-1]).mean(axis=0))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    a, b = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("cosine operands differ", a.shape, b.shape)
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        raise DomainError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / norm, -1.0, 1.0))


def equal_error_rate(genuine: Sequence[float], impostor: Sequence[float]) -> float:
    """Operating point where FRR(t) = fraction genuine < t meets FAR(t) = fraction impostor >= t.

    Thresholds are the distinct scores plus one above the maximum; the
    crossing is interpolated linearly between the two bracketing thresholds.
    """

    g = np.sort(np.asarray(genuine, dtype=np.float64))
    i = np.sort(np.asarray(impostor, dtype=np.float64))
    if g.size == 0 or i.size == 0:
        raise DomainError("equal_error_rate needs genuine and impostor scores")
    scores = np.unique(np.concatenate([g, i]))
    thresholds = np.append(scores, scores[-1] + 1.0)
    frr = np.searchsorted(g, thresholds, side="left") / g.size
    far = 1.0 - np.searchsorted(i, thresholds, side="left") / i.size
    gap = frr - far
    k = int(np.argmax(gap >= 0.0))
    if gap[k] == 0.0 or k == 0:
        return float(frr[k])
    weight = -gap[k - 1] / (gap[k] - gap[k - 1])
    return float(frr[k - 1] + weight * (frr[k] - frr[k - 1]))


def _pair_scores(features: np.ndarray, identities: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("cosine similarity is undefined for a zero feature vector")
    unit = features / norms[:, None]
    similarity = np.clip(unit @ unit.T, -1.0, 1.0)
    upper = np.triu_indices(len(features), k=1)
    same = identities[upper[0]] == identities[upper[1]]
    scores = similarity[upper]
    return scores[same], scores[~same]


def _chunks(count: int) -> List[np.ndarray]:
    return [np.arange(start, min(count, start + CHUNK)) for start in range(0, count, CHUNK)]


def verification_experiment(
    model: SequenceModel, dataset: DatasetFile, *, identity: str = "content", threads: int = 1
) -> Dict[str, float]:
    """EER of cosine scoring on all sequence pairs, once with mu_f and once with mu_z."""

    identities = dataset.label(identity)
    if len(np.unique(identities)) < 2:
        raise DomainError("verification needs at least two identities")
    data = dataset.sequences()

    def work(_: int, index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        f, z = posterior_means(model, data[index])
        return f, z.reshape(len(index), -1, z.shape[-1]).mean(axis=1)

    parts = WorkerPool(threads).map(work, _chunks(len(data)))
    mu_f = np.concatenate([part[0] for part in parts])
    mu_z = np.concatenate([part[1] for part in parts])
    return {
        "f": equal_error_rate(*_pair_scores(mu_f, identities)),
        "z": equal_error_rate(*_pair_scores(mu_z, identities)),
    }


# ----------------------------------------------------------------------
@dataclass
class ErrorCurve:
    points: List[Tuple[int, float]] = field(default_factory=list)

    def add(self, m: int, error: float) -> None:
        if not 0.0 <= error <= 1.0:
            raise DomainError(f"error fraction {error} outside [0, 1]")
        self.points.append((int(m), float(error)))

    def as_dict(self) -> Dict[int, float]:
        return dict(self.points)


def incorrect_pixel_fraction(predicted: np.ndarray, truth: np.ndarray) -> float:
    if predicted.shape != truth.shape:
        raise ShapeError("prediction and truth differ", predicted.shape, truth.shape)
    return float(np.mean((predicted > BINARY_THRESHOLD) != (truth > BINARY_THRESHOLD)))


def imputation_errors(
    model: SequenceModel, data: np.ndarray, m: int, *, seed: int, threads: int = 1
) -> Tuple[float, float]:
    """Mean incorrect-pixel fraction over (observed prefix, predicted suffix) for m missing frames."""

    steps = data.shape[1]
    if not 1 <= m < steps:
        raise DomainError(f"missing-frame count must satisfy 1 <= m < T={steps}, got {m}")
    t_obs = steps - m

    def work(chunk: int, index: np.ndarray) -> Tuple[float, float]:
        result = impute(model, data[index], t_obs, make_rng(seed, "eval", m, chunk))
        truth = data[index]
        recon = np.sum((result.frames[:, :t_obs] > BINARY_THRESHOLD) != (truth[:, :t_obs] > BINARY_THRESHOLD))
        pred = np.sum((result.predicted > BINARY_THRESHOLD) != (truth[:, t_obs:] > BINARY_THRESHOLD))
        return float(recon), float(pred)

    parts = WorkerPool(threads).map(work, _chunks(len(data)))
    frame_pixels = int(np.prod(data.shape[2:]))
    recon_total = sum(part[0] for part in parts) / (len(data) * t_obs * frame_pixels)
    pred_total = sum(part[1] for part in parts) / (len(data) * m * frame_pixels)
    return recon_total, pred_total


def pixel_error_curve(
    models: Mapping[str, SequenceModel],
    dataset: DatasetFile,
    m_values: Sequence[int] = DEFAULT_M_VALUES,
    *,
    seed: int = 0,
    threads: int = 1,
) -> Dict[str, Tuple[ErrorCurve, ErrorCurve]]:
    """Per model: (reconstruction curve over the prefix, prediction curve over the m imputed frames)."""

    data = dataset.sequences()
    curves: Dict[str, Tuple[ErrorCurve, ErrorCurve]] = {}
    for name, model in models.items():
        if model.head.name != "bernoulli":
            raise DomainError(f"pixel error curves need a bernoulli head; {name} uses {model.head.name}")
        recon_curve, pred_curve = ErrorCurve(), ErrorCurve()
        for m in m_values:
            recon, pred = imputation_errors(model, data, m, seed=seed, threads=threads)
            recon_curve.add(m, recon)
            pred_curve.add(m, pred)
        curves[name] = (recon_curve, pred_curve)
    return curves


# ----------------------------------------------------------------------
@dataclass
class Table1Row:
    category: str
    disagreement: float
    kl_recon: float
    kl_random: float


@dataclass
class ControlRow:
    category: str
    agreement: float
    chance: float


def _frames(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, *x.shape[2:])


def _reconstructions(model: SequenceModel, data: np.ndarray, randomize: str, *, seed: int, threads: int) -> np.ndarray:
    def work(chunk: int, index: np.ndarray) -> np.ndarray:
        rng = make_rng(seed, "eval", ord(randomize), chunk)
        return reconstruct(model, data[index], randomize, rng).frames

    return np.concatenate(WorkerPool(threads).map(work, _chunks(len(data))))


def table1(
    model: SequenceModel,
    classifier: FrameClassifier,
    dataset: DatasetFile,
    *,
    seed: int = 0,
    threads: int = 1,
) -> Tuple[List[Table1Row], List[ControlRow]]:
    """Attribute rows use encoded f with random z; the action row uses random f with encoded z.

    The control rows report how often random-f reconstructions keep the
    source attributes, next to chance level.
    """

    data = dataset.sequences()
    p_data = classifier.predict_proba(_frames(data))
    random_z = classifier.predict_proba(_frames(_reconstructions(model, data, "z", seed=seed, threads=threads)))
    random_f = classifier.predict_proba(_frames(_reconstructions(model, data, "f", seed=seed, threads=threads)))
    rows: List[Table1Row] = []
    control: List[ControlRow] = []
    for name, classes in zip(classifier.categories, classifier.classes):
        recon = random_f[name] if name == ACTION_CATEGORY else random_z[name]
        rows.append(
            Table1Row(
                category=name,
                disagreement=disagreement(p_data[name], recon),
                kl_recon=kl_metric(recon, p_data[name]),
                kl_random=kl_random_baseline(p_data[name], classes),
            )
        )
        if name != ACTION_CATEGORY:
            control.append(
                ControlRow(category=name, agreement=1.0 - disagreement(p_data[name], random_f[name]), chance=1.0 / classes)
            )
    return rows, control


def trajectory_export(classifier: FrameClassifier, sequences: np.ndarray) -> List[Tuple[int, int, str, int]]:
    """Rows (run, t, category, class id) for every frame of every run."""

    data = np.asarray(sequences)
    runs, steps = data.shape[:2]
    predicted = classifier.predict(_frames(data))
    rows = []
    for run in range(runs):
        for t in range(steps):
            for name in classifier.categories:
                rows.append((run, t, name, int(predicted[name][run * steps + t])))
    return rows


def constant_fraction(rows: Sequence[Tuple[int, int, str, int]], category: str) -> float:
    """Fraction of runs whose predicted class for ``category`` never changes over t."""

    seen: Dict[int, set] = {}
    for run, _, name, label in rows:
        if name == category:
            seen.setdefault(run, set()).add(label)
    if not seen:
        raise DomainError(f"no rows for category {category!r}")
    return sum(len(labels) == 1 for labels in seen.values()) / len(seen)


__all__ = [
    "ControlRow",
    "ErrorCurve",
    "FrameClassifier",
    "Table1Row",
    "VerificationFeatures",
    "classifier_accuracy",
    "constant_fraction",
    "cosine",
    "disagreement",
    "equal_error_rate",
    "extract_features",
    "imputation_errors",
    "incorrect_pixel_fraction",
    "kl_metric",
    "kl_random_baseline",
    "label_categories",
    "load_classifier",
    "pixel_error_curve",
    "posterior_means",
    "save_classifier",
    "table1",
    "train_classifier",
    "trajectory_export",
    "verification_experiment",
]
