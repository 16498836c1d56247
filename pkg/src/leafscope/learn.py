"""Feature fusion and a one-vs-rest linear SVM trained by minibatch SGD.

The optimizer is plain momentum SGD with L2 weight decay and a step
learning-rate schedule::

    V <- mu * V - lr * (grad + decay * W)
    W <- W + V
    lr = base_lr * gamma ** (t // step)
"""
from __future__ import annotations

import logging
import os
from decimal import Decimal
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MODEL_HEADER = "leafscope-model v1"


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-4
    gamma: float = 0.1
    step: int = 20000
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 50
    max_iterations: int = 50000
    rng_seed: int = 0
    hinge_margin: float = 1.0
    c_positive_weight: float = 1.0

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.step < 1:
            raise ValueError("step must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, floor: float = 1e-8) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), floor))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


@dataclass
class LinearModel:
    class_labels: list[str]
    # (n_classes, feature_dim + 1), bias in the last column
    weights: np.ndarray
    standardizer: Standardizer

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1] - 1

    def decision(self, x: np.ndarray) -> np.ndarray:
        """Class scores for one vector or a row-stacked batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.feature_dim:
            raise ValueError(
                f"dimension mismatch: input has {x.shape[-1]} features, model expects {self.feature_dim}"
            )
        return with_bias(self.standardizer.transform(x)) @ self.weights.T


@dataclass
class OptimizerState:
    weights: np.ndarray
    velocity: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "OptimizerState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


@dataclass
class Metrics:
    top1: float
    top5: float
    labels: list[str]
    confusion: np.ndarray
    unseen: list[str] = field(default_factory=list)

    def per_class_accuracy(self) -> dict[str, float]:
        out = {}
        for i, label in enumerate(self.labels):
            total = self.confusion[i].sum()
            if total:
                hit = self.confusion[i, i] if i < self.confusion.shape[1] else 0
                out[label] = float(hit / total)
        return out


def fuse(deep: np.ndarray | None, hcf: np.ndarray) -> np.ndarray:
    """Unweighted concatenation ``[deep, hcf]``; ``deep`` may be empty or None."""
    hcf = np.asarray(hcf, dtype=np.float64)
    if deep is None:
        return hcf.copy()
    return np.concatenate([np.asarray(deep, dtype=np.float64), hcf], axis=-1)


def lr_at(t: int, cfg: TrainConfig) -> float:
    """Step schedule: the base rate for ``t < step``, then one ``gamma`` drop per ``step``."""
    if t < 0:
        raise ValueError("iteration must be >= 0")
    # decimal product of the configured values, rounded once: 1e-4 * 0.1**2 is exactly 1e-6
    return float(Decimal(repr(cfg.base_lr)) * Decimal(repr(cfg.gamma)) ** (t // cfg.step))


def with_bias(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def one_vs_rest_targets(y: Sequence[int], n_classes: int) -> np.ndarray:
    out = -np.ones((len(y), n_classes))
    out[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
    return out


def minibatch_loss(
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    margin: float = 1.0,
    positive_weight: float = 1.0,
) -> tuple[np.ndarray | float, np.ndarray]:
    """Mean hinge loss and sub-gradient over a batch.

    ``w`` is ``(D+1,)`` for one binary problem or ``(C, D+1)`` for C
    one-vs-rest problems; ``x`` is ``(N, D+1)`` with the bias column
    appended; ``y`` holds +/-1 targets shaped ``(N,)`` or ``(N, C)``.
    The loss comes back per problem.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    single = w.ndim == 1
    w2 = w[None, :] if single else w
    y2 = y[:, None] if y.ndim == 1 else y
    if x.ndim != 2 or x.shape[1] != w2.shape[1]:
        raise ValueError(f"dimension mismatch: samples {x.shape}, weights {w.shape}")
    if y2.shape != (x.shape[0], w2.shape[0]):
        raise ValueError(f"dimension mismatch: targets {y.shape} for {x.shape[0]} samples, {w2.shape[0]} problems")
    n = x.shape[0]
    slack = margin - y2 * (x @ w2.T)
    weight = np.where(y2 > 0, positive_weight, 1.0)
    active = (slack > 0) * weight
    loss = (np.maximum(slack, 0.0) * weight).sum(axis=0) / n
    grad = -((active * y2).T @ x) / n
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def sgd_step(state: OptimizerState, grad: np.ndarray, cfg: TrainConfig) -> OptimizerState:
    """One momentum update at the state's iteration ``t``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.weights.shape:
        raise ValueError(f"gradient shape {grad.shape} != weight shape {state.weights.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient at iteration {state.t}")
    lr = lr_at(state.t, cfg)
    v = cfg.momentum * state.velocity - lr * (grad + cfg.weight_decay * state.weights)
    return OptimizerState(state.weights + v, v, state.t + 1)


def _canonical_order(x: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    # sort by label, then by feature values, so input order cannot leak into training
    keys = [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    label_rank = np.unique(np.asarray(labels), return_inverse=True)[1]
    return np.lexsort(keys + [label_rank])


def train_ovr_svm(
    x: np.ndarray,
    labels: Sequence[str],
    cfg: TrainConfig | None = None,
    history: list | None = None,
) -> LinearModel:
    """Fit one hinge-loss linear classifier per class with a shared SGD schedule.

    Samples are put into a canonical order before seeded per-epoch
    shuffling, so the model depends on the sample set, not its order.
    ``history`` (if given) receives ``(epoch, mean_loss, lr)`` tuples.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(x, dtype=np.float64)
    labels = [str(s) for s in labels]
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("training set is empty")
    if len(labels) != len(x):
        raise ValueError(f"{len(x)} samples but {len(labels)} labels")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")

    order = _canonical_order(x, labels)
    x = x[order]
    labels = [labels[i] for i in order]

    scaler = Standardizer.fit(x)
    xb = with_bias(scaler.transform(x))
    index = {c: i for i, c in enumerate(classes)}
    y = one_vs_rest_targets([index[s] for s in labels], len(classes))

    rng = np.random.default_rng(cfg.rng_seed)
    state = OptimizerState.zeros((len(classes), xb.shape[1]))
    n = len(xb)
    epoch = 0
    while state.t < cfg.max_iterations:
        perm = rng.permutation(n)
        losses = []
        lr_start = lr_at(state.t, cfg)
        for lo in range(0, n, cfg.batch_size):
            if state.t >= cfg.max_iterations:
                break
            batch = perm[lo : lo + cfg.batch_size]
            loss, grad = minibatch_loss(
                state.weights, xb[batch], y[batch], cfg.hinge_margin, cfg.c_positive_weight
            )
            losses.append(float(loss.sum()))
            lr_before = lr_at(state.t, cfg)
            state = sgd_step(state, grad, cfg)
            if state.t < cfg.max_iterations and lr_at(state.t, cfg) != lr_before:
                log.info("iteration %d: learning rate %.3g -> %.3g", state.t, lr_before, lr_at(state.t, cfg))
        mean_loss = float(np.mean(losses))
        if history is not None:
            history.append((epoch, mean_loss, lr_start))
        log.debug("epoch %d: mean loss %.6g (lr %.3g)", epoch, mean_loss, lr_start)
        epoch += 1
    return LinearModel(classes, state.weights, scaler)


@dataclass(frozen=True)
class Prediction:
    ranked: list[tuple[str, float]]

    @property
    def top(self) -> str:
        return self.ranked[0][0]


def rank_scores(labels: Sequence[str], scores: np.ndarray) -> list[tuple[str, float]]:
    return sorted(zip(labels, (float(s) for s in scores)), key=lambda p: (-p[1], p[0]))


def predict_topk(model: LinearModel, x: np.ndarray, k: int = 5) -> Prediction:
    """Top ``k`` classes by decision score; equal scores rank by label."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_topk takes a single feature vector")
    ranked = rank_scores(model.class_labels, model.decision(x))
    return Prediction(ranked[: max(k, 0)])


def evaluate(model: LinearModel, x: np.ndarray, labels: Sequence[str]) -> Metrics:
    """Top-1/top-5 accuracy and a confusion matrix indexed ``[true][predicted]``.

    Rows cover the model's classes followed by any test labels the model has
    never seen; those samples always count as errors.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = [str(s) for s in labels]
    if len(labels) == 0:
        raise ValueError("test set is empty")
    known = list(model.class_labels)
    unseen = sorted(set(labels) - set(known))
    for u in unseen:
        log.warning("label %r not known to the model; its samples count as errors", u)
    rows = known + unseen
    row_of = {c: i for i, c in enumerate(rows)}
    confusion = np.zeros((len(rows), len(known)), dtype=np.int64)
    scores = model.decision(x.reshape(len(labels), -1))
    hit1 = hit5 = 0
    for truth, s in zip(labels, scores):
        ranked = [c for c, _ in rank_scores(known, s)]
        confusion[row_of[truth], known.index(ranked[0])] += 1
        hit1 += ranked[0] == truth
        hit5 += truth in ranked[:5]
    n = len(labels)
    return Metrics(hit1 / n, hit5 / n, rows, confusion, unseen)


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in values)


def dumps_model(model: LinearModel) -> str:
    lines = [
        MODEL_HEADER,
        str(model.feature_dim),
        str(len(model.class_labels)),
        *model.class_labels,
        _fmt(model.standardizer.mean),
        _fmt(model.standardizer.scale),
        *(_fmt(row) for row in model.weights),
    ]
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> LinearModel:
    lines = text.splitlines()

    def floats(line: str, expect: int, what: str) -> np.ndarray:
        parts = line.split()
        if len(parts) != expect:
            raise ValueError(f"model file: {what} has {len(parts)} values, expected {expect}")
        return np.array([float(p) for p in parts])

    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ValueError(f"model file: missing header {MODEL_HEADER!r}")
    try:
        dim, count = int(lines[1]), int(lines[2])
        labels = lines[3 : 3 + count]
        body = lines[3 + count :]
    except (IndexError, ValueError) as exc:
        raise ValueError(f"model file: malformed preamble ({exc})") from exc
    if len(labels) != count or len(body) != 2 + count:
        raise ValueError("model file: truncated")
    mean = floats(body[0], dim, "standardizer mean")
    scale = floats(body[1], dim, "standardizer scale")
    weights = np.stack([floats(row, dim + 1, f"weights of {labels[i]!r}") for i, row in enumerate(body[2:])])
    return LinearModel(list(labels), weights, Standardizer(mean, scale))


def save_model(model: LinearModel, path: str | os.PathLike) -> None:
    from leafscope.corpus import atomic_write_text

    atomic_write_text(path, dumps_model(model))


def load_model(path: str | os.PathLike) -> LinearModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
