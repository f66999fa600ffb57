"""Training loop, train/test split and evaluation metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateCorpus
from ..ingest import windows as corpus_windows
from .model import BiLstmModel, DetectorConfig, loss_and_gradients, predict_proba


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> ConfusionMatrix:
        t = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def accuracy(self):
        return _ratio(self.tp + self.tn, self.total)

    def precision(self):
        return _ratio(self.tp, self.tp + self.fp)

    def recall(self):
        return _ratio(self.tp, self.tp + self.fn)

    def metrics(self) -> dict:
        """None marks a metric whose denominator is zero."""
        return {"accuracy": self.accuracy(), "precision": self.precision(), "recall": self.recall()}


def _ratio(num: int, den: int):
    return None if den == 0 else num / den


@dataclass
class TrainLog:
    epoch_loss: list

    @property
    def final_loss(self) -> float:
        return self.epoch_loss[-1] if self.epoch_loss else float("nan")


def split_meters(n_meters: int, seed: int, train_fraction: float = 0.7):
    """Seeded meter-level split; returns sorted (train, test) index arrays."""
    order = np.random.default_rng([seed, 70]).permutation(n_meters)
    cut = int(round(train_fraction * n_meters))
    return np.sort(order[:cut]), np.sort(order[cut:])


def fit(model: BiLstmModel, X: np.ndarray, y: np.ndarray, config: DetectorConfig | None = None) -> TrainLog:
    """Minibatch SGD with momentum on already-normalized windows; updates ``model`` in place."""
    config = config or model.config
    rng = np.random.default_rng([config.seed, 1])
    params = model.params()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    losses = []
    n = len(y)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss, grads = loss_and_gradients(model, X[idx], y[idx])
            total += loss * len(idx)
            for k, g in grads.items():
                v = velocity[k]
                v *= config.momentum
                v -= config.learning_rate * g
                params[k] += v
        losses.append(total / n)
    return TrainLog(losses)


def train(corpus: list, config: DetectorConfig = DetectorConfig(), log: list | None = None) -> BiLstmModel:
    """Train on every window of ``corpus`` (a list of MeterSeries).

    Normalization is one z-score over all training readings, so absolute
    consumption level stays visible to the model.
    """
    X, y, _ = corpus_windows(corpus, config.window_len)
    if len(y) == 0 or y.min() == y.max():
        raise DegenerateCorpus("training windows must include both normal and malicious labels")
    model = BiLstmModel.initial(config)
    model.norm_mean = float(X.mean())
    model.norm_std = float(X.std()) or 1.0
    result = fit(model, model.normalize(X)[..., None], y.astype(np.float64), config)
    if log is not None:
        log.extend(result.epoch_loss)
    return model


def predict(model: BiLstmModel, X: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Malicious iff p > threshold, so p == threshold is called normal."""
    if len(X) == 0:
        return np.zeros(0, dtype=bool)
    return predict_proba(model, X) > threshold


def evaluate(model: BiLstmModel, corpus: list, threshold: float = 0.5):
    X, y, _ = corpus_windows(corpus, model.config.window_len)
    if len(y) == 0:
        raise ValueError("evaluation corpus has no complete windows")
    cm = ConfusionMatrix.from_predictions(y, predict(model, X, threshold))
    return cm, cm.metrics()


def format_metric(value) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def write_metrics(rows: list, path) -> None:
    """rows: (split name, ConfusionMatrix) pairs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "accuracy", "precision", "recall", "tp", "tn", "fp", "fn"])
        for split, cm in rows:
            m = cm.metrics()
            w.writerow([split, format_metric(m["accuracy"]), format_metric(m["precision"]),
                        format_metric(m["recall"]), cm.tp, cm.tn, cm.fp, cm.fn])
