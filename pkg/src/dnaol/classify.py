"""Test-phase inference and accuracy metrics.

Per-class models score a query by its reconstruction residual under each
class model (lowest wins); the shared model scores by the linear classifier
output (highest wins). Ties always go to the smallest class index.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from functools import singledispatch

import numpy as np

from .nacm import extract_features
from .train import NonSepModel, SepModel

# Reported overall accuracies (%) on the original image benchmarks, kept
# for display next to desk-scale results. Not reproducible here.
REFERENCE_ACCURACY = {
    "sep": {"E-YaleB": 97.9, "AR": 98.5, "Caltech101": 71.8, "15-scene": 98.2},
    "nonsep": {"E-YaleB": 97.8, "AR": 98.6, "Caltech101": 73.1, "15-scene": 97.9},
}


@dataclass(frozen=True)
class Prediction:
    label: int
    scores: np.ndarray


def _check_query(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"query must be a vector of length {n}, got shape {x.shape}")
    return x


def sep_scores(model: SepModel, x):
    x = _check_query(x, model.models[0].n)
    scores = np.empty(model.n_classes)
    for c, (m, W) in enumerate(zip(model.models, model.weights)):
        r = x - W @ extract_features(m, x)
        scores[c] = r @ r
    return scores


def classify_sep(model: SepModel, x) -> Prediction:
    scores = sep_scores(model, x)
    return Prediction(int(np.argmin(scores)), scores)


def classify_nonsep(model: NonSepModel, x) -> Prediction:
    x = _check_query(x, model.model.n)
    scores = model.W @ extract_features(model.model, x)
    return Prediction(int(np.argmax(scores)), scores)


@singledispatch
def classify(model, x) -> Prediction:
    raise TypeError(f"no classifier registered for {type(model).__name__}")


classify.register(SepModel, classify_sep)
classify.register(NonSepModel, classify_nonsep)


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    mean_query_seconds: float
    predictions: list

    def summary(self):
        lines = [f"overall accuracy: {self.accuracy:.4f}"]
        for c, a in enumerate(self.per_class):
            lines.append(f"  class {c}: {a:.4f}")
        lines.append(f"mean per-query time: {self.mean_query_seconds * 1e6:.1f} us")
        return "\n".join(lines)


def evaluate(model, X_test, y_test, n_classes=None) -> EvalReport:
    """Accuracy, per-class accuracy, confusion matrix and per-query time.

    Only the ``classify`` call is timed. Confusion rows are true classes.
    """
    X_test = np.asarray(X_test, dtype=float)
    y_test = np.asarray(y_test, dtype=int)
    if y_test.size == 0 or X_test.ndim != 2 or X_test.shape[1] == 0:
        raise ValueError("empty test set")
    if X_test.shape[1] != y_test.size:
        raise ValueError("sample and label counts differ")
    preds = []
    elapsed = 0.0
    for i in range(y_test.size):
        x = X_test[:, i]
        t0 = time.perf_counter()
        pred = classify(model, x)
        elapsed += time.perf_counter() - t0
        preds.append(pred)
    C = n_classes or max(int(y_test.max()), max(p.label for p in preds)) + 1
    conf = np.zeros((C, C), dtype=int)
    for y, p in zip(y_test, preds):
        conf[y, p.label] += 1
    support = conf.sum(axis=1)
    per_class = np.divide(np.diag(conf), support, out=np.full(C, np.nan), where=support > 0)
    return EvalReport(
        accuracy=float(np.trace(conf) / y_test.size),
        per_class=per_class,
        confusion=conf,
        mean_query_seconds=elapsed / y_test.size,
        predictions=preds,
    )


def write_predictions_csv(path, predictions, y_true=None):
    """CSV: query index, true label (blank if unknown), predicted label, scores."""
    n_scores = len(predictions[0].scores) if predictions else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "true", "predicted"] + [f"score{c}" for c in range(n_scores)])
        for i, p in enumerate(predictions):
            true = "" if y_true is None else int(y_true[i])
            w.writerow([i, true, p.label] + [repr(float(s)) for s in p.scores])


def write_confusion_csv(path, confusion):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        C = confusion.shape[1]
        w.writerow(["true"] + [f"pred{c}" for c in range(C)])
        for c, row in enumerate(confusion):
            w.writerow([c] + [int(v) for v in row])
