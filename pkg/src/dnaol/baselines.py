"""Closed-form reference classifiers.

CRC codes a query over the whole training set with ridge regression and
assigns it to the class whose share of the code reconstructs it best,
normalized by the size of that share. Nearest-mean is a sanity oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .classify import Prediction, classify


@dataclass
class CrcModel:
    D: np.ndarray
    labels: np.ndarray
    ridge: float
    P: np.ndarray

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1

    def check_cache(self, tol=1e-10):
        """True if the stored projection matches a fresh computation."""
        P = _ridge_projection(self.D, self.ridge)
        return bool(np.max(np.abs(P - self.P)) <= tol * max(1.0, np.max(np.abs(P))))


def _ridge_projection(D, ridge):
    G = D.T @ D
    G[np.diag_indices_from(G)] += ridge
    try:
        cho = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError:
        cho = None
    d = np.abs(np.diag(cho[0])) if cho is not None else None
    if cho is None or d.min() == 0 or (d.min() / d.max()) ** 2 < 1e-14:
        raise np.linalg.LinAlgError("CRC Gram matrix is ill-conditioned; use ridge > 0")
    return linalg.cho_solve(cho, D.T)


def fit_crc(D, labels, ridge=1e-3) -> CrcModel:
    D = np.asarray(D, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if D.shape[1] != labels.size:
        raise ValueError("sample and label counts differ")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    return CrcModel(D, labels, float(ridge), _ridge_projection(D, ridge))


def crc_code(model: CrcModel, x):
    return model.P @ np.asarray(x, dtype=float)


def crc_classify(model: CrcModel, x) -> Prediction:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.D.shape[0],):
        raise ValueError(f"query must be a vector of length {model.D.shape[0]}")
    f = crc_code(model, x)
    scores = np.empty(model.n_classes)
    for c in range(model.n_classes):
        idx = model.labels == c
        fc = f[idx]
        num = np.linalg.norm(x - model.D[:, idx] @ fc)
        den = np.linalg.norm(fc)
        scores[c] = num / den if den > 0 else (0.0 if num == 0 else np.inf)
    return Prediction(int(np.argmin(scores)), scores)


@dataclass
class NearestMeanModel:
    means: np.ndarray  # (n, C)

    @property
    def n_classes(self):
        return self.means.shape[1]


def class_means(X, labels):
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    C = int(labels.max()) + 1
    return NearestMeanModel(np.stack([X[:, labels == c].mean(axis=1) for c in range(C)], axis=1))


def nearest_mean_classify(model: NearestMeanModel, x) -> Prediction:
    if model.means.size == 0:
        raise ValueError("no class means")
    d = np.linalg.norm(model.means - np.asarray(x, dtype=float)[:, None], axis=0)
    return Prediction(int(np.argmin(d)), d)


classify.register(CrcModel, crc_classify)
classify.register(NearestMeanModel, nearest_mean_classify)
