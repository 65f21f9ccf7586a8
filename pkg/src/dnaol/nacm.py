"""Nonlinear analysis cosparse model.

A sample ``x`` is mapped to a cosparse feature vector by a linear
analysis operator followed by a scaled soft threshold with unit dead zone::

    f = lam * sgn(A x) * max(|A x| - 1, 0)

Samples are stored column-wise, so a batch ``X`` of shape ``(n, N)`` maps
to features of shape ``(p, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_TOL = 1e-12


@dataclass(frozen=True)
class AnalysisModel:
    """Analysis operator ``A`` (p x n) and scalar selector scale ``lam``."""

    A: np.ndarray
    lam: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError(f"analysis operator must be a nonempty 2-D array, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("analysis operator has non-finite entries")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"selector scale must be finite and >= 0, got {self.lam}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


def shrink(V, thresh=1.0):
    """Soft threshold ``sgn(V) * max(|V| - thresh, 0)``, elementwise."""
    V = np.asarray(V, dtype=float)
    return np.sign(V) * np.maximum(np.abs(V) - thresh, 0.0)


def select(V, lam):
    """Scaled-threshold selector ``lam * shrink(V, 1)``."""
    return lam * shrink(V)


def extract_features(model: AnalysisModel, X) -> np.ndarray:
    """Forward feature map ``S_lam(A X)``.

    Parameters
    ----------
    model : AnalysisModel
    X : array_like, shape (n,) or (n, N)
        One sample or a column-major batch of samples.

    Returns
    -------
    ndarray, shape (p,) or (p, N)

    Notes
    -----
    A batch is evaluated one column at a time so that its output is
    bitwise identical to evaluating each sample on its own (a single
    matrix product may round differently from matrix-vector products).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim not in (1, 2) or X.shape[0] != model.n:
        raise ValueError(
            f"sample dimension mismatch: operator expects {model.n} rows, got shape {X.shape}")
    if X.ndim == 1:
        return select(model.A @ X, model.lam)
    AX = np.empty((model.p, X.shape[1]))
    for i in range(X.shape[1]):
        AX[:, i] = model.A @ X[:, i]
    return select(AX, model.lam)


def cosparsity(f, tol: float = ZERO_TOL) -> int:
    """Number of entries of ``f`` with magnitude at most ``tol``."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    return int(np.count_nonzero(np.abs(np.asarray(f)) <= tol))


def prox_l1(v, weight: float = 1.0):
    """Proximity operator of ``weight * ||.||_1``."""
    return shrink(v, weight)


def prox_equivalence_check(v, reg_weight: float = 1.0):
    """Compare the unit-scale selector with the l1 proximity operator.

    Returns ``(selector_output, prox_output, max_abs_diff)``. The two agree
    exactly at ``reg_weight == 1``; other weights only yield an oracle value
    for the prox.
    """
    if reg_weight <= 0:
        raise ValueError("reg_weight must be > 0")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    sel = select(v, 1.0)
    # computed independently of shrink() so the comparison is not circular
    prox = np.where(v > reg_weight, v - reg_weight,
                    np.where(v < -reg_weight, v + reg_weight, 0.0))
    diff = float(np.max(np.abs(sel - prox))) if v.size else 0.0
    return sel, prox, diff
