"""Alternating training of the analysis model and the linear classifier.

Each outer iteration runs ADMM on the analysis model with the classifier
fixed, then refits the classifier by projected gradient on the features the
model actually produces. Two schemes are supported:

* ``sep``: one (A, lam, W) per class; W regresses the class samples from
  their own features and an extra penalty keeps A small on other classes.
* ``nonsep``: one shared (A, lam) and a label-regression W (C x p).
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from .admm import (LossSpec, OperatorRegularizer, SolverOptions,
                   precompute_operator_inverse, solve_nacm)
from .nacm import AnalysisModel, extract_features

logger = logging.getLogger(__name__)


@dataclass
class HyperParams:
    alpha: float = 1e-4
    tau: float = 7e-6
    sigma2: float = 5.0
    rho: float = 1.0
    max_outer: int = 20
    epsilon: float = 1e-4
    warm_start: int = 5
    seed: int = 0
    inner_iters: int = 30
    residual_tol: float = 1e-4
    feature_dim: int = 40

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.sigma2 < 0 or not self.rho > 0:
            raise ValueError("sigma2 must be >= 0 and rho > 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    def to_vector(self):
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_vector(cls, v):
        kwargs = {}
        for f, x in zip(fields(cls), v):
            kwargs[f.name] = int(x) if f.type in ("int", int) else float(x)
        return cls(**kwargs)

    def solver_options(self):
        return SolverOptions(rho=self.rho, max_iter=self.inner_iters,
                             tol=self.residual_tol, warm_start=self.warm_start)


@dataclass
class SepModel:
    models: list
    weights: list
    hparams: HyperParams
    log: list = field(default=None, compare=False, repr=False)

    @property
    def n_classes(self):
        return len(self.models)


@dataclass
class NonSepModel:
    model: AnalysisModel
    W: np.ndarray
    hparams: HyperParams
    log: list = field(default=None, compare=False, repr=False)

    @property
    def n_classes(self):
        return self.W.shape[0]


# ---------------------------------------------------------------------------
# classifier step


def project_columns(W):
    """Scale every column with l2 norm above 1 back onto the unit sphere."""
    norms = np.linalg.norm(W, axis=0)
    return W / np.maximum(norms, 1.0)


def top_eigenvalue(G, n_iter=50):
    """Power iteration estimate of the largest eigenvalue of a PSD matrix."""
    v = np.random.default_rng(0).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = G @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        lam = float(v @ (G @ v))
    return lam


def _fit_value(T, W, F):
    R = T - W @ F
    return 0.5 * float(np.vdot(R, R))


def update_W(F, targets, W0, max_iter=500, tol=1e-8):
    """Projected gradient on ``1/2 ||targets - W F||_F^2`` with unit-ball columns.

    The step is ``1/L`` with ``L`` the power-iteration estimate of the top
    eigenvalue of ``F F^T``. A step that would raise the objective is
    rejected and retried with ``L`` doubled.
    """
    F = np.asarray(F, dtype=float)
    T = np.asarray(targets, dtype=float)
    W = project_columns(np.asarray(W0, dtype=float))
    if not np.any(F):
        return np.array(W0, dtype=float)
    G = F @ F.T
    TF = T @ F.T
    L = top_eigenvalue(G)
    if L <= 0:
        return W
    obj = _fit_value(T, W, F)
    steps = 0
    while steps < max_iter:
        W_new = project_columns(W - (W @ G - TF) / L)
        obj_new = _fit_value(T, W_new, F)
        if obj_new > obj:
            L *= 2.0
            if L > 1e300:
                break
            continue
        steps += 1
        done = obj - obj_new <= tol * max(obj, np.finfo(float).tiny)
        W, obj = W_new, obj_new
        if done:
            break
    return W


# ---------------------------------------------------------------------------
# initialization


def init_params(n, p, out_rows, hp: HyperParams, rng):
    """Random start: A ~ N(0, sigma2), lam ~ U(0, 1), W ~ N(0, 1) projected."""
    A = np.sqrt(hp.sigma2) * rng.standard_normal((p, n))
    lam = rng.uniform(0.0, 1.0)
    W = project_columns(rng.standard_normal((out_rows, p)))
    return AnalysisModel(A, lam), W


def _class_rngs(seed, n_classes):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_classes)]


def canonical_columns(X):
    """Columns sorted lexicographically, so Gram sums do not depend on sample order."""
    if X.shape[1] < 2:
        return X
    return X[:, np.lexsort(X[::-1])]


# ---------------------------------------------------------------------------
# outer loop


def objective(model: AnalysisModel, W, X, T, reg: OperatorRegularizer):
    """Fit of the actual forward features plus the operator penalty."""
    return _fit_value(T, W, extract_features(model, X)) + reg.value(model.A)


@dataclass
class OuterRecord:
    iteration: int
    loss: float
    admm_iters: int
    accepted: bool
    seconds: float


def fit_block(X, T, kind, reg, model, W, hp: HyperParams, label=""):
    """Alternate ADMM on (A, lam) and projected gradient on W.

    W is fitted to the initial features before the first ADMM run; against
    a random W the best move is often lam = 0, which is absorbing. An ADMM
    result that does not lower the objective is discarded, so the recorded
    loss sequence never increases.
    """
    t0 = time.perf_counter()
    inverse = precompute_operator_inverse(reg, X, hp.rho)
    opts = hp.solver_options()
    W = update_W(extract_features(model, X), T, W)
    J = objective(model, W, X, T, reg)
    records = [OuterRecord(0, J, 0, True, 0.0)]
    for it in range(1, hp.max_outer + 1):
        res = solve_nacm(LossSpec(kind, T, W), reg, X, model, opts,
                         precomputed_inverse=inverse)
        J_cand = objective(res.model, W, X, T, reg)
        accepted = J_cand <= J
        if accepted:
            model = res.model
        W = update_W(extract_features(model, X), T, W)
        J_new = objective(model, W, X, T, reg)
        records.append(OuterRecord(it, J_new, len(res.history), accepted,
                                   time.perf_counter() - t0))
        done = abs(J - J_new) <= hp.epsilon * max(abs(J), np.finfo(float).tiny)
        J = J_new
        if done:
            break
    logger.info("%s finished after %d outer iterations: loss %.6g, lam %.6g",
                label or kind, len(records) - 1, J, model.lam)
    return model, W, records


def _check_classes(labels, n_classes=None):
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("empty training set")
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(labels, minlength=C)
    for c, k in enumerate(counts):
        if k == 0:
            raise ValueError(f"class {c} has no training samples")
    return labels, C


def default_threads():
    try:
        return max(1, int(os.environ.get("DNAOL_THREADS", "1")))
    except ValueError:
        return 1


def train_sep(X, labels, hp: HyperParams, class_dims=None, threads=None) -> SepModel:
    """Per-class models; class c regresses its own samples from its own features."""
    X = np.asarray(X, dtype=float)
    labels, C = _check_classes(labels)
    if X.shape[1] != labels.size:
        raise ValueError("sample and label counts differ")
    n = X.shape[0]
    dims = class_dims or [max(1, hp.feature_dim // C)] * C
    if len(dims) != C:
        raise ValueError(f"need {C} per-class feature dimensions, got {len(dims)}")
    rngs = _class_rngs(hp.seed, C)

    def fit_class(c):
        Xc = X[:, labels == c]
        Xbar = canonical_columns(X[:, labels != c]) if hp.alpha > 0 else np.zeros((n, 0))
        reg = OperatorRegularizer(hp.tau, hp.alpha, Xbar)
        model, W = init_params(n, dims[c], n, hp, rngs[c])
        return fit_block(Xc, Xc, "sample", reg, model, W, hp, label=f"class {c}")

    threads = threads or default_threads()
    if threads > 1 and C > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fit_class, range(C)))
    else:
        results = [fit_class(c) for c in range(C)]

    log = _merge_logs([r[2] for r in results])
    return SepModel([r[0] for r in results], [r[1] for r in results], hp, log=log)


def train_nonsep(X, labels, hp: HyperParams) -> NonSepModel:
    """Shared model; W regresses one-hot labels from the features."""
    from .data import one_hot

    X = np.asarray(X, dtype=float)
    labels, C = _check_classes(labels)
    if X.shape[1] != labels.size:
        raise ValueError("sample and label counts differ")
    Y = one_hot(labels, C)
    reg = OperatorRegularizer(hp.tau, 0.0)
    model, W = init_params(X.shape[0], hp.feature_dim, C, hp, _class_rngs(hp.seed, 1)[0])
    model, W, records = fit_block(X, Y, "label", reg, model, W, hp, label="shared model")
    log = [dict(iteration=r.iteration, loss=r.loss, class_losses=[r.loss],
                admm_iters=r.admm_iters, seconds=r.seconds) for r in records]
    return NonSepModel(model, W, hp, log=log)


def _merge_logs(per_class):
    """Combine per-class records by outer iteration; finished classes hold their last value."""
    rows = []
    for it in range(max(len(r) for r in per_class)):
        recs = [r[min(it, len(r) - 1)] for r in per_class]
        losses = [rec.loss for rec in recs]
        rows.append(dict(
            iteration=it,
            loss=float(np.sum(losses)),
            class_losses=losses,
            admm_iters=sum(rec.admm_iters for rec, r in zip(recs, per_class) if it < len(r)),
            seconds=max(rec.seconds for rec in recs),
        ))
    return rows


def train(X, labels, hp: HyperParams, scheme="sep", threads=None):
    if scheme == "sep":
        return train_sep(X, labels, hp, threads=threads)
    if scheme == "nonsep":
        return train_nonsep(X, labels, hp)
    raise ValueError(f"unknown scheme {scheme!r}")


def write_training_log(log, path):
    """CSV: outer iteration, loss, per-class losses, ADMM iterations, wall seconds."""
    n_cls = len(log[0]["class_losses"]) if log else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"] + [f"loss_class{c}" for c in range(n_cls)]
                   + ["admm_iters", "seconds"])
        for row in log:
            w.writerow([row["iteration"], repr(row["loss"])]
                       + [repr(v) for v in row["class_losses"]]
                       + [row["admm_iters"], f"{row['seconds']:.6f}"])
