"""ADMM for the analysis-model subproblem with the classifier held fixed.

Solves::

    min_{A, lam, F}  1/2 ||T - W F||_F^2 + tau/2 ||A||_F^2 + alpha/2 ||A Xbar||_F^2
    s.t.             S_lam(A X) = F

by splitting ``Z = A X`` and running the scheme

    F      <- argmin 1/2||T - W F||^2 + rho/2 ||S_lam(Z) - F + U2/rho||^2
    Z      <- argmin ||S_lam(Z) - (F - U2/rho)||^2 + ||Z - (A X - U1/rho)||^2   (entrywise)
    lam    <- argmin ||S_lam(Z) - (F - U2/rho)||^2
    A      <- argmin Psi(A) + rho/2 ||Z - A X + U1/rho||^2
    U1     += rho (Z - A X)
    U2     += rho (S_lam(Z) - F)

Every step is closed form.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .nacm import AnalysisModel, select, shrink

logger = logging.getLogger(__name__)

_EMPTY = np.zeros((0, 0))


class DivergenceError(RuntimeError):
    """Raised when a residual becomes non-finite."""

    def __init__(self, iteration, message="ADMM diverged"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class LossSpec:
    """Quadratic fitting term ``1/2 ||target - weights @ F||_F^2``.

    ``kind`` is ``"sample"`` for per-class self-regression (targets are the
    class samples, weights are n x p_c) or ``"label"`` for one-hot label
    regression (targets are C x N, weights C x p).
    """

    kind: str
    target: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.kind not in ("sample", "label"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        T = np.asarray(self.target, dtype=float)
        W = np.asarray(self.weights, dtype=float)
        if T.ndim != 2 or W.ndim != 2 or T.shape[0] != W.shape[0]:
            raise ValueError(f"target {T.shape} and weights {W.shape} are inconsistent")
        object.__setattr__(self, "target", T)
        object.__setattr__(self, "weights", W)

    def value(self, F):
        R = self.target - self.weights @ F
        return 0.5 * float(np.vdot(R, R))


@dataclass(frozen=True)
class OperatorRegularizer:
    """``tau/2 ||A||_F^2 + alpha/2 ||A Xbar||_F^2``."""

    tau: float = 0.0
    alpha: float = 0.0
    Xbar: np.ndarray = field(default_factory=lambda: _EMPTY)

    def __post_init__(self):
        if self.tau < 0 or self.alpha < 0:
            raise ValueError("tau and alpha must be >= 0")
        object.__setattr__(self, "Xbar", np.asarray(self.Xbar, dtype=float))

    @property
    def uses_xbar(self):
        return self.alpha > 0 and self.Xbar.size > 0

    def value(self, A):
        v = 0.5 * self.tau * float(np.vdot(A, A))
        if self.uses_xbar:
            AX = A @ self.Xbar
            v += 0.5 * self.alpha * float(np.vdot(AX, AX))
        return v

    def gradient(self, A):
        G = self.tau * A
        if self.uses_xbar:
            G = G + self.alpha * (A @ self.Xbar) @ self.Xbar.T
        return G


@dataclass
class ResidualRecord:
    iteration: int
    primal1: float
    primal2: float
    dual1: float
    dual2: float
    objective: float
    warm: bool = False


@dataclass
class AdmmState:
    F: np.ndarray
    Z: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    rho: float = 1.0
    iteration: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        shapes = {self.F.shape, self.Z.shape, self.U1.shape, self.U2.shape}
        if len(shapes) != 1:
            raise ValueError(f"ADMM variables must share one shape, got {shapes}")

    @classmethod
    def start(cls, model: AnalysisModel, X, rho=1.0):
        Z = model.A @ X
        zeros = np.zeros_like(Z)
        return cls(F=select(Z, model.lam), Z=Z, U1=zeros, U2=zeros.copy(), rho=rho)


@dataclass
class SolverOptions:
    rho: float = 1.0
    max_iter: int = 300
    tol: float = 1e-4
    warm_start: int = 5
    cg_limit: int = 2000
    cg_tol: float = 1e-10


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


# ---------------------------------------------------------------------------
# F step


class FSolver:
    """Solves ``(W^T W + rho I) F = W^T T + rho S + U2`` for varying right-hand sides.

    The system matrix depends only on ``W`` and ``rho``, so it is factored
    once. Beyond ``cg_limit`` rows the factorization is skipped and a block
    conjugate gradient solve is used instead.
    """

    def __init__(self, loss: LossSpec, rho, cg_limit=2000, cg_tol=1e-10):
        if not rho > 0:
            raise ValueError("rho must be > 0")
        _check_finite(loss.target, loss.weights)
        W = loss.weights
        self.rho = rho
        self.cg_tol = cg_tol
        self.WtT = W.T @ loss.target
        self.M = W.T @ W
        self.M[np.diag_indices_from(self.M)] += rho
        self.use_cg = self.M.shape[0] > cg_limit
        self.cho = None if self.use_cg else linalg.cho_factor(self.M, lower=True)

    def solve(self, S_of_Z, U2, F0=None):
        rhs = self.WtT + self.rho * S_of_Z + U2
        if self.use_cg:
            return block_cg(self.M, rhs, X0=F0, tol=self.cg_tol)
        return linalg.cho_solve(self.cho, rhs, check_finite=False)


def block_cg(M, B, X0=None, tol=1e-10, max_iter=None):
    """Conjugate gradient on each column of ``M X = B`` (M symmetric PD).

    Columns run in lockstep with their own step sizes; a column stops
    moving once its residual is below ``tol * ||b||``.
    """
    X = np.zeros_like(B) if X0 is None else np.array(X0, dtype=float)
    R = B - M @ X
    P = R.copy()
    rs = np.einsum("ij,ij->j", R, R)
    bnorm = np.sqrt(np.einsum("ij,ij->j", B, B))
    stop = (tol * np.maximum(bnorm, np.finfo(float).tiny)) ** 2
    for _ in range(max_iter or 10 * M.shape[0]):
        active = rs > stop
        if not active.any():
            break
        MP = M @ P
        denom = np.einsum("ij,ij->j", P, MP)
        step = np.where(active, rs / np.where(active, denom, 1.0), 0.0)
        X += P * step
        R -= MP * step
        rs_new = np.einsum("ij,ij->j", R, R)
        beta = np.where(active, rs_new / np.where(active, rs, 1.0), 0.0)
        P = R + P * beta
        rs = rs_new
    return X


def update_F(loss: LossSpec, S_of_Z, U2, rho):
    """One-shot F step; see :class:`FSolver` for repeated solves."""
    _check_finite(S_of_Z, U2)
    return FSolver(loss, rho).solve(S_of_Z, U2)


# ---------------------------------------------------------------------------
# Z step


def _z_objective(z, u1, u2, lam):
    return (lam * shrink(z) - u2) ** 2 + (z - u1) ** 2


def update_Z(U1_tilde, U2_tilde, lam):
    """Entrywise global minimizer of ``(S_lam(z) - u2)^2 + (z - u1)^2``.

    The objective is quadratic on each of ``z <= -1``, ``|z| <= 1`` and
    ``z >= 1``; the constrained minimizer of each piece is computed in
    closed form and the best of the three is kept. Ties go to the smallest
    ``|z|``, then the smaller ``z``.
    """
    u1 = np.asarray(U1_tilde, dtype=float)
    u2 = np.asarray(U2_tilde, dtype=float)
    if u1.shape != u2.shape:
        raise ValueError(f"shape mismatch: {u1.shape} vs {u2.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    lam2 = lam * lam
    denom = lam2 + 1.0
    mid = np.clip(u1, -1.0, 1.0)
    right = np.maximum((lam2 + lam * u2 + u1) / denom, 1.0)
    left = np.minimum((-lam2 + lam * u2 + u1) / denom, -1.0)

    cands = np.stack([mid, right, left])
    obj = _z_objective(cands, u1, u2, lam)
    # lexicographic (objective, |z|, z) without a Python loop
    best = np.argmin(obj, axis=0)
    out = np.take_along_axis(cands, best[None], axis=0)[0]
    best_obj = np.take_along_axis(obj, best[None], axis=0)[0]
    tied = obj == best_obj
    if np.count_nonzero(tied.sum(axis=0) > 1):
        key_abs = np.where(tied, np.abs(cands), np.inf)
        min_abs = key_abs.min(axis=0)
        key_z = np.where(tied & (key_abs == min_abs), cands, np.inf)
        out = key_z.min(axis=0)
    return out


def update_Z_entry(u1, u2, lam):
    return float(update_Z(np.array(u1, dtype=float), np.array(u2, dtype=float), lam))


# ---------------------------------------------------------------------------
# lambda step


def update_lambda(Z, U2_tilde, lam_prev=None):
    """Least-squares scale fit ``argmin_{lam >= 0} ||lam G - U2_tilde||^2``, ``G = shrink(Z)``.

    When ``G`` vanishes the objective does not depend on ``lam`` and
    ``lam_prev`` is returned.
    """
    G = shrink(Z)
    U2_tilde = np.asarray(U2_tilde, dtype=float)
    if G.shape != U2_tilde.shape:
        raise ValueError(f"shape mismatch: {G.shape} vs {U2_tilde.shape}")
    gg = float(np.vdot(G, G))
    if gg == 0.0:
        return lam_prev
    return max(0.0, float(np.vdot(G, U2_tilde)) / gg)


# ---------------------------------------------------------------------------
# A step


def operator_gram(reg: OperatorRegularizer, X, rho):
    """``tau I + rho X X^T + alpha Xbar Xbar^T``."""
    X = np.asarray(X, dtype=float)
    M = rho * (X @ X.T)
    if reg.uses_xbar:
        M += reg.alpha * (reg.Xbar @ reg.Xbar.T)
    M[np.diag_indices_from(M)] += reg.tau
    return M


class ASolver:
    """Solves ``A M = (rho Z + U1) X^T`` with the iteration-invariant ``M``.

    Pass ``inverse`` to reuse a stored ``M^{-1}``; otherwise ``M`` is
    Cholesky factored.
    """

    def __init__(self, reg: OperatorRegularizer, X, rho, inverse=None):
        if not rho > 0:
            raise ValueError("rho must be > 0")
        self.X = np.asarray(X, dtype=float)
        self.rho = rho
        self.inverse = inverse
        self.cho = None
        if inverse is None:
            M = operator_gram(reg, self.X, rho)
            try:
                self.cho = linalg.cho_factor(M, lower=True)
            except linalg.LinAlgError:
                self.cho = None
            if self.cho is None or _cho_rcond(self.cho[0]) < 1e-14:
                raise np.linalg.LinAlgError(
                    "operator Gram matrix is numerically singular; use tau > 0")

    def solve(self, Z, U1):
        rhs = (self.rho * Z + U1) @ self.X.T
        if self.inverse is not None:
            return rhs @ self.inverse
        # M symmetric: A M = R  <=>  M A^T = R^T
        return linalg.cho_solve(self.cho, rhs.T, check_finite=False).T


def _cho_rcond(L):
    d = np.abs(np.diag(L))
    return float((d.min() / d.max()) ** 2) if d.size and d.max() > 0 else 0.0


def precompute_operator_inverse(reg: OperatorRegularizer, X, rho):
    """Explicit inverse of the A-step system matrix, for reuse across solves."""
    M = operator_gram(reg, X, rho)
    n = M.shape[0]
    try:
        cho = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError:
        cho = None
    if cho is None or _cho_rcond(cho[0]) < 1e-14:
        raise np.linalg.LinAlgError("operator Gram matrix is numerically singular; use tau > 0")
    return linalg.cho_solve(cho, np.eye(n))


def update_A(reg: OperatorRegularizer, Z, U1, X, rho, precomputed_inverse=None):
    return ASolver(reg, X, rho, inverse=precomputed_inverse).solve(Z, U1)


# ---------------------------------------------------------------------------
# dual step


def _gaps(state, AX, lam):
    return state.Z - AX, select(state.Z, lam) - state.F


def dual_ascent(state: AdmmState, A, lam, X, AX=None):
    """``U1 += rho (Z - A X)``, ``U2 += rho (S_lam(Z) - F)``; appends a residual record.

    The record carries the primal gaps that were applied; dual residuals and
    objective are left at zero for the caller to fill in.
    """
    if AX is None:
        AX = A @ X
    gap1, gap2 = _gaps(state, AX, lam)
    state.U1 = state.U1 + state.rho * gap1
    state.U2 = state.U2 + state.rho * gap2
    state.iteration += 1
    state.history.append(ResidualRecord(
        state.iteration, float(np.linalg.norm(gap1)), float(np.linalg.norm(gap2)),
        0.0, 0.0, 0.0))
    return state


# ---------------------------------------------------------------------------
# driver


@dataclass
class NacmResult:
    model: AnalysisModel
    F: np.ndarray
    history: list
    converged: bool
    state: AdmmState


def solve_nacm(loss: LossSpec, reg: OperatorRegularizer, X, init: AnalysisModel,
               opts: SolverOptions | None = None, precomputed_inverse=None) -> NacmResult:
    """Run warm-start sweeps and then ADMM on the analysis-model subproblem.

    The warm-start sweeps update the primal variables with the multipliers
    held at zero. Full iterations stop when both primal residuals fall below
    ``opts.tol * ||A X||_F`` or after ``opts.max_iter`` iterations.
    """
    opts = opts or SolverOptions()
    X = np.asarray(X, dtype=float)
    _check_finite(X)
    if X.shape[0] != init.n:
        raise ValueError(f"sample dimension {X.shape[0]} does not match operator width {init.n}")
    if loss.target.shape[1] != X.shape[1] or loss.weights.shape[1] != init.p:
        raise ValueError("loss target/weights do not match the data and feature sizes")
    rho = opts.rho
    fsolve = FSolver(loss, rho, cg_limit=opts.cg_limit, cg_tol=opts.cg_tol)
    asolve = ASolver(reg, X, rho, inverse=precomputed_inverse)

    A, lam = init.A, init.lam
    state = AdmmState.start(init, X, rho)
    AX = state.Z.copy()
    converged = False
    total = opts.warm_start + opts.max_iter
    for k in range(total):
        warm = k < opts.warm_start
        F_old, AX_old = state.F, AX

        state.F = fsolve.solve(select(state.Z, lam), state.U2, F0=state.F)
        U2t = state.F - state.U2 / rho
        state.Z = update_Z(AX - state.U1 / rho, U2t, lam)
        lam = update_lambda(state.Z, U2t, lam)
        A = asolve.solve(state.Z, state.U1)
        AX = A @ X
        if not (np.isfinite(lam) and np.all(np.isfinite(AX)) and np.all(np.isfinite(state.F))):
            raise DivergenceError(state.iteration + 1)

        if warm:
            gap1, gap2 = _gaps(state, AX, lam)
            state.iteration += 1
            rec = ResidualRecord(state.iteration, float(np.linalg.norm(gap1)),
                                 float(np.linalg.norm(gap2)), 0.0, 0.0, 0.0, warm=True)
            state.history.append(rec)
        else:
            dual_ascent(state, A, lam, X, AX=AX)
            rec = state.history[-1]
        rec.dual1 = float(rho * np.linalg.norm(AX - AX_old))
        rec.dual2 = float(rho * np.linalg.norm(state.F - F_old))
        rec.objective = loss.value(state.F) + reg.value(A)
        if not all(np.isfinite([rec.primal1, rec.primal2, rec.dual1, rec.dual2, rec.objective])):
            raise DivergenceError(state.iteration)

        if not warm:
            thresh = opts.tol * max(float(np.linalg.norm(AX)), np.finfo(float).tiny)
            if rec.primal1 < thresh and rec.primal2 < thresh:
                converged = True
                break

    logger.debug("ADMM stopped after %d iterations (converged=%s, lam=%.6g)",
                 state.iteration, converged, lam)
    return NacmResult(AnalysisModel(A, lam), state.F, state.history, converged, state)


def write_residuals_csv(history, path):
    """Residual history as CSV: iteration, primal1, primal2, dual1, dual2, objective."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "primal1", "primal2", "dual1", "dual2", "objective"])
        for r in history:
            w.writerow([r.iteration, repr(r.primal1), repr(r.primal2),
                        repr(r.dual1), repr(r.dual2), repr(r.objective)])
