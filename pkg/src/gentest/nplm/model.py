"""Nystrom kernel logistic classifier and the NPLM test statistic.

The classifier ``f_w(z) = sum_i w_i k_sigma(z, c_i)`` over ``M`` centres drawn
from the pooled sample is fitted by minimising

    L(w) = 1/(n+m) * sum_i loss(c_i, f_w(z_i)) + lambda * w' K_MM w

with the class-weighted logistic loss ``(1-c) (m/n) log(1+e^f) + c log(1+e^-f)``,
whose population minimiser is ``log q/p``. The fitted model is scored in-sample
with ``t = -2 [ (m/n) sum_X (e^f - 1) - sum_Y f ]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit
from scipy.spatial.distance import cdist

from ..errors import InvalidInputError, NumericError, SolverError
from ..linalg import as_sample, check_same_dim
from ..rng import RngStream, as_stream

EXP_CLIP = 30.0


@dataclass(frozen=True)
class NplmHyperparams:
    sigma: float
    m_centers: int
    lam: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be > 0, got {self.sigma}")
        if int(self.m_centers) < 1:
            raise InvalidInputError(f"m_centers must be >= 1, got {self.m_centers}")
        if not self.lam >= 0:
            raise InvalidInputError(f"lambda must be >= 0, got {self.lam}")
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "m_centers", int(self.m_centers))
        object.__setattr__(self, "lam", float(self.lam))

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "m_centers": self.m_centers, "lambda": self.lam}

    @classmethod
    def from_dict(cls, obj: dict) -> "NplmHyperparams":
        return cls(obj["sigma"], obj["m_centers"], obj.get("lambda", obj.get("lam")))


@dataclass(frozen=True)
class SolverConfig:
    """Damped Newton settings.

    Iteration stops once the Euclidean norm of the gradient of ``L`` falls to
    ``grad_tol``. If round-off stalls progress first, the fit is still accepted
    when the norm is within ``accept_tol`` (``None``: ``1e-6 * (n + m)``).
    """

    grad_tol: float = 1e-6
    accept_tol: float | None = None
    max_newton: int = 50
    cg_rel_tol: float = 1e-10
    cg_max_iter: int | None = None
    armijo: float = 1e-4
    max_backtracks: int = 40
    jitter: float = 1e-10


@dataclass(frozen=True, eq=False)
class KernelModel:
    centers: np.ndarray
    weights: np.ndarray
    hyperparams: NplmHyperparams
    class_ratio: float
    losses: tuple = field(default=(), compare=False)
    grad_norm: float = field(default=float("nan"), compare=False)
    iterations: int = field(default=0, compare=False)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def kernel_matrix(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * sigma * sigma))


def kernel_eval(model: KernelModel, pts) -> np.ndarray:
    """``f_w`` at each row of ``pts``."""
    z = np.asarray(pts, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[1] != model.dim:
        raise InvalidInputError(f"points have dimension {z.shape[1]}, model has {model.dim}")
    return kernel_matrix(z, model.centers, model.hyperparams.sigma) @ model.weights


# -- objective ---------------------------------------------------------------------


class _Objective:
    """Loss, gradient and Newton curvature of ``L`` for a fixed design."""

    def __init__(self, k_nm, k_mm, labels, ratio, lam):
        self.k_nm = k_nm
        self.k_mm = k_mm
        self.labels = labels
        self.ratio = ratio
        self.lam = lam
        self.n_total = k_nm.shape[0]
        # per-point loss weight: m/n on the reference class, 1 on the other
        self.cw = np.where(labels == 0, ratio, 1.0)
        self.sign = np.where(labels == 0, 1.0, -1.0)

    def value(self, w, f=None):
        if f is None:
            f = self.k_nm @ w
        data = np.sum(self.cw * np.logaddexp(0.0, self.sign * f)) / self.n_total
        return data + self.lam * (w @ (self.k_mm @ w))

    def gradient(self, w, f):
        g = self.cw * self.sign * expit(self.sign * f)
        return self.k_nm.T @ g / self.n_total + 2.0 * self.lam * (self.k_mm @ w)

    def curvature(self, f):
        s = expit(f)
        return self.cw * s * (1.0 - s)


def _pcg(apply_a, b, apply_pinv, rel_tol, max_iter):
    x = np.zeros_like(b)
    r = b.copy()
    z = apply_pinv(r)
    p = z.copy()
    rz = r @ z
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return x, 0
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        denom = p @ ap
        if denom <= 0:
            break
        step = rz / denom
        x += step * p
        r -= step * ap
        if np.linalg.norm(r) <= rel_tol * b_norm:
            return x, it
        z = apply_pinv(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


def _preconditioner(k_mm, jitter, curvature_mean, lam, n_centers):
    """Approximate inverse of ``d K^2 / M + 2 lam K`` built from ``chol(K_MM)``.

    Uses the Nystrom identity ``K_NM' K_NM ~ (N/M) K_MM^2``.
    """
    t = np.linalg.cholesky(k_mm + jitter * np.eye(n_centers)).T  # upper, K = T'T
    inner = (curvature_mean / n_centers) * (t @ t.T) + (2.0 * lam + jitter) * np.eye(n_centers)
    a = np.linalg.cholesky(inner).T

    def apply(r):
        u = solve_triangular(t, r, trans="T")
        v = solve_triangular(a, u, trans="T")
        s = solve_triangular(a, v)
        return solve_triangular(t, s)

    return apply


def _newton(obj: _Objective, n_centers: int, solver: SolverConfig, grad_tol: float, accept_tol: float):
    k_nm, k_mm, lam = obj.k_nm, obj.k_mm, obj.lam
    tau = solver.jitter * np.trace(k_mm) / n_centers
    cg_max = solver.cg_max_iter or max(2 * n_centers, 50)
    w = np.zeros(n_centers)
    f = np.zeros(obj.n_total)
    loss = obj.value(w, f)
    losses = [loss]
    grad = obj.gradient(w, f)
    gnorm = float(np.linalg.norm(grad))
    for it in range(solver.max_newton + 1):
        if not math.isfinite(loss) or not math.isfinite(gnorm):
            raise NumericError("non-finite loss during NPLM training")
        if gnorm <= grad_tol:
            return w, losses, gnorm, it
        if it == solver.max_newton:
            break
        d = obj.curvature(f)
        reg = 2.0 * lam

        def hess(v, d=d):
            return k_nm.T @ (d * (k_nm @ v)) / obj.n_total + reg * (k_mm @ v + tau * v)

        pinv = _preconditioner(k_mm, tau, float(d.mean()), lam, n_centers)
        step, _ = _pcg(hess, -grad, pinv, solver.cg_rel_tol, cg_max)
        slope = grad @ step
        if slope >= 0:
            step, slope = -grad, -(grad @ grad)
        t = 1.0
        for _ in range(solver.max_backtracks):
            w_new = w + t * step
            f_new = k_nm @ w_new
            loss_new = obj.value(w_new, f_new)
            if loss_new <= loss + solver.armijo * t * slope:
                break
            t *= 0.5
        else:
            if gnorm <= accept_tol:
                return w, losses, gnorm, it
            raise SolverError("line search failed to decrease the objective", grad_norm=gnorm, iterations=it)
        stalled = loss - loss_new <= 1e-15 * abs(loss)
        w, f, loss = w_new, f_new, loss_new
        losses.append(loss)
        grad = obj.gradient(w, f)
        gnorm = float(np.linalg.norm(grad))
        if stalled and gnorm <= accept_tol:
            return w, losses, gnorm, it + 1
    if gnorm <= accept_tol:
        return w, losses, gnorm, solver.max_newton
    raise SolverError(
        f"Newton did not converge in {solver.max_newton} iterations (|grad| = {gnorm:.3e})",
        grad_norm=gnorm,
        iterations=solver.max_newton,
    )


def design(x, y, hp: NplmHyperparams, rng: RngStream | int | None):
    """Pooled points, labels and the uniformly drawn Nystrom centres."""
    x = as_sample(x, "x")
    y = as_sample(y, "y")
    check_same_dim(x, y)
    z = np.vstack([x, y])
    labels = np.concatenate([np.zeros(x.shape[0], dtype=np.int8), np.ones(y.shape[0], dtype=np.int8)])
    if hp.m_centers > z.shape[0]:
        raise InvalidInputError(f"m_centers={hp.m_centers} exceeds the pooled size {z.shape[0]}")
    idx = np.sort(as_stream(rng).generator().choice(z.shape[0], size=hp.m_centers, replace=False))
    return z, labels, z[idx]


def fit(x, y, hp: NplmHyperparams, rng: RngStream | int | None = None, solver: SolverConfig | None = None) -> KernelModel:
    """Train the classifier on ``x`` (label 0) against ``y`` (label 1)."""
    solver = solver or SolverConfig()
    z, labels, centers = design(x, y, hp, rng)
    n, m = int((labels == 0).sum()), int((labels == 1).sum())
    k_nm = kernel_matrix(z, centers, hp.sigma)
    k_mm = kernel_matrix(centers, centers, hp.sigma)
    obj = _Objective(k_nm, k_mm, labels, m / n, hp.lam)
    accept_tol = solver.accept_tol if solver.accept_tol is not None else 1e-6 * (n + m)
    w, losses, gnorm, its = _newton(obj, hp.m_centers, solver, min(solver.grad_tol, accept_tol), accept_tol)
    return KernelModel(centers, w, hp, m / n, tuple(losses), gnorm, its)


def objective(model: KernelModel, x, y, weights=None) -> float:
    """``L`` at ``weights`` (default: the fitted ones) on the training pair."""
    obj, w = _objective_for(model, x, y, weights)
    return float(obj.value(w))


def objective_gradient(model: KernelModel, x, y, weights=None) -> np.ndarray:
    obj, w = _objective_for(model, x, y, weights)
    return obj.gradient(w, obj.k_nm @ w)


def _objective_for(model, x, y, weights):
    x = as_sample(x, "x")
    y = as_sample(y, "y")
    z = np.vstack([x, y])
    labels = np.concatenate([np.zeros(len(x), dtype=np.int8), np.ones(len(y), dtype=np.int8)])
    sigma = model.hyperparams.sigma
    obj = _Objective(
        kernel_matrix(z, model.centers, sigma),
        kernel_matrix(model.centers, model.centers, sigma),
        labels,
        len(y) / len(x),
        model.hyperparams.lam,
    )
    w = model.weights if weights is None else np.asarray(weights, dtype=np.float64)
    return obj, w


# -- statistic -----------------------------------------------------------------------


def nplm_statistic_from_values(f_x, f_y) -> float:
    """Extended-likelihood statistic from classifier outputs on ``x`` and ``y``."""
    f_x = np.asarray(f_x, dtype=np.float64)
    f_y = np.asarray(f_y, dtype=np.float64)
    n, m = f_x.size, f_y.size
    expo = np.expm1(np.clip(f_x, -EXP_CLIP, EXP_CLIP))
    t = -2.0 * ((m / n) * expo.sum() - f_y.sum())
    if not math.isfinite(t):
        raise NumericError("non-finite NPLM statistic")
    return float(t)


def nplm_statistic(model: KernelModel, x, y) -> float:
    """Evaluate the fitted model in-sample on the pair it was trained on."""
    return nplm_statistic_from_values(kernel_eval(model, x), kernel_eval(model, y))


def nplm_test(x, y, hp: NplmHyperparams, rng: RngStream | int | None = None, solver: SolverConfig | None = None) -> float:
    """Fit and score: the NPLM two-sample statistic."""
    model = fit(x, y, hp, rng, solver)
    return nplm_statistic(model, x, y)


# -- persistence ------------------------------------------------------------------------


def save_model(model: KernelModel, path) -> Path:
    """Centres then weights as little-endian float64, with a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = np.concatenate([model.centers.ravel(), model.weights]).astype("<f8")
    path.write_bytes(blob.tobytes())
    header = {
        "sigma": model.hyperparams.sigma,
        "M": model.hyperparams.m_centers,
        "lambda": model.hyperparams.lam,
        "class_ratio": model.class_ratio,
        "d": model.dim,
    }
    path.with_suffix(".json").write_text(json.dumps(header, sort_keys=True, indent=2))
    return path


def load_model(path) -> KernelModel:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    m_centers, d = int(header["M"]), int(header["d"])
    if raw.size != m_centers * (d + 1):
        raise InvalidInputError(f"{path}: expected {m_centers * (d + 1)} values, found {raw.size}")
    hp = NplmHyperparams(header["sigma"], m_centers, header["lambda"])
    centers = raw[: m_centers * d].reshape(m_centers, d)
    return KernelModel(centers, raw[m_centers * d :].copy(), hp, float(header["class_ratio"]))
