"""Minimum relative-entropy reweighting of Monte Carlo paths.

The posterior is the Gibbs family ``p_i ∝ exp(g_i · λ)`` over the prior
paths, and the multipliers ``λ`` minimize the convex dual

    W(λ) = ln Z(λ) - λ · C                      (exact fit)
    H(λ) = W(λ) + ½ Σ ω_j λ_j²                   (weighted least squares)

whose gradient is the pricing error ``E^p[g] - C (+ ω λ)`` and whose Hessian
is the covariance of the payoffs under ``p`` (plus ``diag(ω)``). The solver is
an under-relaxed Newton iteration with a condition-number guard on the step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.linalg import lapack
from scipy.special import rel_entr

from . import kernels
from .constraints import ConstraintSet

MODES = ("exact", "least_squares")


class CalibrationError(RuntimeError):
    pass


class SingularJacobianError(CalibrationError):
    def __init__(self, message, suspects=()):
        super().__init__(message)
        self.suspects = list(suspects)


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "least_squares"
    alpha0: float = 0.01
    alpha_growth: float = 2.0
    cond_guard_ratio: float = 10.0
    step_shrink: float = 5.0
    grad_tol: float = 1e-6
    max_iters: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.alpha0 <= 1:
            raise ValueError("alpha0 must lie in (0, 1]")
        if self.alpha_growth < 1:
            raise ValueError("alpha_growth must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.step_shrink < 1 or self.cond_guard_ratio <= 1:
            raise ValueError("step_shrink must be >= 1 and cond_guard_ratio > 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


@dataclass(frozen=True, eq=False)
class DualState:
    lam: np.ndarray
    probs: np.ndarray
    log_partition: float
    dual_value: float
    gradient: np.ndarray
    jacobian: np.ndarray
    mode: str = "exact"

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.gradient))) if self.gradient.size else 0.0


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def posterior_probs(lam, payoffs) -> tuple[np.ndarray, float]:
    """Gibbs probabilities for multipliers ``lam`` and ``ln Z(lam)``."""
    g = np.asarray(payoffs, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if g.shape[1] == 0:
        n = g.shape[0]
        return np.full(n, 1.0 / n), math.log(n)
    with np.errstate(over="ignore", invalid="ignore"):
        exponents = g @ lam
    if not np.all(np.isfinite(exponents)):
        contrib = np.abs(lam) * np.max(np.abs(g), axis=0)
        worst = int(np.nanargmax(np.where(np.isfinite(contrib), contrib, np.inf)))
        raise CalibrationError(
            f"non-finite exponent in posterior; largest contribution from "
            f"multiplier {worst} (lambda={lam[worst]:.6g})"
        )
    p, log_z = kernels.softmax_weights(exponents)
    return p, float(log_z)


def relative_entropy(p, q=None) -> float:
    """``sum p ln(p/q)`` with ``0 ln 0 = 0``; ``q`` defaults to uniform."""
    p = np.asarray(p, dtype=float)
    if q is None:
        q = np.full(p.size, 1.0 / p.size)
    return float(np.sum(rel_entr(p, np.asarray(q, dtype=float))))


def _penalty(lam, weights):
    return 0.5 * float(np.dot(weights, lam * lam))


def dual_value(lam, cs: ConstraintSet, mode: str = "exact") -> float:
    _check_mode(mode)
    lam = np.asarray(lam, dtype=float)
    _, log_z = posterior_probs(lam, cs.payoffs)
    value = log_z - float(np.dot(lam, cs.prices))
    if mode == "least_squares":
        value += _penalty(lam, cs.weights)
    return value


def gradient(state: DualState, cs: ConstraintSet, mode: str = "exact") -> np.ndarray:
    _check_mode(mode)
    grad = state.probs @ cs.payoffs - cs.prices
    if mode == "least_squares":
        grad = grad + cs.weights * state.lam
    return grad


def jacobian(state: DualState, cs: ConstraintSet, mode: str = "exact") -> np.ndarray:
    _check_mode(mode)
    _, cov = kernels.weighted_moments(cs.payoffs, state.probs)
    if mode == "least_squares":
        cov = cov + np.diag(cs.weights)
    return cov


def evaluate(lam, cs: ConstraintSet, mode: str = "exact") -> DualState:
    """Posterior, dual value, gradient and Jacobian at ``lam``."""
    _check_mode(mode)
    lam = np.array(lam, dtype=np.float64).reshape(-1)
    if lam.size != len(cs):
        raise ValueError(f"{lam.size} multipliers for {len(cs)} constraints")
    probs, log_z = posterior_probs(lam, cs.payoffs)
    mean, cov = kernels.weighted_moments(cs.payoffs, probs)
    grad = mean - cs.prices
    value = log_z - float(np.dot(lam, cs.prices))
    if mode == "least_squares":
        grad = grad + cs.weights * lam
        cov = cov + np.diag(cs.weights)
        value += _penalty(lam, cs.weights)
    return DualState(lam, probs, log_z, value, grad, cov, mode)


@dataclass(frozen=True)
class StepInfo:
    alpha: float
    condition: float
    regularized: bool


def _near_duplicates(jac, labels, top=5):
    d = np.sqrt(np.clip(np.diag(jac), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = jac / np.outer(d, d)
    corr = np.nan_to_num(corr)
    n = corr.shape[0]
    iu = np.triu_indices(n, k=1)
    order = np.argsort(-np.abs(corr[iu]))[:top]
    name = (lambda i: str(labels[i])) if labels else str
    out = [(name(iu[0][k]), name(iu[1][k]), float(corr[iu][k])) for k in order]
    out += [(name(i), name(i), 0.0) for i in np.flatnonzero(d == 0)[:top]]
    return out


def _factor(jac, labels=None):
    n = jac.shape[0]
    anorm = float(np.max(np.sum(np.abs(jac), axis=0)))
    try:
        factor = linalg.cho_factor(jac, lower=False, check_finite=False)
        regularized = False
    except linalg.LinAlgError:
        eps = 1e-12 * max(np.trace(jac), 0.0) / n
        try:
            factor = linalg.cho_factor(jac + eps * np.eye(n), lower=False, check_finite=False)
        except linalg.LinAlgError:
            raise SingularJacobianError(
                "Jacobian is singular even after diagonal regularization; "
                "look for near-duplicate constraints",
                _near_duplicates(jac, labels),
            ) from None
        regularized = True
        anorm += eps
    rcond, info = lapack.dpocon(factor[0], anorm, uplo="U")
    condition = math.inf if info != 0 or rcond <= 0 else 1.0 / rcond
    return factor, condition, regularized


def newton_step(state: DualState, alpha: float = 1.0, labels=None) -> tuple[np.ndarray, StepInfo]:
    """``lam - alpha * J^{-1} grad`` via Cholesky, with the 1-norm condition estimate."""
    if state.lam.size == 0:
        return state.lam.copy(), StepInfo(alpha, 1.0, False)
    factor, condition, regularized = _factor(state.jacobian, labels)
    direction = linalg.cho_solve(factor, state.gradient, check_finite=False)
    return state.lam - alpha * direction, StepInfo(alpha, condition, regularized)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    dual_value: float
    grad_norm: float
    alpha: float
    condition: float


@dataclass(eq=False)
class CalibrationResult:
    state: DualState
    converged: bool
    iterations: int
    log: list[IterationRecord] = field(default_factory=list)

    @property
    def probs(self) -> np.ndarray:
        return self.state.probs


def calibrate(
    cs: ConstraintSet,
    cfg: SolverConfig | None = None,
    callback: Callable[[int, DualState], None] | None = None,
) -> CalibrationResult:
    """Damped Newton iteration on the dual starting from ``lam = 0``.

    The step factor starts at ``alpha0`` and grows by ``alpha_growth`` after
    every step up to 1. When the Jacobian condition estimate jumps by more than
    ``cond_guard_ratio`` the current step is divided by ``step_shrink`` and
    growth resumes from the reduced value. A non-converged run returns the
    iterate with the smallest gradient norm.
    """
    cfg = cfg or SolverConfig()
    lam = np.zeros(len(cs))
    alpha = cfg.alpha0
    prev_cond = None
    best = None
    log = []
    steps = 0
    converged = False
    while True:
        state = evaluate(lam, cs, cfg.mode)
        if callback is not None:
            callback(steps, state)
        gnorm = state.grad_norm
        if best is None or gnorm < best.grad_norm:
            best = state
        if gnorm < cfg.grad_tol:
            converged = True
            log.append(IterationRecord(steps, state.dual_value, gnorm, math.nan, math.nan))
            break
        if steps >= cfg.max_iters:
            log.append(IterationRecord(steps, state.dual_value, gnorm, math.nan, math.nan))
            break
        factor, cond, _ = _factor(state.jacobian, cs.labels)
        if prev_cond is not None and cond > cfg.cond_guard_ratio * prev_cond:
            alpha /= cfg.step_shrink
        lam = lam - alpha * linalg.cho_solve(factor, state.gradient, check_finite=False)
        log.append(IterationRecord(steps, state.dual_value, gnorm, alpha, cond))
        prev_cond = cond
        alpha = min(1.0, alpha * cfg.alpha_growth)
        steps += 1
    final = state if converged else best
    return CalibrationResult(final, converged, steps, log)


def write_iteration_log(log: list[IterationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "dual_value", "grad_inf_norm", "alpha", "condition"])
        for r in log:
            w.writerow([r.iteration, f"{r.dual_value:.15g}", f"{r.grad_norm:.6e}",
                        "" if math.isnan(r.alpha) else f"{r.alpha:.6g}",
                        "" if math.isnan(r.condition) else f"{r.condition:.6e}"])
