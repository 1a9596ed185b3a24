"""Nonlinear refinement of fitted constants.

Two methods are offered:

- ``lm``: Levenberg-Marquardt on the residual vector with a forward-difference
  Jacobian and the classical Marquardt damping schedule (start 1e-3, x10 on a
  rejected step, /10 on an accepted one).
- ``quasi_newton``: scipy's L-BFGS-B on the scalar sum of squares.

Both respect per-slot bounds and never return an iterate worse than the
starting point. LM falls back to the quasi-Newton path when the Jacobian
contains non-finite entries.

Constants are differentiated numerically, while x-derivatives elsewhere are
symbolic: constants sit deep inside second derivatives, and a handful of
finite differences in constant space is cheap.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from pisr.core.errors import FitRejected
from pisr.core.logging import logger
from pisr.observability import metrics

ResidualFn = Callable[[np.ndarray], np.ndarray]

_LAMBDA0 = 1e-3
_LAMBDA_MAX = 1e16


@dataclass(frozen=True)
class FitConfig:
    """Constant-fitting options.

    Attributes
    ----------
    method : {"lm", "quasi_newton"}
    max_iterations : int
        Iteration cap (LM outer iterations / L-BFGS-B iterations).
    gradient_tolerance : float
        Stop when the infinity norm of J^T r drops below this.
    step_tolerance : float
        Stop when a step is smaller than ``tol * (|c| + tol)``.
    constant_bounds : sequence of (lo, hi) or None
        One pair per slot; None means unbounded.
    """

    method: Literal["lm", "quasi_newton"] = "lm"
    max_iterations: int = 50
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    constant_bounds: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class FitResult:
    constants: np.ndarray
    sse: float
    converged: bool
    iterations: int
    method: str
    fell_back: bool = False


def _bounds_arrays(bounds: Optional[Sequence[tuple[float, float]]], n: int) -> tuple[np.ndarray, np.ndarray]:
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    if len(bounds) != n:
        raise ValueError(f"expected {n} bound pairs, got {len(bounds)}")
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    return lo, hi


def _sse(r: np.ndarray) -> float:
    return float(np.dot(r, r))


def jacobian(residual_fn: ResidualFn, constants: np.ndarray, r0: np.ndarray | None = None) -> np.ndarray:
    """Forward-difference Jacobian with step ``1e-7 * (1 + |c_j|)``.

    Raises
    ------
    FitRejected
        When every perturbed evaluation is non-finite.
    """
    c = np.asarray(constants, dtype=float)
    if r0 is None:
        r0 = np.asarray(residual_fn(c), dtype=float)
    jac = np.empty((r0.size, c.size))
    any_finite = c.size == 0
    for j in range(c.size):
        h = 1e-7 * (1.0 + abs(c[j]))
        cj = c.copy()
        cj[j] += h
        with np.errstate(all="ignore"):
            rj = np.asarray(residual_fn(cj), dtype=float)
            jac[:, j] = (rj - r0) / h
        if np.all(np.isfinite(rj)):
            any_finite = True
    if not any_finite:
        raise FitRejected("non_finite_jacobian", "all perturbed residual evaluations are non-finite")
    return jac


def _levenberg_marquardt(
    residual_fn: ResidualFn, c0: np.ndarray, r0: np.ndarray, lo: np.ndarray, hi: np.ndarray, config: FitConfig
) -> FitResult | None:
    """LM iterations; returns None if the Jacobian goes non-finite."""
    c, r, sse = c0, r0, _sse(r0)
    lam = _LAMBDA0
    converged = sse == 0.0
    it = 0
    while not converged and it < config.max_iterations:
        it += 1
        try:
            jac = jacobian(residual_fn, c, r)
        except FitRejected:
            return FitResult(c, sse, False, it, "lm")
        if not np.all(np.isfinite(jac)):
            return None
        grad = jac.T @ r
        if np.max(np.abs(grad)) < config.gradient_tolerance:
            converged = True
            break
        jtj = jac.T @ jac
        scale = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        while lam < _LAMBDA_MAX:
            step = np.linalg.lstsq(jtj + lam * np.diag(scale), -grad, rcond=None)[0]
            trial = np.clip(c + step, lo, hi)
            with np.errstate(all="ignore"):
                r_trial = np.asarray(residual_fn(trial), dtype=float)
            sse_trial = _sse(r_trial) if np.all(np.isfinite(r_trial)) else np.inf
            if sse_trial < sse:
                lam = max(lam / 10.0, 1e-15)
                moved = np.abs(trial - c)
                c, r, sse = trial, r_trial, sse_trial
                accepted = True
                if sse == 0.0 or np.all(moved <= config.step_tolerance * (np.abs(c) + config.step_tolerance)):
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            # Damping saturated: no descent direction left at this precision.
            converged = True
    return FitResult(c, sse, converged, it, "lm")


def _quasi_newton(
    residual_fn: ResidualFn, c0: np.ndarray, sse0: float, lo: np.ndarray, hi: np.ndarray, config: FitConfig
) -> FitResult:
    best = {"c": c0.copy(), "sse": sse0}

    def objective(c: np.ndarray) -> float:
        with np.errstate(all="ignore"):
            r = np.asarray(residual_fn(c), dtype=float)
        if not np.all(np.isfinite(r)):
            return 1e300
        value = _sse(r)
        if value < best["sse"]:
            best["c"], best["sse"] = np.array(c, dtype=float), value
        return value

    bounds = [(None if np.isinf(a) else a, None if np.isinf(b) else b) for a, b in zip(lo, hi)]
    res = minimize(
        objective,
        c0,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": config.max_iterations, "gtol": config.gradient_tolerance, "ftol": config.step_tolerance},
    )
    return FitResult(np.clip(best["c"], lo, hi), best["sse"], bool(res.success), int(res.nit), "quasi_newton")


def fit_constants(
    constants: Sequence[float], residual_fn: ResidualFn, config: FitConfig = FitConfig()
) -> FitResult:
    """Refine `constants` to minimise ``sum(residual_fn(c) ** 2)``.

    Raises
    ------
    FitRejected
        When the residual is non-finite at the starting constants.
    """
    lo, hi = _bounds_arrays(config.constant_bounds, len(constants))
    c0 = np.clip(np.asarray(constants, dtype=float), lo, hi)
    with np.errstate(all="ignore"):
        r0 = np.asarray(residual_fn(c0), dtype=float)
    if not np.all(np.isfinite(r0)):
        metrics.inc_fit(config.method, "rejected")
        raise FitRejected("non_finite_start", "residual is non-finite at the initial constants")
    if c0.size == 0:
        return FitResult(c0, _sse(r0), True, 0, config.method)

    start = time.perf_counter()
    result: FitResult | None = None
    if config.method == "lm":
        result = _levenberg_marquardt(residual_fn, c0, r0, lo, hi, config)
        if result is None:
            logger.info("LM Jacobian went non-finite; falling back to L-BFGS-B")
            fallback = _quasi_newton(residual_fn, c0, _sse(r0), lo, hi, config)
            result = FitResult(fallback.constants, fallback.sse, fallback.converged, fallback.iterations,
                               fallback.method, fell_back=True)
    else:
        result = _quasi_newton(residual_fn, c0, _sse(r0), lo, hi, config)

    metrics.observe_fit(result.method, "converged" if result.converged else "stopped", time.perf_counter() - start)
    return result
