"""
Baseline regression of Fisher-scale correlations on auxiliary covariates.

Three fitters share one result type, ``FittedBaseline``:

* ``fit_ols``      ordinary least squares with an intercept (statsmodels)
* ``fit_splines``  cubic B-spline least squares, one covariate, quantile knots
* ``fit_gls``      Gaussian likelihood with known measurement-error covariance
                   Phi and unknown homoscedastic error, by adaptive gradient
                   ascent over (beta, log sigma_eps^2)
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import statsmodels.api as sm
from scipy import linalg
from scipy.interpolate import BSpline

from config.settings import Config
from utils.errors import (
    DimensionMismatch,
    InputError,
    NonPSDPhi,
    RankDeficient,
    TooFewPoints,
)

logger = logging.getLogger(__name__)

SPLINE_DEGREE = 3
MAX_STEP_HALVINGS = 200
KINDS = ("ols", "splines", "gls")
PHI_ESTIMATORS = ("gaussian", "empirical")


@dataclass(frozen=True)
class GradientControls:
    """Step size b, acceleration a, relative-change threshold s and iteration cap T."""

    step: float = field(default_factory=lambda: Config.GLS_STEP)
    accel: float = field(default_factory=lambda: Config.GLS_ACCEL)
    tol: float = field(default_factory=lambda: Config.GLS_TOL)
    max_iter: int = field(default_factory=lambda: Config.GLS_MAX_ITER)

    def __post_init__(self):
        if self.step <= 0 or self.accel <= 1 or self.tol <= 0 or self.max_iter < 1:
            raise InputError("gradient controls need step > 0, accel > 1, tol > 0, max_iter >= 1")


@dataclass(frozen=True, eq=False)
class RegressionSpec:
    """How the baseline function is parameterized and fitted."""

    kind: str
    tau: Optional[int] = None
    phi: Optional[np.ndarray] = None
    phi_estimator: str = "gaussian"
    controls: GradientControls = field(default_factory=GradientControls)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown regression kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "splines" and (self.tau is None or int(self.tau) < 1):
            raise InputError("spline regression needs tau >= 1 interior knots")
        if self.kind == "gls" and self.phi_estimator not in PHI_ESTIMATORS:
            raise InputError(f"unknown Phi estimator {self.phi_estimator!r}")

    @classmethod
    def ols(cls) -> "RegressionSpec":
        return cls(kind="ols")

    @classmethod
    def splines(cls, tau: int) -> "RegressionSpec":
        return cls(kind="splines", tau=int(tau))

    @classmethod
    def gls(cls, phi: Optional[np.ndarray] = None, phi_estimator: str = "gaussian",
            controls: Optional[GradientControls] = None) -> "RegressionSpec":
        return cls(kind="gls", phi=phi, phi_estimator=phi_estimator,
                   controls=controls or GradientControls())

    @property
    def label(self) -> str:
        if self.kind == "splines":
            return f"splines(tau={self.tau})"
        return self.kind


@dataclass(frozen=True, eq=False)
class FittedBaseline:
    """A fitted baseline f-hat, evaluable on the Fisher scale."""

    kind: str
    beta: np.ndarray
    q: int
    residual_variance: float
    knots: Optional[np.ndarray] = None
    tau: Optional[int] = None
    sigma_eps_sq: Optional[float] = None
    objective_trace: Tuple[float, ...] = ()
    converged: bool = True
    iterations: int = 0
    warnings: Tuple[str, ...] = ()

    @property
    def knot_locations(self) -> Optional[np.ndarray]:
        """Interior knots (splines only)."""
        if self.knots is None:
            return None
        return self.knots[SPLINE_DEGREE + 1:-(SPLINE_DEGREE + 1)]

    @property
    def label(self) -> str:
        return f"splines(tau={self.tau})" if self.kind == "splines" else self.kind

    def predict(self, W: np.ndarray) -> np.ndarray:
        """Evaluate f-hat; splines continue linearly beyond the boundary knots."""
        W = _as_design(W)
        if W.shape[1] != self.q:
            raise DimensionMismatch(f"model expects {self.q} covariates, got {W.shape[1]}")
        if self.kind != "splines":
            return self.beta[0] + W @ self.beta[1:]

        x = W[:, 0]
        lo, hi = self.knots[0], self.knots[-1]
        spline = BSpline(self.knots, self.beta, SPLINE_DEGREE, extrapolate=True)
        out = spline(np.clip(x, lo, hi))
        below, above = x < lo, x > hi
        if below.any() or above.any():
            slope = spline.derivative()
            out[below] += slope(lo) * (x[below] - lo)
            out[above] += slope(hi) * (x[above] - hi)
        return out

    def to_dict(self) -> Dict[str, Any]:
        report = {
            "kind": self.kind,
            "label": self.label,
            "coefficients": self.beta,
            "residual_variance": self.residual_variance,
            "converged": self.converged,
            "warnings": list(self.warnings),
        }
        if self.kind == "splines":
            report["tau"] = self.tau
            report["knots"] = self.knot_locations
            report["boundary"] = [self.knots[0], self.knots[-1]]
        if self.kind == "gls":
            report["sigma_eps_sq"] = self.sigma_eps_sq
            report["iterations"] = self.iterations
            report["objective_trace"] = list(self.objective_trace)
        return report


def _as_design(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if W.ndim != 2:
        raise DimensionMismatch("covariates must be a vector or a 2-d array")
    return W


def _check_response(y: np.ndarray, W: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size != W.shape[0]:
        raise DimensionMismatch(f"{y.size} responses for {W.shape[0]} covariate rows")
    return y


def fit_ols(y: np.ndarray, W: np.ndarray) -> FittedBaseline:
    """Least squares fit of y on [1 | W]."""
    W = _as_design(W)
    y = _check_response(y, W)
    m, q = W.shape
    if m < q + 1:
        raise TooFewPoints(f"OLS with {q} covariates needs at least {q + 1} pairs, got {m}")
    X = sm.add_constant(W, has_constant="add")
    if np.linalg.matrix_rank(X) < q + 1:
        raise RankDeficient("design matrix [1 | W] is not full column rank")
    result = sm.OLS(y, X).fit()
    return FittedBaseline(kind="ols", beta=np.asarray(result.params, dtype=float), q=q,
                          residual_variance=float(result.ssr) / m)


def _quantile_knots(w: np.ndarray, tau: int) -> Tuple[np.ndarray, List[str]]:
    """Interior knots at quantiles k/(tau+1), made strictly increasing."""
    lo, hi = float(w.min()), float(w.max())
    raw = np.quantile(w, np.arange(1, tau + 1) / (tau + 1.0))
    distinct = np.unique(w)
    knots: List[float] = []
    previous = lo
    for knot in raw:
        if previous < knot < hi:
            knots.append(float(knot))
            previous = float(knot)
            continue
        # coincident knot: move halfway to the next distinct data value
        above = distinct[distinct > previous]
        if above.size and previous < (previous + above[0]) / 2.0 < hi:
            knot = (previous + above[0]) / 2.0
            knots.append(float(knot))
            previous = float(knot)
    warnings = []
    if len(knots) < tau:
        message = f"tau reduced from {tau} to {len(knots)}: coincident quantile knots"
        logger.warning(message)
        warnings.append(message)
    return np.asarray(knots), warnings


def fit_splines(y: np.ndarray, w: np.ndarray, tau: int) -> FittedBaseline:
    """Cubic B-spline least squares with ``tau`` interior quantile knots."""
    W = _as_design(w)
    if W.shape[1] != 1:
        raise DimensionMismatch(f"spline regression takes one covariate, got {W.shape[1]}")
    y = _check_response(y, W)
    tau = int(tau)
    if tau < 1:
        raise InputError("tau must be at least 1")
    x = W[:, 0]
    if x.size < tau + SPLINE_DEGREE + 1:
        raise TooFewPoints(f"{x.size} points cannot fit a basis of dimension {tau + SPLINE_DEGREE + 1}")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        raise RankDeficient("all covariate values coincide")

    interior, warnings = _quantile_knots(x, tau)
    knots = np.concatenate([[lo] * (SPLINE_DEGREE + 1), interior, [hi] * (SPLINE_DEGREE + 1)])
    basis = BSpline.design_matrix(x, knots, SPLINE_DEGREE).toarray()
    coef, _, rank, _ = np.linalg.lstsq(basis, y, rcond=None)
    if rank < basis.shape[1]:
        raise RankDeficient(f"spline basis of dimension {basis.shape[1]} has rank {rank}")
    residual = y - basis @ coef
    return FittedBaseline(kind="splines", beta=coef, q=1, knots=knots, tau=interior.size,
                          residual_variance=float(residual @ residual) / x.size,
                          warnings=tuple(warnings))


class _GlsProblem:
    """Objective and gradient in the eigenbasis of Phi, computed once."""

    def __init__(self, y: np.ndarray, X: np.ndarray, eigvals: np.ndarray, eigvecs: np.ndarray):
        self.lam = eigvals
        self.y_rot = eigvecs.T @ y
        self.X_rot = eigvecs.T @ X
        self.q1 = X.shape[1]

    def _parts(self, theta: np.ndarray):
        beta, log_var = theta[:self.q1], theta[self.q1]
        scale = np.exp(log_var)
        v = scale + self.lam
        r = self.y_rot - self.X_rot @ beta
        return scale, v, r

    def objective(self, theta: np.ndarray) -> float:
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            _, v, r = self._parts(theta)
            return float(-np.sum(np.log(v)) - np.sum(r * r / v))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            scale, v, r = self._parts(theta)
            grad_beta = 2.0 * self.X_rot.T @ (r / v)
            grad_phi = -scale * np.sum(1.0 / v) + scale * np.sum(r * r / (v * v))
        return np.concatenate([grad_beta, [grad_phi]])


def _decompose_phi(phi: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray]:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (m, m):
        raise DimensionMismatch(f"Phi must be {m} x {m}, got {phi.shape}")
    scale = max(np.max(np.abs(phi)), 1e-300)
    if not np.allclose(phi, phi.T, rtol=0.0, atol=1e-10 * scale):
        raise NonPSDPhi("Phi is not symmetric")
    eigvals, eigvecs = linalg.eigh((phi + phi.T) / 2.0)
    if eigvals[0] < -1e-10 * max(1.0, np.abs(eigvals).max()):
        raise NonPSDPhi(f"Phi has negative eigenvalue {eigvals[0]:.3e}")
    return np.clip(eigvals, 0.0, None), eigvecs


def gls_objective(y: np.ndarray, W: np.ndarray, phi: np.ndarray, beta: np.ndarray, log_var: float) -> float:
    """-log det(e^phi I + Phi) - r' (e^phi I + Phi)^-1 r with r = y - [1|W] beta."""
    X = sm.add_constant(_as_design(W), has_constant="add")
    y = _check_response(y, X)
    problem = _GlsProblem(y, X, *_decompose_phi(phi, y.size))
    return problem.objective(np.concatenate([np.asarray(beta, dtype=float), [log_var]]))


def gls_gradient(y: np.ndarray, W: np.ndarray, phi: np.ndarray, beta: np.ndarray, log_var: float) -> np.ndarray:
    """Analytic gradient of ``gls_objective`` with respect to (beta, log_var)."""
    X = sm.add_constant(_as_design(W), has_constant="add")
    y = _check_response(y, X)
    problem = _GlsProblem(y, X, *_decompose_phi(phi, y.size))
    return problem.gradient(np.concatenate([np.asarray(beta, dtype=float), [log_var]]))


def fit_gls(y: np.ndarray, W: np.ndarray, phi: np.ndarray,
            controls: Optional[GradientControls] = None) -> FittedBaseline:
    """Maximize the GLS likelihood by adaptive gradient ascent from the OLS fit.

    A step ``b`` that fails to increase the objective is divided by the
    acceleration ``a`` and retried; an accepted step multiplies ``b`` by ``a``.
    Iteration stops when the relative objective change falls below ``tol`` or
    after ``max_iter`` accepted steps (flagged as no progress).
    """
    controls = controls or GradientControls()
    W = _as_design(W)
    y = _check_response(y, W)
    eigvals, eigvecs = _decompose_phi(phi, y.size)

    start = fit_ols(y, W)
    X = sm.add_constant(W, has_constant="add")
    problem = _GlsProblem(y, X, eigvals, eigvecs)
    theta = np.concatenate([start.beta, [np.log(max(start.residual_variance, 1e-12))]])
    value = problem.objective(theta)
    trace = [value]
    step = controls.step
    converged = False
    iterations = 0

    for iterations in range(1, controls.max_iter + 1):
        grad = problem.gradient(theta)
        for _ in range(MAX_STEP_HALVINGS):
            candidate = theta + step * grad
            candidate_value = problem.objective(candidate)
            if np.isfinite(candidate_value) and candidate_value > value:
                break
            step /= controls.accel
        else:
            # no ascent left at machine precision
            converged = True
            break
        change = abs(candidate_value - value) / max(abs(value), 1e-300)
        theta, value = candidate, candidate_value
        trace.append(value)
        logger.debug(f"GLS iteration {iterations}: objective {value:.10g}, step {step:.3g}")
        if change < controls.tol:
            converged = True
            break
        step *= controls.accel

    warnings = []
    if not converged:
        message = f"NoProgress: GLS stopping threshold not met after {controls.max_iter} iterations"
        logger.warning(message)
        warnings.append(message)

    beta = theta[:X.shape[1]]
    residual = y - X @ beta
    return FittedBaseline(kind="gls", beta=beta, q=W.shape[1],
                          residual_variance=float(residual @ residual) / y.size,
                          sigma_eps_sq=float(np.exp(theta[-1])), objective_trace=tuple(trace),
                          converged=converged, iterations=iterations, warnings=tuple(warnings))


def fit_baseline(spec: RegressionSpec, y: np.ndarray, W: np.ndarray,
                 phi: Optional[np.ndarray] = None) -> FittedBaseline:
    """Dispatch on ``spec.kind``; GLS takes ``phi`` (or ``spec.phi``)."""
    if spec.kind == "ols":
        return fit_ols(y, W)
    if spec.kind == "splines":
        return fit_splines(y, W, spec.tau)
    phi = spec.phi if phi is None else phi
    if phi is None:
        raise InputError("GLS regression needs a measurement-error covariance Phi")
    return fit_gls(y, W, phi, spec.controls)


def predict_baseline(model: FittedBaseline, W_all: np.ndarray) -> np.ndarray:
    """Fisher-scale baseline f-hat(W_ij) for every listed pair."""
    return model.predict(W_all)
