"""Parametric nuisance models: logistic propensity score and linear outcome regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .core import Dataset, DesignSpec, build_design
from .errors import ConvergenceError, SingularSystemError, ValidationError

SCORE_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 30
ETA_CLAMP = 1e-10


def _check_rank(design: np.ndarray, what: str) -> None:
    if design.ndim != 2:
        raise ValidationError(f"{what} design must be a matrix")
    n, k = design.shape
    if n < k or np.linalg.matrix_rank(design) < k:
        raise SingularSystemError(f"{what} design is rank deficient ({n}x{k})")


def clamp_eta(eta):
    return np.clip(eta, ETA_CLAMP, 1.0 - ETA_CLAMP)


def _loglik(design, x, psi):
    lin = design @ psi
    return float(np.sum(x * log_expit(lin) + (1 - x) * log_expit(-lin)))


@dataclass(frozen=True, eq=False)
class PSFit:
    psi_hat: np.ndarray
    design: np.ndarray
    x: np.ndarray
    fitted_eta: np.ndarray
    converged: bool
    iterations: int


@dataclass(frozen=True, eq=False)
class ORFit:
    xi_hat: np.ndarray
    design: np.ndarray
    y: np.ndarray
    sigma2_hat: float
    fitted: np.ndarray
    # True when residual variance was exactly zero and 1 is used as the score scale
    sigma2_substituted: bool = False

    @property
    def score_scale(self) -> float:
        return 1.0 if self.sigma2_substituted else self.sigma2_hat


def _check_separation(eta, psi, iterations):
    # a vanishing score with fitted probabilities at 0 or 1 means the MLE is at infinity
    if np.min(np.minimum(eta, 1 - eta)) < ETA_CLAMP:
        raise ConvergenceError(
            "fitted propensities reach 0 or 1: (quasi-)complete separation",
            last_iterate=psi, iterations=iterations,
        )


def fit_ps(design, x, tol: float = SCORE_TOL, max_iter: int = MAX_ITER) -> PSFit:
    """Logistic regression by Newton-Raphson with step halving.

    Solves ``sum_i (x_i - expit(d_i' psi)) d_i = 0``. Convergence means the
    largest absolute score component is below ``tol``.
    """
    design = np.asarray(design, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_rank(design, "propensity")
    if x.min() == x.max():
        raise ValidationError("treatment is constant; propensity model is not identified")

    psi = np.zeros(design.shape[1])
    ll = _loglik(design, x, psi)
    for it in range(1, max_iter + 1):
        eta = expit(design @ psi)
        score = design.T @ (x - eta)
        if np.max(np.abs(score)) < tol:
            _check_separation(eta, psi, it - 1)
            return PSFit(psi, design, x, eta, True, it - 1)
        w = eta * (1 - eta)
        info = design.T @ (design * w[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise ConvergenceError(
                "singular information matrix during Newton iterations",
                last_iterate=psi, iterations=it,
            ) from None
        t = 1.0
        # near the optimum the log-likelihood change drops below float resolution
        slack = 1e-10 * (1.0 + abs(ll))
        for _ in range(MAX_HALVINGS):
            cand = psi + t * step
            ll_new = _loglik(design, x, cand)
            if ll_new >= ll - slack:
                break
            t *= 0.5
        else:
            # no ascent possible at float resolution; take the full step anyway
            cand, ll_new = psi + step, _loglik(design, x, psi + step)
        psi, ll = cand, ll_new

    eta = expit(design @ psi)
    score = design.T @ (x - eta)
    if np.max(np.abs(score)) < tol:
        _check_separation(eta, psi, max_iter)
        return PSFit(psi, design, x, eta, True, max_iter)
    raise ConvergenceError(
        f"propensity fit did not converge in {max_iter} iterations "
        f"(max |score| = {np.max(np.abs(score)):.3g}); possible separation",
        last_iterate=psi, iterations=max_iter,
    )


def fit_or(design, y) -> ORFit:
    """Ordinary least squares via a QR factorization."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_rank(design, "outcome")
    n, r = design.shape
    if n <= r:
        raise SingularSystemError(f"outcome model needs n > r (n={n}, r={r})")
    Q, R = np.linalg.qr(design)
    xi = np.linalg.solve(R, Q.T @ y)
    fitted = design @ xi
    resid = y - fitted
    rss = float(resid @ resid)
    sigma2 = rss / (n - r)
    # exact interpolation up to rounding
    degenerate = sigma2 <= 1e-24 * max(1.0, float(np.mean(y * y)))
    if degenerate:
        sigma2 = 0.0
    return ORFit(xi, design, y, sigma2, fitted, degenerate)


def ps_score_matrix(design, x, psi) -> np.ndarray:
    eta = expit(design @ psi)
    return (x - eta)[:, None] * design


def or_score_matrix(design, y, xi, scale: float = 1.0) -> np.ndarray:
    return ((y - design @ xi) / scale)[:, None] * design


def ps_scores(fit: PSFit) -> np.ndarray:
    """Per-observation propensity scores ``(x_i - eta_i) d_i``."""
    return (fit.x - fit.fitted_eta)[:, None] * fit.design


def or_scores(fit: ORFit) -> np.ndarray:
    """Per-observation outcome scores ``(y_i - Q_i) d_i / sigma2``."""
    return ((fit.y - fit.fitted) / fit.score_scale)[:, None] * fit.design


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    """Both nuisance models fitted on one dataset, with Q(1,.) and Q(0,.) evaluated."""

    ps: PSFit
    outcome: ORFit
    eta: np.ndarray
    q1: np.ndarray
    q0: np.ndarray


def fit_nuisance(ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec,
                 evaluate_on: Dataset | None = None) -> NuisanceFits:
    """Fit PS and OR models on ``ds``.

    Fitted propensities and counterfactual predictions are returned for
    ``evaluate_on`` (defaults to ``ds`` itself), which is how cross-fitting
    evaluates nuisances out of sample.
    """
    ps = fit_ps(build_design(ds, ps_spec), ds.x)
    outcome = fit_or(build_design(ds, or_spec), ds.y)
    target = ds if evaluate_on is None else evaluate_on
    eta = clamp_eta(expit(build_design(target, ps_spec) @ ps.psi_hat))
    q1 = build_design(target, or_spec, treatment=1) @ outcome.xi_hat
    q0 = build_design(target, or_spec, treatment=0) @ outcome.xi_hat
    return NuisanceFits(ps, outcome, eta, q1, q0)
