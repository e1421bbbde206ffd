"""Corrected variance estimators for the AIPW estimate.

Three routes account for the covariation between the target influence
function U and the nuisance scores (V for the propensity model, T for the
outcome model):

* :func:`joint_sandwich` solves the stacked system W = (U, V, T) and uses the
  M-estimation sandwich bread^-1 meat bread^-T / n.
* :func:`efficient_score_variance` projects U off the span of the nuisance
  scores using empirical cross moments.
* :func:`bootstrap_joint` refits all parameters on resampled rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy.special import expit

from ._parallel import indexed_map
from .aipw import _eif, estimate_ace
from .core import BlockIndex, Dataset, DesignSpec, JointParams, build_design, flatten
from .errors import (
    CollinearScoresError,
    DegenerateResamplingError,
    EstimationError,
    ShapeError,
    SingularBreadError,
    ValidationError,
)
from .nuisance import clamp_eta

BREAD_COND_MAX = 1e12
PIVOT_TOL = 1e-12
MAX_SKIP_FRACTION = 0.05


@dataclass(frozen=True, eq=False)
class EFMatrix:
    """Per-observation estimating-function values, columns ordered (U | V | T)."""

    values: np.ndarray
    index: BlockIndex

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.index.size:
            raise ShapeError(
                f"values have shape {self.values.shape}, block layout needs {self.index.size} columns"
            )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.values[:, self.index.psi]

    @property
    def t(self) -> np.ndarray:
        return self.values[:, self.index.xi]

    @property
    def nuisance(self) -> np.ndarray:
        return self.values[:, 1:]


class StackedSystem:
    """The joint estimating function W(theta) for one dataset and pair of specs.

    Designs are built once; ``evaluate`` is then cheap enough to call
    repeatedly for finite differences. ``scale`` is the fixed 1/sigma^2
    factor of the outcome score.
    """

    def __init__(self, ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec, scale: float = 1.0):
        self.ds = ds
        self.d_ps = build_design(ds, ps_spec)
        self.d_or = build_design(ds, or_spec)
        self.d_or1 = build_design(ds, or_spec, treatment=1)
        self.d_or0 = build_design(ds, or_spec, treatment=0)
        self.index = BlockIndex(self.d_ps.shape[1], self.d_or.shape[1])
        self.scale = float(scale)

    def evaluate(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.index.size,):
            raise ShapeError(f"theta must have length {self.index.size}, got {theta.shape}")
        y, x = self.ds.y, self.ds.x
        psi, xi = theta[self.index.psi], theta[self.index.xi]
        eta = expit(self.d_ps @ psi)
        u = _eif(y, x, clamp_eta(eta), self.d_or1 @ xi, self.d_or0 @ xi) - theta[0]
        v = (x - eta)[:, None] * self.d_ps
        t = ((y - self.d_or @ xi) / self.scale)[:, None] * self.d_or
        return np.column_stack([u, v, t])

    def mean(self, theta) -> np.ndarray:
        return self.evaluate(theta).mean(axis=0)

    def bread(self, theta) -> np.ndarray:
        """Central-difference estimate of -d mean(W) / d theta."""
        theta = np.asarray(theta, dtype=float)
        p = theta.size
        out = np.empty((p, p))
        for j in range(p):
            h = 1e-5 * max(1.0, abs(theta[j]))
            lo, hi = theta.copy(), theta.copy()
            lo[j] -= h
            hi[j] += h
            out[:, j] = (self.mean(lo) - self.mean(hi)) / (2 * h)
        cond = np.linalg.cond(out)
        if not np.isfinite(cond) or cond > BREAD_COND_MAX:
            raise SingularBreadError(f"bread matrix is ill conditioned (cond = {cond:.3g})")
        return out


def stack_ef(ds, ps_spec, or_spec, theta: JointParams, scale: float = 1.0) -> EFMatrix:
    system = StackedSystem(ds, ps_spec, or_spec, scale)
    if theta.block_index != system.index:
        raise ShapeError(
            f"theta blocks (q={theta.block_index.q}, r={theta.block_index.r}) do not match "
            f"the designs (q={system.index.q}, r={system.index.r})"
        )
    return EFMatrix(system.evaluate(flatten(theta)), system.index)


def bread_matrix(ds, ps_spec, or_spec, theta: JointParams, scale: float = 1.0) -> np.ndarray:
    return StackedSystem(ds, ps_spec, or_spec, scale).bread(flatten(theta))


@dataclass(frozen=True, eq=False)
class SandwichOutput:
    """Joint M-estimation covariance of theta_hat = (mu, psi, xi).

    ``sigma_theta`` is the covariance of theta_hat itself (already divided by
    n), so ``se_mu`` is directly the standard error of mu_hat.
    """

    theta_hat: JointParams
    ef: EFMatrix
    bread: np.ndarray
    meat: np.ndarray
    sigma_theta: np.ndarray
    sigma_mu: float
    se_mu: float


def fitted_theta(ds, ps_spec, or_spec):
    """Solve the stacked system sequentially: psi from V, xi from T, then mu from U.

    Returns ``(theta_hat, aipw_result)``.
    """
    res = estimate_ace(ds, ps_spec, or_spec)
    fits = res.nuisance
    theta = JointParams(res.mu_hat, fits.ps.psi_hat, fits.outcome.xi_hat)
    return theta, res


def joint_sandwich(ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec) -> SandwichOutput:
    theta, res = fitted_theta(ds, ps_spec, or_spec)
    system = StackedSystem(ds, ps_spec, or_spec, res.nuisance.outcome.score_scale)
    vec = flatten(theta)
    values = system.evaluate(vec)
    ef = EFMatrix(values, system.index)

    # the sequential solution must zero every stacked column mean
    means = np.abs(values.mean(axis=0))
    tol = 1e-8 * np.maximum(1.0, np.sqrt(np.mean(values**2, axis=0)))
    if np.any(means > tol):
        j = int(np.argmax(means / tol))
        raise EstimationError(f"stacked system not solved: column {j} mean = {means[j]:.3g}")

    bread = system.bread(vec)
    meat = values.T @ values / ds.n
    meat = 0.5 * (meat + meat.T)
    half = np.linalg.solve(bread, meat)
    sigma = np.linalg.solve(bread, half.T).T / ds.n
    sigma = 0.5 * (sigma + sigma.T)
    sigma_mu = float(sigma[0, 0])
    return SandwichOutput(theta, ef, bread, meat, sigma, sigma_mu, float(np.sqrt(max(sigma_mu, 0.0))))


@dataclass(frozen=True, eq=False)
class EfficientScoreResult:
    u_eff: np.ndarray
    var_mu: float
    se_mu: float
    # I12 I22^{-1}: coefficients of U on the nuisance score columns
    projection: np.ndarray


def efficient_score_variance(ef: EFMatrix, blocks: str = "all") -> EfficientScoreResult:
    """Residualize U on the nuisance scores with empirical second moments.

    ``u_eff = U - I12 I22^{-1} N`` where I12 = mean(U N') and I22 = mean(N N').
    This is the least-squares residual of U on N (no intercept), computed
    through a QR factorization of N.

    ``blocks="all"`` uses N = (V, T); ``blocks="ps"`` uses the propensity
    scores V only. Because U is an influence function rather than a score,
    projecting it on the outcome scores T strips out its residual variation,
    so ``"ps"`` is the variant reported as a standard error in the simulation
    and analysis reports.
    """
    if blocks == "all":
        nuis = ef.nuisance
    elif blocks == "ps":
        nuis = ef.v
    else:
        raise ValidationError(f"blocks must be 'all' or 'ps', got {blocks!r}")
    u = ef.u
    if nuis.shape[1] == 0:
        var = float(u @ u) / ef.n**2
        return EfficientScoreResult(u.copy(), var, float(np.sqrt(var)), np.zeros(0))
    Q, R = np.linalg.qr(nuis)
    diag = np.abs(np.diag(R))
    if diag.min() <= PIVOT_TOL * diag.max():
        raise CollinearScoresError("nuisance score columns are collinear")
    qu = Q.T @ u
    u_eff = u - Q @ qu
    coef = np.linalg.solve(R, qu)
    var = float(u_eff @ u_eff) / ef.n**2
    return EfficientScoreResult(u_eff, var, float(np.sqrt(var)), coef)


def _bootstrap_replicate(ds, ps_spec, or_spec, seed, m):
    rng = np.random.default_rng([seed, m])
    rows = rng.integers(0, ds.n, size=ds.n)
    try:
        theta, _ = fitted_theta(ds.take(rows), ps_spec, or_spec)
    except (ValidationError, EstimationError):
        return None
    return flatten(theta)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    se_mu: float
    sigma_theta_boot: np.ndarray
    estimates: np.ndarray
    n_skipped: int


def bootstrap_joint(ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec,
                    M: int, seed: int, n_jobs: int | None = 1) -> BootstrapResult:
    """Nonparametric bootstrap of the jointly refitted parameter vector.

    Replicate ``m`` resamples rows with a generator seeded by ``(seed, m)``.
    Replicates that fail (single-class treatment, separation) are skipped;
    more than 5% skipped raises :class:`DegenerateResamplingError`. The
    covariance uses divisor M (the number of usable replicates).
    """
    if M < 2:
        raise ValidationError("bootstrap needs M >= 2")
    task = partial(_bootstrap_replicate, ds, ps_spec, or_spec, int(seed))
    results = indexed_map(task, range(M), n_jobs)
    kept = [r for r in results if r is not None]
    skipped = M - len(kept)
    if skipped > MAX_SKIP_FRACTION * M or len(kept) < 2:
        raise DegenerateResamplingError(f"{skipped} of {M} bootstrap replicates were degenerate")
    est = np.vstack(kept)
    centered = est - est.mean(axis=0)
    cov = centered.T @ centered / est.shape[0]
    return BootstrapResult(float(np.sqrt(cov[0, 0])), cov, est, skipped)
