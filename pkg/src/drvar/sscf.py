"""Sample splitting with cross-fitting (two folds).

Nuisances are fitted on one half of the rows and the influence function is
evaluated on the complementary half; the roles are then swapped and the two
point and variance estimates are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aipw import aipw_from_nuisance
from .core import Dataset, DesignSpec
from .errors import SplitDegeneracyError, ValidationError
from .nuisance import fit_nuisance


@dataclass(frozen=True, eq=False)
class SplitPlan:
    half_a: np.ndarray
    half_b: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        a = np.sort(np.asarray(self.half_a, dtype=np.intp))
        b = np.sort(np.asarray(self.half_b, dtype=np.intp))
        n = a.size + b.size
        if not np.array_equal(np.sort(np.concatenate([a, b])), np.arange(n)):
            raise ValidationError("split halves must partition 0..n-1")
        if a.size != n // 2:
            raise ValidationError(f"half_a must have floor(n/2) = {n // 2} rows, got {a.size}")
        object.__setattr__(self, "half_a", a)
        object.__setattr__(self, "half_b", b)

    @property
    def n(self) -> int:
        return self.half_a.size + self.half_b.size


def make_split(n: int, seed: int) -> SplitPlan:
    """Uniform random partition; ``half_b`` receives the extra row when n is odd."""
    if n < 4:
        raise ValidationError(f"sample splitting needs n >= 4, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitPlan(perm[: n // 2], perm[n // 2:], seed)


@dataclass(frozen=True, eq=False)
class SSCFResult:
    """Cross-fitted estimates.

    ``var_1`` and ``var_2`` are per-split plug-in variances of
    sqrt(n_k)(mu_k - mu); ``se_mu`` = sqrt(var_sscf / n) is the standard
    error of ``mu_sscf``.
    """

    mu_1: float
    mu_2: float
    var_1: float
    var_2: float
    mu_sscf: float
    var_sscf: float
    se_mu: float
    n: int


def _cross_fit(ds, ps_spec, or_spec, target_rows, nuisance_rows):
    target = ds.take(target_rows)
    fits = fit_nuisance(ds.take(nuisance_rows), ps_spec, or_spec, evaluate_on=target)
    res = aipw_from_nuisance(target, fits.eta, fits.q1, fits.q0)
    return res.mu_hat, float(np.mean(res.u_values**2))


def sscf_estimate(ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec, plan: SplitPlan) -> SSCFResult:
    if plan.n != ds.n:
        raise ValidationError(f"split plan is for n={plan.n}, dataset has n={ds.n}")
    for name, rows in (("half_a", plan.half_a), ("half_b", plan.half_b)):
        xs = ds.x[rows]
        if xs.min() == xs.max():
            raise SplitDegeneracyError(
                f"{name} has only {'treated' if xs[0] == 1 else 'control'} rows; "
                "try a different split seed"
            )
    mu_1, var_1 = _cross_fit(ds, ps_spec, or_spec, plan.half_a, plan.half_b)
    mu_2, var_2 = _cross_fit(ds, ps_spec, or_spec, plan.half_b, plan.half_a)
    mu = (mu_1 + mu_2) / 2
    var = (var_1 + var_2) / 2
    return SSCFResult(mu_1, mu_2, var_1, var_2, mu, var, float(np.sqrt(var / ds.n)), ds.n)


def sscf_repeated(ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec,
                  splits: int, seed: int) -> SSCFResult:
    """Average ``mu_sscf`` and ``var_sscf`` over independent splits.

    Split ``k`` uses seed sequence ``(seed, k)``. With ``splits=1`` this is a
    single cross-fit seeded by ``seed``. Per-split fields come from the first
    split.
    """
    if splits < 1:
        raise ValidationError("splits must be >= 1")
    if splits == 1:
        return sscf_estimate(ds, ps_spec, or_spec, make_split(ds.n, seed))
    results = [
        sscf_estimate(ds, ps_spec, or_spec,
                      make_split(ds.n, np.random.SeedSequence([seed, k]).generate_state(1)[0]))
        for k in range(splits)
    ]
    mu = float(np.mean([r.mu_sscf for r in results]))
    var = float(np.mean([r.var_sscf for r in results]))
    first = results[0]
    return SSCFResult(first.mu_1, first.mu_2, first.var_1, first.var_2, mu, var,
                      float(np.sqrt(var / ds.n)), ds.n)
