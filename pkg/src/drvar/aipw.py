"""Augmented inverse probability weighting estimate of the average causal effect."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, DesignSpec
from .errors import PositivityError, ShapeError
from .nuisance import NuisanceFits, fit_nuisance


def eif_values(ds: Dataset, eta, q1, q0, mu: float) -> np.ndarray:
    r"""Doubly robust influence function evaluated per observation.

    .. math::

        U_i = \frac{x_i}{\eta_i}(y_i - Q_{1i}) - \frac{1 - x_i}{1 - \eta_i}(y_i - Q_{0i})
              + Q_{1i} - Q_{0i} - \mu
    """
    eta, q1, q0 = (np.asarray(a, dtype=float) for a in (eta, q1, q0))
    if not (eta.shape == q1.shape == q0.shape == (ds.n,)):
        raise ShapeError("eta, q1 and q0 must all have length n")
    if np.any(eta <= 0) or np.any(eta >= 1):
        raise PositivityError("propensity values must lie strictly inside (0, 1)")
    return _eif(ds.y, ds.x, eta, q1, q0) - mu


def _eif(y, x, eta, q1, q0):
    # U + mu; U is linear in mu with slope -1
    return x / eta * (y - q1) - (1 - x) / (1 - eta) * (y - q0) + (q1 - q0)


@dataclass(frozen=True, eq=False)
class AIPWResult:
    """Point estimate and the naive plug-in variance.

    ``plugin_var_of_mean`` is (1/n^2) sum U_i^2, the variance of ``mu_hat``
    itself; ``se_plugin`` is its square root.
    """

    mu_hat: float
    u_values: np.ndarray
    plugin_var_of_mean: float
    se_plugin: float
    nuisance: NuisanceFits | None = None

    @property
    def n(self) -> int:
        return self.u_values.size


def aipw_from_nuisance(ds: Dataset, eta, q1, q0, nuisance=None) -> AIPWResult:
    """Closed-form root of sum U_i(mu) = 0 for fixed nuisance predictions."""
    mu_hat = float(np.mean(eif_values(ds, eta, q1, q0, 0.0)))
    u = eif_values(ds, eta, q1, q0, mu_hat)
    var = float(u @ u) / ds.n**2
    return AIPWResult(mu_hat, u, var, float(np.sqrt(var)), nuisance)


def estimate_ace(ds: Dataset, ps_spec: DesignSpec, or_spec: DesignSpec) -> AIPWResult:
    """Fit both nuisance models on ``ds`` and return the AIPW estimate."""
    fits = fit_nuisance(ds, ps_spec, or_spec)
    return aipw_from_nuisance(ds, fits.eta, fits.q1, fits.q0, nuisance=fits)
