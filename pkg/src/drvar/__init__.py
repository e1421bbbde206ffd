"""Doubly robust ACE estimation with corrected variance estimators."""

from .aipw import AIPWResult, eif_values, estimate_ace
from .core import (
    BlockIndex,
    Dataset,
    DesignSpec,
    Factor,
    JointParams,
    Term,
    build_design,
    flatten,
    term,
    unflatten,
)
from .nuisance import ORFit, PSFit, fit_or, fit_ps, or_scores, ps_scores
from .sscf import SplitPlan, SSCFResult, make_split, sscf_estimate
from .variance import (
    EFMatrix,
    SandwichOutput,
    bootstrap_joint,
    bread_matrix,
    efficient_score_variance,
    joint_sandwich,
    stack_ef,
)

__version__ = "0.1.0"
