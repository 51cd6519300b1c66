"""Weighting estimators of the local average treatment effect.

A library and command-line tool for estimating the mean treatment effect
among compliers in a binary-treatment, binary-instrument design: kappa
weighting in several normalizations, instrument propensity scores fitted by
maximum likelihood or covariate balancing, stacked M-estimation standard
errors, a two-stage least squares benchmark, and a deterministic Monte Carlo
harness with CSV and figure reports.
"""

__version__ = "0.1.0"

from . import data, errors, estimators, inference, ips, kappa, simulation  # noqa: F401
from .data import Dataset, Diagnostic, load_csv, validate, write_csv, zd_cell_counts  # noqa: F401
from .errors import EstimationError  # noqa: F401
from .estimators import (  # noqa: F401
    DEFAULT_KINDS,
    EstimatorKind,
    LateEstimate,
    delta_hat,
    estimate,
    linear_iv,
    parse_kind,
)
from .inference import MomentSystem, SandwichResult, assemble, sandwich, standard_error  # noqa: F401
from .ips import IpsFit, fit_cb, fit_ml, logistic  # noqa: F401
from .kappa import KappaWeights, complier_means, complier_share  # noqa: F401
from .simulation import McSummary, SimDesign, export, generate, run_mc, true_late  # noqa: F401
