"""Fair constrained multi-matching under valuation uncertainty.

Solvers for utilitarian and group-egalitarian welfare that are robust
(worst case over polyhedral or ellipsoidal uncertainty sets) or
risk-averse (CVaR over a valuation distribution), plus the data pipeline
that builds those uncertainty models from bid data, randomized rounding of
fractional solutions, and an evaluation harness.
"""

__version__ = "0.1.0"

from .cvar import (
    CvarConfig,
    cvar_gesw_sampling,
    cvar_usw_gaussian,
    cvar_usw_sampling,
    empirical_cvar,
    gaussian_cvar_coefficient,
    sample_complexity_bound,
)
from .instance import (
    Allocation,
    Instance,
    WelfareSpec,
    group_utilities,
    validate_instance,
    welfare,
)
from .nominal import nominal_gesw, nominal_usw
from .robust import (
    RobustConfig,
    SolveReport,
    adversarial_psga_baseline,
    recover_allocation,
    robust_gesw_ellipsoid_iqp,
    robust_gesw_general,
    robust_gesw_polyhedral,
    robust_usw_ellipsoid_iqp,
    robust_usw_general,
    robust_usw_polyhedral,
)
from .rounding import RoundingPlan, decompose, round_once
from .uncertainty import (
    Bernoulli,
    EllipsoidConstraint,
    EllipsoidSet,
    Empirical,
    Gaussian,
    GroupProductSet,
    PolyhedralSet,
    SkewNormal,
    build_cross_entropy_group_sets,
    build_cross_entropy_polyhedron,
    build_gaussian_ellipsoid,
    build_gaussian_group_ellipsoids,
    sample,
    worst_case_group_utilities,
    worst_case_linear,
)

__all__ = [
    "Allocation",
    "Bernoulli",
    "CvarConfig",
    "EllipsoidConstraint",
    "EllipsoidSet",
    "Empirical",
    "Gaussian",
    "GroupProductSet",
    "Instance",
    "PolyhedralSet",
    "RobustConfig",
    "RoundingPlan",
    "SkewNormal",
    "SolveReport",
    "WelfareSpec",
    "adversarial_psga_baseline",
    "build_cross_entropy_group_sets",
    "build_cross_entropy_polyhedron",
    "build_gaussian_ellipsoid",
    "build_gaussian_group_ellipsoids",
    "cvar_gesw_sampling",
    "cvar_usw_gaussian",
    "cvar_usw_sampling",
    "decompose",
    "empirical_cvar",
    "gaussian_cvar_coefficient",
    "group_utilities",
    "nominal_gesw",
    "nominal_usw",
    "recover_allocation",
    "robust_gesw_ellipsoid_iqp",
    "robust_gesw_general",
    "robust_gesw_polyhedral",
    "robust_usw_ellipsoid_iqp",
    "robust_usw_general",
    "robust_usw_polyhedral",
    "round_once",
    "sample",
    "sample_complexity_bound",
    "validate_instance",
    "welfare",
    "worst_case_group_utilities",
    "worst_case_linear",
]
