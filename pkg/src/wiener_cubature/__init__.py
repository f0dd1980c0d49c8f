"""Cubature on Wiener space.

Truncated signatures on free nilpotent groups, cubature formulas and the
random walks they generate, pathwise ODE integration along cubature paths and
weak-approximation estimates built on top of them.
"""
__version__ = "0.1.0"

from .tensor_algebra import (
    Alphabet,
    ContractError,
    TensorSeries,
    cc_distance,
    dilate,
    exp_trunc,
    expected_brownian_signature,
    group_membership_defect,
    homogeneous_norm,
    inverse,
    lie_projection,
    log_trunc,
    tensor_mul,
)
from .paths import PiecewiseLinearPath, cameron_martin_norm, concatenate, one_variation, rescale, reverse, signature
from .cubature import (
    CubatureFormula,
    MomentReport,
    builtin_formula,
    check_moments,
    degree3_formula,
    discrete_formula,
    load_formula,
    ninomiya_victoir_formula,
    ninomiya_victoir_path,
    wong_zakai_formula,
    wong_zakai_path,
)
from .meshes import Mesh, build_cubature_path, kusuoka_mesh, parse_mesh, uniform_mesh, walk_nodes
from .diagnostics import clt_condition_report, donsker_marginal_check, holder_statistic, moment_scaling_check
from .sde import (
    DivergenceError,
    SolutionPath,
    VectorFieldSystem,
    black_scholes_exact,
    black_scholes_expectation,
    integrate_along_path,
    ito_to_stratonovich,
    wong_zakai_reference,
)
from .estimator import (
    ConvergenceReport,
    Payoff,
    convergence_study,
    estimate_mc,
    estimate_tree,
    mesh_family,
    path_payoff_eval,
)
