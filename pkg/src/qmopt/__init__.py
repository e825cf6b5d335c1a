"""Optimization over quaternion matrix variables.

Quaternion scalars and matrices, QSVD, real-function calculus on tuples of
quaternion matrices, optimality checkers, and low-rank/sparse solvers.
"""

from .errors import (
    ConvergenceFailure,
    InvalidRank,
    NonFinite,
    NotDifferentiable,
    QuaternionDivisionError,
    ShapeMismatch,
    StallWarning,
)
from .quaternion import I, J, K, ONE, Quaternion, conj, inverse, modulus, mul
from .qmatrix import (
    QMatrix,
    QsvdFactors,
    conj_transpose,
    fro_norm,
    from_real_representation,
    hadamard,
    inner,
    matmul,
    norm_l0,
    norm_l1,
    norm_linf,
    norm_nuclear,
    norm_spectral,
    qsvd,
    rank,
    real_representation,
    singular_values,
    truncate_rank,
)
from .calculus import (
    Certificate,
    MatTuple,
    RealFn,
    check_chain_rule,
    check_convexity_psd,
    check_product_rule,
    check_subgradient,
    directional_derivative,
    fd_gradient,
    gradient,
    hessian_quadratic_form,
    prototype_hessian_apply,
    prototype_objective,
    r_linearly_independent,
    r_product,
)

__version__ = "0.1.0"
