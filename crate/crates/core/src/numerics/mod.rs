//! Matrix, quadrature and random-variate primitives shared by the samplers.

mod linalg;
mod quadrature;
mod rng;

pub use linalg::{
    boxprod, devecl, inv_sqrt_spd, kron, log_sum_exp, polar_expand, signed_log_sum_exp,
    symmetric_eigen_sorted, vecl, EuclideanPoint, PolarFactor, StiefelPoint, SymmetricNetwork,
    STIEFEL_TOL,
};
pub use quadrature::{
    build_quadrature, QuadratureKind, QuadratureRule, DEFAULT_GAUSS_HERMITE_NODES,
    DEFAULT_SPARSE_LEVEL,
};
pub use rng::{
    exponential, gamma, matrix_normal_std, multivariate_normal, mvn_from_precision, normal, stream,
    uniform, RngStream,
};
