use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::error::{BsnError, Result};

/// Every random stream in the crate is a ChaCha8 generator.
pub type RngStream = ChaCha8Rng;

/// Independent, reproducible stream keyed by `(seed, stream_id)`.
pub fn stream(seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() || !mean.is_finite() {
        return Err(BsnError::Parameter(format!(
            "normal({mean}, {var}) is not a valid distribution"
        )));
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + var.sqrt() * z)
}

/// Gamma variate with the given shape and *rate*.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(BsnError::Parameter(format!(
            "gamma(shape={shape}, rate={rate}) is not valid"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| BsnError::Parameter(format!("gamma(shape={shape}, rate={rate}): {e}")))?;
    Ok(g.sample(rng))
}

pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<f64> {
    let d = Exp::new(rate)
        .ok()
        .filter(|_| rate > 0.0 && rate.is_finite())
        .ok_or_else(|| BsnError::Parameter(format!("exponential rate {rate} must be positive")))?;
    Ok(d.sample(rng))
}

/// `n x q` matrix of i.i.d. standard normals, filled column by column.
pub fn matrix_normal_std<R: Rng + ?Sized>(rng: &mut R, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| StandardNormal.sample(rng))
}

pub fn multivariate_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(BsnError::Dimension(format!(
            "covariance is {}x{} but mean has length {}",
            cov.nrows(),
            cov.ncols(),
            mean.len()
        )));
    }
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| BsnError::Parameter("covariance is not positive definite".into()))?;
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    Ok(mean + chol.l() * z)
}

/// Draws from `N(P⁻¹h, P⁻¹)` given a precision `P` and natural parameter `h`.
/// Returns `(mean, draw)`.
pub fn mvn_from_precision<R: Rng + ?Sized>(
    rng: &mut R,
    precision: &DMatrix<f64>,
    natural: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let k = natural.len();
    if precision.nrows() != k || precision.ncols() != k {
        return Err(BsnError::Dimension(format!(
            "precision is {}x{} but natural parameter has length {k}",
            precision.nrows(),
            precision.ncols()
        )));
    }
    let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
        BsnError::Numerical("assembled precision is not positive definite".into())
    })?;
    let mean = chol.solve(natural);
    // P = L Lᵀ, so Lᵀ x = z gives Cov(x) = P⁻¹.
    let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
    let offset = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| BsnError::Numerical("triangular solve failed".into()))?;
    Ok((mean.clone(), mean + offset))
}
