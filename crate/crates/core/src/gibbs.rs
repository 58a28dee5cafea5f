//! Conjugate conditional updates for every parameter except `X`.
//!
//! Network-only variants take [`NetworkData`] and never see clinical fields,
//! which is what keeps stage one of the two-stage sampler clean.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{BsnError, Result};
use crate::model::{
    clinical_mean, vecl_residual_sq, ClinicalData, Dataset, GammaPrior, Hyperparams, ModelState,
    NetworkData,
};
use crate::numerics::{gamma, mvn_from_precision, normal};

/// Gaussian conditional in information form: precision and natural parameter.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub precision: DMatrix<f64>,
    pub natural: DVector<f64>,
}

impl GaussianConditional {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        Ok(mvn_from_precision(rng, &self.precision, &self.natural)?.1)
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        self.precision
            .clone()
            .cholesky()
            .map(|c| c.solve(&self.natural))
            .ok_or_else(|| {
                BsnError::Numerical("conditional precision is not positive definite".into())
            })
    }
}

/// Network-only conditional of `λᵢ` given its projections `diag(UᵀYᵢU)`:
/// independent coordinates with precision `σ⁻² + τ_λ⁻²`.
pub fn lambda_network_conditional(
    projection: &[f64],
    sigma_sq: f64,
    tau_lambda_sq: f64,
) -> GaussianConditional {
    let q = projection.len();
    let p = 1.0 / sigma_sq + 1.0 / tau_lambda_sq;
    GaussianConditional {
        precision: DMatrix::from_diagonal_element(q, q, p),
        natural: DVector::from_iterator(q, projection.iter().map(|d| d / sigma_sq)),
    }
}

/// Adds the clinical likelihood of subject `i` to a network-only λ conditional.
pub fn lambda_joint_conditional(
    projection: &[f64],
    c: f64,
    z: &[f64],
    state: &ModelState,
) -> GaussianConditional {
    let mut cond = lambda_network_conditional(projection, state.sigma_sq, state.tau_lambda_sq);
    let inv_tau = 1.0 / state.tau_sq;
    let covariate_part: f64 = state.alpha.iter().zip(z).map(|(a, z)| a * z).sum();
    let offset = c - covariate_part;
    cond.precision += &state.beta * state.beta.transpose() * inv_tau;
    cond.natural += &state.beta * (inv_tau * offset);
    cond
}

fn projection(networks: &NetworkData, i: usize, u: &DMatrix<f64>) -> Vec<f64> {
    let yu = networks.dense(i) * u;
    (0..u.ncols())
        .map(|l| u.column(l).dot(&yu.column(l)))
        .collect()
}

fn check_subject(i: usize, m: usize) -> Result<()> {
    if i >= m {
        return Err(BsnError::Dimension(format!(
            "subject index {i} out of range for {m} subjects"
        )));
    }
    Ok(())
}

/// Draws `λᵢ` from its full conditional (network and clinical terms).
pub fn update_lambda_joint<R: Rng + ?Sized>(
    i: usize,
    state: &ModelState,
    data: &Dataset,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_subject(i, data.len())?;
    let proj = projection(data.networks(), i, state.u.matrix());
    let clinical = data.clinical();
    let z: Vec<f64> = clinical.z.row(i).iter().copied().collect();
    lambda_joint_conditional(&proj, clinical.c[i], &z, state).sample(rng)
}

/// Draws `λᵢ` using only the network likelihood and its prior.
pub fn update_lambda_network_only<R: Rng + ?Sized>(
    i: usize,
    state: &ModelState,
    networks: &NetworkData,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_subject(i, networks.len())?;
    let proj = projection(networks, i, state.u.matrix());
    sample_lambda_network(&proj, state.sigma_sq, state.tau_lambda_sq, rng)
}

/// Diagonal-precision draw used by stage one and at prediction time.
pub fn sample_lambda_network<R: Rng + ?Sized>(
    projection: &[f64],
    sigma_sq: f64,
    tau_lambda_sq: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let p = 1.0 / sigma_sq + 1.0 / tau_lambda_sq;
    let var = 1.0 / p;
    let draws: Result<Vec<f64>> = projection
        .iter()
        .map(|d| normal(rng, d / sigma_sq * var, var))
        .collect();
    Ok(DVector::from_vec(draws?))
}

/// Conditional of `d = [β; α]` given the loadings in `lambdas`.
pub fn coeff_conditional(
    lambdas: &DMatrix<f64>,
    clinical: &ClinicalData,
    state: &ModelState,
) -> Result<GaussianConditional> {
    let m = clinical.len();
    if m == 0 {
        return Err(BsnError::Config(
            "coefficient update needs at least one subject".into(),
        ));
    }
    if lambdas.nrows() != m {
        return Err(BsnError::Dimension(format!(
            "{} loading rows for {m} outcomes",
            lambdas.nrows()
        )));
    }
    let q = lambdas.ncols();
    let k = q + clinical.r();
    let inv_tau = 1.0 / state.tau_sq;
    let mut precision = DMatrix::zeros(k, k);
    let mut natural = DVector::zeros(k);
    for i in 0..m {
        let lam: Vec<f64> = lambdas.row(i).iter().copied().collect();
        let x = clinical.design_row(i, &lam);
        precision += &x * x.transpose() * inv_tau;
        natural += x * (clinical.c[i] * inv_tau);
    }
    for j in 0..k {
        precision[(j, j)] += if j < q {
            1.0 / state.tau_beta_sq
        } else {
            1.0 / state.tau_alpha_sq
        };
    }
    Ok(GaussianConditional { precision, natural })
}

/// Draws `d = [β; α]` and returns it; the caller splits it.
pub fn update_coeffs<R: Rng + ?Sized>(
    state: &ModelState,
    clinical: &ClinicalData,
    rng: &mut R,
) -> Result<DVector<f64>> {
    coeff_conditional(&state.lambdas, clinical, state)?.sample(rng)
}

/// Posterior Gamma on a precision after observing `count` squared terms summing to `ss`.
pub fn precision_posterior(prior: GammaPrior, count: usize, ss: f64) -> GammaPrior {
    GammaPrior {
        shape: prior.shape + count as f64 / 2.0,
        rate: prior.rate + ss / 2.0,
    }
}

fn draw_variance<R: Rng + ?Sized>(post: GammaPrior, rng: &mut R) -> Result<f64> {
    Ok(1.0 / gamma(rng, post.shape, post.rate)?)
}

pub fn sigma_sq_posterior(
    state: &ModelState,
    networks: &NetworkData,
    hyper: &Hyperparams,
) -> GammaPrior {
    let ss: f64 = (0..networks.len())
        .map(|i| vecl_residual_sq(networks.network(i), state.u.matrix(), &state.lambda_row(i)))
        .sum();
    precision_posterior(
        hyper.sigma_sq_prior(),
        networks.len() * networks.edge_count(),
        ss,
    )
}

pub fn tau_sq_posterior(
    state: &ModelState,
    clinical: &ClinicalData,
    hyper: &Hyperparams,
) -> GammaPrior {
    let beta: Vec<f64> = state.beta.iter().copied().collect();
    let alpha: Vec<f64> = state.alpha.iter().copied().collect();
    let ss: f64 = (0..clinical.len())
        .map(|i| {
            let z: Vec<f64> = clinical.z.row(i).iter().copied().collect();
            (clinical.c[i] - clinical_mean(&z, &state.lambda_row(i), &beta, &alpha)).powi(2)
        })
        .sum();
    precision_posterior(hyper.tau_sq_prior(), clinical.len(), ss)
}

pub fn tau_lambda_sq_posterior(state: &ModelState, hyper: &Hyperparams) -> GammaPrior {
    precision_posterior(
        hyper.tau_lambda_sq_prior(),
        state.lambdas.len(),
        state.lambdas.norm_squared(),
    )
}

pub fn tau_beta_sq_posterior(state: &ModelState, hyper: &Hyperparams) -> GammaPrior {
    precision_posterior(
        hyper.tau_beta_sq_prior(),
        state.beta.len(),
        state.beta.norm_squared(),
    )
}

pub fn tau_alpha_sq_posterior(state: &ModelState, hyper: &Hyperparams) -> GammaPrior {
    precision_posterior(
        hyper.tau_alpha_sq_prior(),
        state.alpha.len(),
        state.alpha.norm_squared(),
    )
}

pub fn update_sigma_sq<R: Rng + ?Sized>(
    state: &ModelState,
    networks: &NetworkData,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    draw_variance(sigma_sq_posterior(state, networks, hyper), rng)
}

pub fn update_tau_sq<R: Rng + ?Sized>(
    state: &ModelState,
    clinical: &ClinicalData,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    draw_variance(tau_sq_posterior(state, clinical, hyper), rng)
}

pub fn update_tau_lambda_sq<R: Rng + ?Sized>(
    state: &ModelState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    draw_variance(tau_lambda_sq_posterior(state, hyper), rng)
}

pub fn update_tau_beta_sq<R: Rng + ?Sized>(
    state: &ModelState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    draw_variance(tau_beta_sq_posterior(state, hyper), rng)
}

pub fn update_tau_alpha_sq<R: Rng + ?Sized>(
    state: &ModelState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    draw_variance(tau_alpha_sq_posterior(state, hyper), rng)
}

fn set_coeffs(state: &mut ModelState, d: &DVector<f64>) {
    let q = state.beta.len();
    state.beta = d.rows(0, q).into_owned();
    state.alpha = d.rows(q, d.len() - q).into_owned();
}

/// One full sweep in the fixed order: λ's, d, σ², τ², τ_λ², τ_β², τ_α².
pub fn sweep_joint<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &Dataset,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    for i in 0..data.len() {
        let lam = update_lambda_joint(i, state, data, rng)?;
        state.lambdas.set_row(i, &lam.transpose());
    }
    let d = update_coeffs(state, data.clinical(), rng)?;
    set_coeffs(state, &d);
    state.sigma_sq = update_sigma_sq(state, data.networks(), hyper, rng)?;
    state.tau_sq = update_tau_sq(state, data.clinical(), hyper, rng)?;
    state.tau_lambda_sq = update_tau_lambda_sq(state, hyper, rng)?;
    state.tau_beta_sq = update_tau_beta_sq(state, hyper, rng)?;
    state.tau_alpha_sq = update_tau_alpha_sq(state, hyper, rng)?;
    Ok(())
}

/// Network block only: λ's, σ², τ_λ².
pub fn sweep_network<R: Rng + ?Sized>(
    state: &mut ModelState,
    networks: &NetworkData,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    for i in 0..networks.len() {
        let lam = update_lambda_network_only(i, state, networks, rng)?;
        state.lambdas.set_row(i, &lam.transpose());
    }
    state.sigma_sq = update_sigma_sq(state, networks, hyper, rng)?;
    state.tau_lambda_sq = update_tau_lambda_sq(state, hyper, rng)?;
    Ok(())
}

/// Clinical block only, treating `state.lambdas` as data: d, τ², τ_β², τ_α².
pub fn sweep_clinical<R: Rng + ?Sized>(
    state: &mut ModelState,
    clinical: &ClinicalData,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let d = update_coeffs(state, clinical, rng)?;
    set_coeffs(state, &d);
    state.tau_sq = update_tau_sq(state, clinical, hyper, rng)?;
    state.tau_beta_sq = update_tau_beta_sq(state, hyper, rng)?;
    state.tau_alpha_sq = update_tau_alpha_sq(state, hyper, rng)?;
    Ok(())
}
