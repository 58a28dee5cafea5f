//! Parameter state, hyperparameters and every log-density the samplers evaluate.
//!
//! Two network likelihoods live here. [`network_loglik`] is the strict-lower-triangle
//! Gaussian model on `vecl(Yᵢ - UΛᵢUᵀ)`. [`network_kernel_loglik`] is the
//! trace-expanded form `‖Yᵢ‖²_F - 2 tr(ΛᵢUᵀYᵢU) + ‖λᵢ‖²` with the same
//! normalising constant; the λ and X conditionals and the integrated network
//! likelihood are all derived from the latter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{BsnError, Result};
use crate::numerics::{EuclideanPoint, PolarFactor, StiefelPoint, SymmetricNetwork};

/// One subject: connectivity network, scalar outcome, covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub y: SymmetricNetwork,
    pub c: f64,
    pub z: Vec<f64>,
}

/// Network half of a dataset. Stage-one sampling only ever sees this.
#[derive(Debug, Clone)]
pub struct NetworkData {
    n: usize,
    networks: Vec<SymmetricNetwork>,
    dense: Vec<DMatrix<f64>>,
    frob_sq: Vec<f64>,
}

impl NetworkData {
    pub fn new(networks: Vec<SymmetricNetwork>) -> Result<Self> {
        let n = networks.first().map(|y| y.n()).unwrap_or(0);
        if let Some((i, y)) = networks.iter().enumerate().find(|(_, y)| y.n() != n) {
            return Err(BsnError::Dimension(format!(
                "subject {i} has {} nodes, expected {n}",
                y.n()
            )));
        }
        let dense: Vec<DMatrix<f64>> = networks.iter().map(|y| y.to_dense()).collect();
        let frob_sq = dense.iter().map(|d| d.norm_squared()).collect();
        Ok(Self {
            n,
            networks,
            dense,
            frob_sq,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.networks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.networks.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub fn network(&self, i: usize) -> &SymmetricNetwork {
        &self.networks[i]
    }

    pub fn dense(&self, i: usize) -> &DMatrix<f64> {
        &self.dense[i]
    }

    /// `‖Yᵢ‖²_F` over the full matrix (each edge counted twice).
    pub fn frobenius_sq(&self, i: usize) -> f64 {
        self.frob_sq[i]
    }

    /// Row `i` holds `diag(UᵀYᵢU)`.
    pub fn diag_projections(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let q = u.ncols();
        let mut out = DMatrix::zeros(self.len(), q);
        for (i, y) in self.dense.iter().enumerate() {
            let yu = y * u;
            for l in 0..q {
                out[(i, l)] = u.column(l).dot(&yu.column(l));
            }
        }
        out
    }
}

/// Clinical half of a dataset: outcomes `C` and the `M x r` covariate matrix.
#[derive(Debug, Clone)]
pub struct ClinicalData {
    pub c: DVector<f64>,
    pub z: DMatrix<f64>,
}

impl ClinicalData {
    pub fn new(c: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != c.len() {
            return Err(BsnError::Dimension(format!(
                "{} outcomes but {} covariate rows",
                c.len(),
                z.nrows()
            )));
        }
        Ok(Self { c, z })
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn r(&self) -> usize {
        self.z.ncols()
    }

    /// Design row `xᵢ = [λᵢ; zᵢ]`.
    pub fn design_row(&self, i: usize, lambda: &[f64]) -> DVector<f64> {
        let q = lambda.len();
        DVector::from_fn(q + self.r(), |k, _| {
            if k < q {
                lambda[k]
            } else {
                self.z[(i, k - q)]
            }
        })
    }
}

/// A validated collection of subjects sharing `N` and `r`.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    networks: NetworkData,
    clinical: ClinicalData,
}

impl Dataset {
    pub fn new(records: Vec<SubjectRecord>) -> Result<Self> {
        let r = records.first().map(|s| s.z.len()).unwrap_or(0);
        for s in &records {
            if s.z.len() != r {
                return Err(BsnError::Dimension(format!(
                    "subject '{}' has {} covariates, expected {r}",
                    s.id,
                    s.z.len()
                )));
            }
        }
        let networks = NetworkData::new(records.iter().map(|s| s.y.clone()).collect())?;
        let m = records.len();
        let c = DVector::from_iterator(m, records.iter().map(|s| s.c));
        let z = DMatrix::from_fn(m, r, |i, k| records[i].z[k]);
        let clinical = ClinicalData::new(c, z)?;
        Ok(Self {
            records,
            networks,
            clinical,
        })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn networks(&self) -> &NetworkData {
        &self.networks
    }

    pub fn clinical(&self) -> &ClinicalData {
        &self.clinical
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n(&self) -> usize {
        self.networks.n()
    }

    pub fn r(&self) -> usize {
        self.clinical.r()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.records[i].clone()).collect())
    }
}

/// Inverse-gamma prior settings: `1/v ~ Gamma(shape/2, shape·scale/2)` for each variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub nu0: f64,
    pub sigma0_sq: f64,
    pub eta0: f64,
    pub tau0_sq: f64,
    pub gamma0: f64,
    pub kappa0_sq: f64,
    pub omega0: f64,
    pub phi0_sq: f64,
    pub rho0: f64,
    pub psi0_sq: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            nu0: 2.0,
            sigma0_sq: 1.0,
            eta0: 2.0,
            tau0_sq: 1.0,
            gamma0: 2.0,
            kappa0_sq: 1.0,
            omega0: 2.0,
            phi0_sq: 1.0,
            rho0: 2.0,
            psi0_sq: 1.0,
        }
    }
}

/// Shape and rate of the Gamma prior on a precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    fn from_pair(df: f64, scale: f64) -> Self {
        Self {
            shape: df / 2.0,
            rate: df * scale / 2.0,
        }
    }

    /// Log density of the implied inverse-gamma distribution on the variance `v`.
    pub fn ln_inv_gamma_pdf(&self, v: f64) -> f64 {
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln()
            - ln_gamma(self.shape)
            - (self.shape + 1.0) * v.ln()
            - self.rate / v
    }

    /// `log(rate^shape / Γ(shape))`
    pub fn ln_norm(&self) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape)
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("nu0", self.nu0),
            ("sigma0_sq", self.sigma0_sq),
            ("eta0", self.eta0),
            ("tau0_sq", self.tau0_sq),
            ("gamma0", self.gamma0),
            ("kappa0_sq", self.kappa0_sq),
            ("omega0", self.omega0),
            ("phi0_sq", self.phi0_sq),
            ("rho0", self.rho0),
            ("psi0_sq", self.psi0_sq),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(BsnError::Config(format!(
                    "hyperparameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn sigma_sq_prior(&self) -> GammaPrior {
        GammaPrior::from_pair(self.nu0, self.sigma0_sq)
    }
    pub fn tau_lambda_sq_prior(&self) -> GammaPrior {
        GammaPrior::from_pair(self.eta0, self.tau0_sq)
    }
    pub fn tau_beta_sq_prior(&self) -> GammaPrior {
        GammaPrior::from_pair(self.gamma0, self.kappa0_sq)
    }
    pub fn tau_alpha_sq_prior(&self) -> GammaPrior {
        GammaPrior::from_pair(self.omega0, self.phi0_sq)
    }
    pub fn tau_sq_prior(&self) -> GammaPrior {
        GammaPrior::from_pair(self.rho0, self.psi0_sq)
    }
}

/// Full parameter set. `u` is always the polar factor of `x`.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub x: EuclideanPoint,
    pub u: StiefelPoint,
    /// `M x q`, row `i` is `λᵢ`.
    pub lambdas: DMatrix<f64>,
    pub sigma_sq: f64,
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub tau_sq: f64,
    pub tau_lambda_sq: f64,
    pub tau_beta_sq: f64,
    pub tau_alpha_sq: f64,
}

impl ModelState {
    pub fn q(&self) -> usize {
        self.u.q()
    }

    pub fn lambda_row(&self, i: usize) -> Vec<f64> {
        self.lambdas.row(i).iter().copied().collect()
    }

    /// Replaces `x` and recomputes `u`.
    pub fn set_x(&mut self, x: EuclideanPoint) -> Result<()> {
        self.u = crate::numerics::polar_expand(&x)?;
        self.x = x;
        Ok(())
    }

    pub fn check_variances(&self) -> Result<()> {
        let all = [
            ("sigma_sq", self.sigma_sq),
            ("tau_sq", self.tau_sq),
            ("tau_lambda_sq", self.tau_lambda_sq),
            ("tau_beta_sq", self.tau_beta_sq),
            ("tau_alpha_sq", self.tau_alpha_sq),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(BsnError::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(BsnError::Parameter(format!(
            "{name} must be positive, got {v}"
        )));
    }
    Ok(())
}

/// Entry `(j,k)` of `U diag(λ) Uᵀ`.
fn low_rank_entry(u: &DMatrix<f64>, lambda: &[f64], j: usize, k: usize) -> f64 {
    lambda
        .iter()
        .enumerate()
        .map(|(l, &lam)| lam * u[(j, l)] * u[(k, l)])
        .sum()
}

/// Sum of squared strict-lower-triangle residuals `‖vecl(Y - UΛUᵀ)‖²`.
pub fn vecl_residual_sq(y: &SymmetricNetwork, u: &DMatrix<f64>, lambda: &[f64]) -> f64 {
    let n = y.n();
    let mut ss = 0.0;
    let mut it = y.vecl().iter();
    for col in 0..n {
        for row in col + 1..n {
            let r = it.next().expect("vecl length") - low_rank_entry(u, lambda, row, col);
            ss += r * r;
        }
    }
    ss
}

/// Gaussian log-likelihood of `vecl(Y)` with mean `vecl(UΛUᵀ)` and variance `σ²`.
pub fn network_loglik(
    y: &SymmetricNetwork,
    u: &StiefelPoint,
    lambda: &[f64],
    sigma_sq: f64,
) -> Result<f64> {
    check_positive("sigma_sq", sigma_sq)?;
    check_lambda_dims(u, lambda)?;
    if u.n() != y.n() {
        return Err(BsnError::Dimension(format!(
            "U has {} rows but Y is {}x{}",
            u.n(),
            y.n(),
            y.n()
        )));
    }
    let p = y.edge_count() as f64;
    let ss = vecl_residual_sq(y, u.matrix(), lambda);
    Ok(-0.5 * p * (2.0 * PI * sigma_sq).ln() - ss / (2.0 * sigma_sq))
}

fn check_lambda_dims(u: &StiefelPoint, lambda: &[f64]) -> Result<()> {
    if lambda.len() != u.q() {
        return Err(BsnError::Dimension(format!(
            "λ has length {} but U has {} columns",
            lambda.len(),
            u.q()
        )));
    }
    Ok(())
}

/// Trace-expanded network log-likelihood
/// `-(P/2) log(2πσ²) - (‖Y‖²_F - 2 λᵀ diag(UᵀYU) + ‖λ‖²) / (2σ²)`.
pub fn network_kernel_loglik(
    y: &DMatrix<f64>,
    u: &DMatrix<f64>,
    lambda: &[f64],
    sigma_sq: f64,
) -> Result<f64> {
    check_positive("sigma_sq", sigma_sq)?;
    let n = y.nrows();
    let p = (n * (n - 1) / 2) as f64;
    let yu = y * u;
    let cross: f64 = lambda
        .iter()
        .enumerate()
        .map(|(l, &lam)| lam * u.column(l).dot(&yu.column(l)))
        .sum();
    let lam_sq: f64 = lambda.iter().map(|v| v * v).sum();
    Ok(-0.5 * p * (2.0 * PI * sigma_sq).ln()
        - (y.norm_squared() - 2.0 * cross + lam_sq) / (2.0 * sigma_sq))
}

/// Gaussian log density of `c` given mean `βᵀλ + αᵀz` and variance `τ²`.
pub fn clinical_loglik(
    c: f64,
    z: &[f64],
    lambda: &[f64],
    beta: &[f64],
    alpha: &[f64],
    tau_sq: f64,
) -> Result<f64> {
    check_positive("tau_sq", tau_sq)?;
    if beta.len() != lambda.len() || alpha.len() != z.len() {
        return Err(BsnError::Dimension(format!(
            "β/λ lengths {}/{} and α/z lengths {}/{} must match",
            beta.len(),
            lambda.len(),
            alpha.len(),
            z.len()
        )));
    }
    let mean = clinical_mean(z, lambda, beta, alpha);
    Ok(normal_ln_pdf(c, mean, tau_sq))
}

pub fn clinical_mean(z: &[f64], lambda: &[f64], beta: &[f64], alpha: &[f64]) -> f64 {
    let b: f64 = beta.iter().zip(lambda).map(|(b, l)| b * l).sum();
    let a: f64 = alpha.iter().zip(z).map(|(a, z)| a * z).sum();
    b + a
}

fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

/// `log N(v; 0, var·I)`
fn iso_normal_ln_pdf(v: &[f64], var: f64) -> f64 {
    let k = v.len() as f64;
    let ss: f64 = v.iter().map(|x| x * x).sum();
    -0.5 * k * (2.0 * PI * var).ln() - ss / (2.0 * var)
}

/// The log posterior of `X` given everything else, up to a constant:
/// `-½ tr(XᵀX) + σ⁻² Σᵢ tr(Λᵢ U_Xᵀ Yᵢ U_X)`.
///
/// The likelihood part only depends on `Wₗ = Σᵢ λᵢₗ Yᵢ`, which is built once per
/// set of loadings so that each evaluation costs `O(q N²)`.
#[derive(Debug, Clone)]
pub struct XTarget {
    weighted: Vec<DMatrix<f64>>,
    inv_sigma_sq: f64,
}

impl XTarget {
    pub fn new(lambdas: &DMatrix<f64>, sigma_sq: f64, networks: &NetworkData) -> Result<Self> {
        check_positive("sigma_sq", sigma_sq)?;
        if lambdas.nrows() != networks.len() {
            return Err(BsnError::Dimension(format!(
                "{} loading rows for {} networks",
                lambdas.nrows(),
                networks.len()
            )));
        }
        let n = networks.n();
        let weighted = (0..lambdas.ncols())
            .map(|l| {
                let mut w = DMatrix::<f64>::zeros(n, n);
                for i in 0..networks.len() {
                    let lam = lambdas[(i, l)];
                    if lam != 0.0 {
                        w += networks.dense(i) * lam;
                    }
                }
                w
            })
            .collect();
        Ok(Self {
            weighted,
            inv_sigma_sq: 1.0 / sigma_sq,
        })
    }

    pub fn q(&self) -> usize {
        self.weighted.len()
    }

    /// `σ⁻² Σₗ uₗᵀ Wₗ uₗ` for an orthonormal `U`.
    pub fn trace_term(&self, u: &DMatrix<f64>) -> f64 {
        self.inv_sigma_sq
            * self
                .weighted
                .iter()
                .enumerate()
                .map(|(l, w)| {
                    let col = u.column(l);
                    col.dot(&(w * col))
                })
                .sum::<f64>()
    }

    pub fn log_density(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_shape(x)?;
        let pf = PolarFactor::compute(x)?;
        Ok(-0.5 * x.norm_squared() + self.trace_term(&pf.u))
    }

    pub fn log_density_and_grad(&self, x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check_shape(x)?;
        let pf = PolarFactor::compute(x)?;
        let u = &pf.u;
        let q = self.q();

        // G = ∂f/∂U, column l = 2σ⁻² Wₗ uₗ
        let mut g = DMatrix::zeros(x.nrows(), q);
        let mut trace = 0.0;
        for (l, w) in self.weighted.iter().enumerate() {
            let wu = w * u.column(l);
            trace += u.column(l).dot(&wu);
            g.set_column(l, &(wu * (2.0 * self.inv_sigma_sq)));
        }
        let value = -0.5 * x.norm_squared() + self.inv_sigma_sq * trace;

        // Chain rule through U = X S^{-1/2}, S = XᵀX:
        // ∇ₓ = G S^{-1/2} - X (C + Cᵀ), where in the eigenbasis of S
        // C̃ᵢⱼ = B̃ⱼᵢ / (rᵢ + rⱼ), B = S^{-1/2} Gᵀ X S^{-1/2}, r = sqrt(eig(S)).
        let v = &pf.eigenvectors;
        let roots = pf.eigenvalues.map(f64::sqrt);
        let b = &pf.inv_sqrt * g.transpose() * x * &pf.inv_sqrt;
        let bt = v.transpose() * b * v;
        let ct = DMatrix::from_fn(q, q, |i, j| bt[(j, i)] / (roots[i] + roots[j]));
        let c = v * ct * v.transpose();
        let sym = &c + c.transpose();
        let grad = &g * &pf.inv_sqrt - x * sym - x;
        Ok((value, grad))
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        let n = self.weighted.first().map(|w| w.nrows()).unwrap_or(0);
        if x.ncols() != self.q() || x.nrows() != n {
            return Err(BsnError::Dimension(format!(
                "X is {}x{}, expected {n}x{}",
                x.nrows(),
                x.ncols(),
                self.q()
            )));
        }
        Ok(())
    }
}

/// `log π(X | rest)` up to an additive constant.
pub fn log_target_x(x: &EuclideanPoint, state: &ModelState, networks: &NetworkData) -> Result<f64> {
    XTarget::new(&state.lambdas, state.sigma_sq, networks)?.log_density(x.matrix())
}

/// `∇ₓ log π(X | rest)`.
pub fn grad_log_target_x(
    x: &EuclideanPoint,
    state: &ModelState,
    networks: &NetworkData,
) -> Result<DMatrix<f64>> {
    Ok(XTarget::new(&state.lambdas, state.sigma_sq, networks)?
        .log_density_and_grad(x.matrix())?
        .1)
}

/// Network likelihoods plus the λ, τ_λ² and σ² priors.
pub fn log_network_block(
    state: &ModelState,
    networks: &NetworkData,
    hyper: &Hyperparams,
) -> Result<f64> {
    state.check_variances()?;
    let mut total = 0.0;
    for i in 0..networks.len() {
        let lam = state.lambda_row(i);
        total += network_loglik(networks.network(i), &state.u, &lam, state.sigma_sq)?;
        total += iso_normal_ln_pdf(&lam, state.tau_lambda_sq);
    }
    total += hyper
        .tau_lambda_sq_prior()
        .ln_inv_gamma_pdf(state.tau_lambda_sq);
    total += hyper.sigma_sq_prior().ln_inv_gamma_pdf(state.sigma_sq);
    Ok(total)
}

/// Clinical likelihoods plus the β, α, τ², τ_β², τ_α² priors.
pub fn log_clinical_block(
    state: &ModelState,
    clinical: &ClinicalData,
    hyper: &Hyperparams,
) -> Result<f64> {
    state.check_variances()?;
    let beta: Vec<f64> = state.beta.iter().copied().collect();
    let alpha: Vec<f64> = state.alpha.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..clinical.len() {
        let z: Vec<f64> = clinical.z.row(i).iter().copied().collect();
        total += clinical_loglik(
            clinical.c[i],
            &z,
            &state.lambda_row(i),
            &beta,
            &alpha,
            state.tau_sq,
        )?;
    }
    total += iso_normal_ln_pdf(&beta, state.tau_beta_sq);
    total += iso_normal_ln_pdf(&alpha, state.tau_alpha_sq);
    total += hyper.tau_sq_prior().ln_inv_gamma_pdf(state.tau_sq);
    total += hyper
        .tau_beta_sq_prior()
        .ln_inv_gamma_pdf(state.tau_beta_sq);
    total += hyper
        .tau_alpha_sq_prior()
        .ln_inv_gamma_pdf(state.tau_alpha_sq);
    Ok(total)
}

/// Joint log density of all parameters and data, up to the constant of the
/// uniform prior on the Stiefel manifold.
pub fn log_joint(state: &ModelState, data: &Dataset, hyper: &Hyperparams) -> Result<f64> {
    Ok(log_network_block(state, data.networks(), hyper)?
        + log_clinical_block(state, data.clinical(), hyper)?)
}
