//! Joint MALA-within-Gibbs sampler, initialisation, posterior draw storage
//! and label alignment.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BsnError, Result};
use crate::gibbs::sweep_joint;
use crate::mala::{mala_step, Evaluated, MalaConfig, StepAdapter};
use crate::model::{
    log_joint, vecl_residual_sq, ClinicalData, Dataset, Hyperparams, ModelState, NetworkData,
    XTarget,
};
use crate::numerics::{polar_expand, stream, symmetric_eigen_sorted, EuclideanPoint, StiefelPoint};

/// How the three precisions in the clinical normalising constant are rescaled
/// before mapping them to the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionScaling {
    /// `p = -log x` for every precision.
    Unit,
    /// `p = -s log x` with `s` a plug-in estimate of each precision.
    PlugIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStageOptions {
    /// Gibbs scans of the clinical block per stage-one snapshot.
    pub stage2_sweeps: usize,
    /// Clinical-block scans run on the first snapshot before any candidate is emitted.
    pub stage2_burn_in: usize,
    pub sparse_level: usize,
    pub gauss_hermite_nodes: usize,
    pub precision_scaling: PrecisionScaling,
    /// Records the integrated network likelihood at each stored stage-one draw.
    pub monitor_marginal: bool,
    /// Propose stage-one snapshots to the correction step in random order.
    /// In chain order, slowly drifting loadings make consecutive proposals
    /// nearly identical and the corrected chain stays close to the
    /// network-only posterior.
    pub shuffle_candidates: bool,
}

impl Default for TwoStageOptions {
    fn default() -> Self {
        Self {
            stage2_sweeps: 5,
            stage2_burn_in: 50,
            sparse_level: crate::numerics::DEFAULT_SPARSE_LEVEL,
            gauss_hermite_nodes: crate::numerics::DEFAULT_GAUSS_HERMITE_NODES,
            precision_scaling: PrecisionScaling::PlugIn,
            monitor_marginal: false,
            shuffle_candidates: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub q: usize,
    pub mala: MalaConfig,
    pub hyper: Hyperparams,
    pub twostage: TwoStageOptions,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            burn_in: 2500,
            thin: 1,
            seed: 0,
            q: 3,
            mala: MalaConfig::default(),
            hyper: Hyperparams::default(),
            twostage: TwoStageOptions::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iters {
            return Err(BsnError::Config(format!(
                "burn_in ({}) must be below iters ({})",
                self.burn_in, self.iters
            )));
        }
        if self.thin == 0 {
            return Err(BsnError::Config("thin must be at least 1".into()));
        }
        if self.q == 0 {
            return Err(BsnError::Config("q must be at least 1".into()));
        }
        if self.twostage.stage2_sweeps == 0 {
            return Err(BsnError::Config("stage2_sweeps must be at least 1".into()));
        }
        self.mala.validate()?;
        self.hyper.validate()
    }

    pub fn expected_draws(&self) -> usize {
        (self.iters - self.burn_in) / self.thin
    }
}

/// One stored posterior snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub u: DMatrix<f64>,
    pub lambdas: DMatrix<f64>,
    pub sigma_sq: f64,
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub tau_sq: f64,
    pub tau_lambda_sq: f64,
    pub tau_beta_sq: f64,
    pub tau_alpha_sq: f64,
}

impl Draw {
    pub fn from_state(s: &ModelState) -> Self {
        Self {
            u: s.u.matrix().clone(),
            lambdas: s.lambdas.clone(),
            sigma_sq: s.sigma_sq,
            beta: s.beta.clone(),
            alpha: s.alpha.clone(),
            tau_sq: s.tau_sq,
            tau_lambda_sq: s.tau_lambda_sq,
            tau_beta_sq: s.tau_beta_sq,
            tau_alpha_sq: s.tau_alpha_sq,
        }
    }

    pub fn q(&self) -> usize {
        self.u.ncols()
    }

    /// Fitted clinical mean `βᵀλᵢ + αᵀzᵢ` for every subject.
    pub fn clinical_fit(&self, clinical: &ClinicalData) -> DVector<f64> {
        &self.lambdas * &self.beta + &clinical.z * &self.alpha
    }
}

/// Per-iteration diagnostics of a chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traces {
    pub step_size: Vec<f64>,
    pub accepted: Vec<bool>,
    pub log_joint: Vec<f64>,
}

/// Summary of the independence Metropolis–Hastings correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImhSummary {
    /// Stage-one snapshot proposed at each step.
    pub candidates: Vec<usize>,
    pub accepted: Vec<bool>,
    pub log_a: Vec<f64>,
    pub skipped: usize,
    pub acceptance_rate: f64,
    pub node_failures: usize,
    /// Indexed by stage-one snapshot, not by step.
    pub log_marginal_network: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<Draw>,
    /// Chain iteration (0-based) each draw was taken at.
    pub iterations: Vec<usize>,
    pub traces: Traces,
    /// MALA acceptance rate over the post-burn-in iterations.
    pub mala_acceptance: f64,
    pub final_step: f64,
    pub imh: Option<ImhSummary>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    fn mean_of<T>(&self, f: impl Fn(&Draw) -> T) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Div<f64, Output = T>,
    {
        let mut it = self.draws.iter();
        let first = f(it.next().expect("non-empty draws"));
        it.fold(first, |acc, d| acc + f(d)) / self.draws.len() as f64
    }

    pub fn mean_u(&self) -> DMatrix<f64> {
        self.mean_of(|d| d.u.clone())
    }

    pub fn mean_lambdas(&self) -> DMatrix<f64> {
        self.mean_of(|d| d.lambdas.clone())
    }

    pub fn mean_beta(&self) -> DVector<f64> {
        self.mean_of(|d| d.beta.clone())
    }

    pub fn mean_alpha(&self) -> DVector<f64> {
        self.mean_of(|d| d.alpha.clone())
    }

    pub fn mean_scalar(&self, f: impl Fn(&Draw) -> f64) -> f64 {
        self.draws.iter().map(f).sum::<f64>() / self.draws.len() as f64
    }
}

/// Eigenvectors of the subject-mean network for the `q` eigenvalues of
/// largest magnitude, each signed so its first non-negligible entry is positive.
pub fn spectral_frame(networks: &NetworkData, q: usize) -> Result<StiefelPoint> {
    let n = networks.n();
    if q == 0 || q > n {
        return Err(BsnError::Config(format!(
            "rank q = {q} must lie in 1..={n}"
        )));
    }
    let mut mean = DMatrix::zeros(n, n);
    for i in 0..networks.len() {
        mean += networks.dense(i);
    }
    mean /= networks.len().max(1) as f64;
    let (vals, vecs) = symmetric_eigen_sorted(&mean);
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep descending-eigenvalue order
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
    let mut u = DMatrix::zeros(n, q);
    for (l, &k) in order.iter().take(q).enumerate() {
        let mut col = vecs.column(k).into_owned();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        u.set_column(l, &col);
    }
    // re-orthonormalise away eigen-solver rounding
    polar_expand(&EuclideanPoint::new(u)?)
}

const VARIANCE_FLOOR: f64 = 1e-8;

/// Network-block starting values; clinical fields are placeholders sized for
/// `r` covariates.
pub fn init_network_state(networks: &NetworkData, q: usize, r: usize) -> Result<ModelState> {
    let m = networks.len();
    if m < q + 1 {
        return Err(BsnError::Config(format!(
            "need at least q + 1 = {} subjects, got {m}",
            q + 1
        )));
    }
    let u = spectral_frame(networks, q)?;
    let lambdas = networks.diag_projections(u.matrix());
    let ss: f64 = (0..m)
        .map(|i| {
            let lam: Vec<f64> = lambdas.row(i).iter().copied().collect();
            vecl_residual_sq(networks.network(i), u.matrix(), &lam)
        })
        .sum();
    let count = (m * networks.edge_count()).max(1) as f64;
    Ok(ModelState {
        x: EuclideanPoint::from(u.clone()),
        u,
        lambdas,
        sigma_sq: (ss / count).max(VARIANCE_FLOOR),
        beta: DVector::zeros(q),
        alpha: DVector::zeros(r),
        tau_sq: 1.0,
        tau_lambda_sq: 1.0,
        tau_beta_sq: 1.0,
        tau_alpha_sq: 1.0,
    })
}

/// Least-squares fit of the outcome on the covariates alone.
pub fn covariate_ols(clinical: &ClinicalData) -> Result<DVector<f64>> {
    let r = clinical.r();
    if r == 0 {
        return Ok(DVector::zeros(0));
    }
    let z = &clinical.z;
    z.clone()
        .svd(true, true)
        .solve(&clinical.c, 1e-12)
        .map_err(|e| BsnError::Numerical(format!("covariate least squares failed: {e}")))
}

/// Clinical-block starting values: `β = 0`, `α` from least squares on `z`,
/// `τ²` the residual mean square.
pub fn init_clinical(state: &mut ModelState, clinical: &ClinicalData) -> Result<()> {
    let alpha = covariate_ols(clinical)?;
    let resid = &clinical.c - &clinical.z * &alpha;
    let m = clinical.len().max(1) as f64;
    state.beta = DVector::zeros(state.q());
    state.alpha = alpha;
    state.tau_sq = (resid.norm_squared() / m).max(VARIANCE_FLOOR);
    Ok(())
}

pub fn init_state(data: &Dataset, q: usize) -> Result<ModelState> {
    let mut state = init_network_state(data.networks(), q, data.r())?;
    init_clinical(&mut state, data.clinical())?;
    Ok(state)
}

fn evaluate_x(target: &XTarget, x: &DMatrix<f64>) -> Result<Evaluated> {
    let (lp, grad) = target.log_density_and_grad(x)?;
    Ok(Evaluated {
        x: x.clone(),
        log_target: lp,
        grad,
    })
}

/// A MALA update of `X` against the conditional implied by the current
/// loadings and `σ²`. Returns whether the proposal was accepted.
pub(crate) fn mala_update_x(
    state: &mut ModelState,
    networks: &NetworkData,
    omega: f64,
    rng: &mut crate::numerics::RngStream,
) -> Result<bool> {
    let target = XTarget::new(&state.lambdas, state.sigma_sq, networks)?;
    let current = evaluate_x(&target, state.x.matrix())?;
    let out = mala_step(current, omega, |x| target.log_density_and_grad(x), rng)?;
    if out.accepted {
        state.set_x(EuclideanPoint::new(out.point.x)?)?;
    }
    Ok(out.accepted)
}

/// Runs the joint sampler: per iteration a Gibbs sweep, a MALA step on `X`,
/// polar expansion to `U`, and step-size tuning during burn-in.
pub fn run_joint(data: &Dataset, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    if data.is_empty() {
        return Err(BsnError::Config("dataset has no subjects".into()));
    }
    let mut state = init_state(data, config.q)?;
    let mut rng = stream(config.seed, 0);
    let mut adapter = StepAdapter::new(config.mala, config.mala.initial_step(data.n(), config.q));
    let mut traces = Traces::default();
    let mut draws = Vec::with_capacity(config.expected_draws());
    let mut iterations = Vec::with_capacity(config.expected_draws());
    let mut post_accepts = 0usize;

    for k in 0..config.iters {
        if k == config.burn_in {
            adapter.freeze();
        }
        sweep_joint(&mut state, data, &config.hyper, &mut rng)
            .map_err(|e| invariant(k, format!("Gibbs sweep failed: {e}")))?;
        let omega = adapter.omega();
        let accepted = mala_update_x(&mut state, data.networks(), omega, &mut rng)
            .map_err(|e| invariant(k, format!("MALA update failed: {e}")))?;
        adapter.record(accepted);
        let lj = log_joint(&state, data, &config.hyper)?;
        if !lj.is_finite() {
            return Err(invariant(k, "non-finite log joint density".into()));
        }
        traces.step_size.push(omega);
        traces.accepted.push(accepted);
        traces.log_joint.push(lj);
        if k >= config.burn_in {
            post_accepts += accepted as usize;
            if (k - config.burn_in + 1).is_multiple_of(config.thin) {
                draws.push(Draw::from_state(&state));
                iterations.push(k);
            }
        }
    }
    Ok(PosteriorDraws {
        draws,
        iterations,
        traces,
        mala_acceptance: post_accepts as f64 / (config.iters - config.burn_in) as f64,
        final_step: adapter.omega(),
        imh: None,
    })
}

pub(crate) fn invariant(iteration: usize, message: String) -> BsnError {
    BsnError::Invariant { iteration, message }
}

/// Column relabelling applied to one draw: `perm[l]` is the source column
/// placed at position `l`, `sign[l]` the sign applied to that `U` column.
#[derive(Debug, Clone, PartialEq)]
pub struct Relabel {
    pub perm: Vec<usize>,
    pub sign: Vec<f64>,
}

impl Relabel {
    pub fn identity(q: usize) -> Self {
        Self {
            perm: (0..q).collect(),
            sign: vec![1.0; q],
        }
    }

    /// Permutes `U`, `λ` and `β` columns together; signs touch `U` only, since
    /// `u ↦ -u` leaves `u uᵀ` unchanged while flipping `λ` would not.
    pub fn apply(&self, d: &Draw) -> Draw {
        let mut out = d.clone();
        for (l, (&src, &s)) in self.perm.iter().zip(&self.sign).enumerate() {
            out.u.set_column(l, &(d.u.column(src) * s));
            out.lambdas.set_column(l, &d.lambdas.column(src));
            out.beta[l] = d.beta[src];
        }
        out
    }
}

/// Relabelling of `u` that best matches `reference`: maximises
/// `Σₗ |⟨ref_l, u_perm(l)⟩|`, exhaustively for `q ≤ 7`, greedily beyond.
pub fn best_relabel(u: &DMatrix<f64>, reference: &DMatrix<f64>) -> Relabel {
    let q = u.ncols();
    let sim = reference.transpose() * u;
    let perm: Vec<usize> = if q <= 7 {
        (0..q)
            .permutations(q)
            .map(|p| {
                let score: f64 = p.iter().enumerate().map(|(l, &s)| sim[(l, s)].abs()).sum();
                (score, p)
            })
            // first maximum wins so the identity is kept on ties
            .fold((f64::NEG_INFINITY, Vec::new()), |best, cand| {
                if cand.0 > best.0 {
                    cand
                } else {
                    best
                }
            })
            .1
    } else {
        let mut used = vec![false; q];
        let mut perm = vec![0; q];
        let mut pairs: Vec<(usize, usize)> = (0..q).cartesian_product(0..q).collect();
        pairs.sort_by(|a, b| sim[(b.0, b.1)].abs().total_cmp(&sim[(a.0, a.1)].abs()));
        let mut filled = vec![false; q];
        for (l, s) in pairs {
            if !filled[l] && !used[s] {
                perm[l] = s;
                filled[l] = true;
                used[s] = true;
            }
        }
        perm
    };
    let sign = perm
        .iter()
        .enumerate()
        .map(|(l, &s)| if sim[(l, s)] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    Relabel { perm, sign }
}

/// Aligns every draw to `reference` (an `N x q` frame).
pub fn align_draws_to(draws: &PosteriorDraws, reference: &DMatrix<f64>) -> PosteriorDraws {
    let mut out = draws.clone();
    out.draws = draws
        .draws
        .iter()
        .map(|d| best_relabel(&d.u, reference).apply(d))
        .collect();
    out
}

/// Aligns every draw to the first one.
pub fn align_draws(draws: &PosteriorDraws) -> Result<PosteriorDraws> {
    let first = draws
        .draws
        .first()
        .ok_or_else(|| BsnError::Config("cannot align an empty set of draws".into()))?;
    Ok(align_draws_to(draws, &first.u.clone()))
}
