//! Two-stage sampler: the network block is sampled on its own, the clinical
//! block is sampled given each stored set of loadings, and an independence
//! Metropolis–Hastings step weighted by `A(λ)` corrects toward the joint model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{BsnError, Result};
use crate::gibbs::sweep_clinical;
use crate::mala::StepAdapter;
use crate::marginal::{
    imh_accept, log_a_from_stats, log_marginal_network, PrecisionScales, RegressionStats,
};
use crate::model::{
    log_network_block, ClinicalData, Dataset, Hyperparams, ModelState, NetworkData,
};
use crate::numerics::{build_quadrature, stream, QuadratureKind, RngStream};
use crate::sampler::{
    init_clinical, init_network_state, invariant, mala_update_x, Draw, ImhSummary, PosteriorDraws,
    PrecisionScaling, SamplerConfig, Traces,
};

/// Clinical parameters from one stage-two scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalDraw {
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub tau_sq: f64,
    pub tau_beta_sq: f64,
    pub tau_alpha_sq: f64,
}

impl ClinicalDraw {
    fn from_state(s: &ModelState) -> Self {
        Self {
            beta: s.beta.clone(),
            alpha: s.alpha.clone(),
            tau_sq: s.tau_sq,
            tau_beta_sq: s.tau_beta_sq,
            tau_alpha_sq: s.tau_alpha_sq,
        }
    }
}

/// Stage one: MALA-within-Gibbs on the network block alone. Clinical fields of
/// the returned draws are empty placeholders.
pub fn run_stage1(networks: &NetworkData, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    if networks.is_empty() {
        return Err(BsnError::Config("dataset has no subjects".into()));
    }
    let mut state = init_network_state(networks, config.q, 0)?;
    let mut rng = stream(config.seed, 0);
    let mut adapter = StepAdapter::new(
        config.mala,
        config.mala.initial_step(networks.n(), config.q),
    );
    let mut traces = Traces::default();
    let mut draws = Vec::with_capacity(config.expected_draws());
    let mut iterations = Vec::with_capacity(config.expected_draws());
    let mut post_accepts = 0usize;
    let gh = if config.twostage.monitor_marginal {
        Some(build_quadrature(
            QuadratureKind::GaussHermite1d,
            config.twostage.gauss_hermite_nodes,
        )?)
    } else {
        None
    };
    let mut monitored = Vec::new();

    for k in 0..config.iters {
        if k == config.burn_in {
            adapter.freeze();
        }
        crate::gibbs::sweep_network(&mut state, networks, &config.hyper, &mut rng)
            .map_err(|e| invariant(k, format!("network sweep failed: {e}")))?;
        let omega = adapter.omega();
        let accepted = mala_update_x(&mut state, networks, omega, &mut rng)
            .map_err(|e| invariant(k, format!("MALA update failed: {e}")))?;
        adapter.record(accepted);
        let lp = log_network_block(&state, networks, &config.hyper)?;
        if !lp.is_finite() {
            return Err(invariant(k, "non-finite network log density".into()));
        }
        traces.step_size.push(omega);
        traces.accepted.push(accepted);
        traces.log_joint.push(lp);
        if k >= config.burn_in {
            post_accepts += accepted as usize;
            if (k - config.burn_in + 1).is_multiple_of(config.thin) {
                if let Some(rule) = &gh {
                    monitored.push(log_marginal_network(
                        networks,
                        state.u.matrix(),
                        state.sigma_sq,
                        &config.hyper,
                        rule,
                    )?);
                }
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
        imh: gh.map(|_| ImhSummary {
            log_marginal_network: monitored,
            ..Default::default()
        }),
    })
}

fn clinical_state(q: usize, lambdas: &DMatrix<f64>) -> Result<ModelState> {
    let u = crate::numerics::StiefelPoint::new(DMatrix::identity(q, q))?;
    Ok(ModelState {
        x: u.clone().into(),
        u,
        lambdas: lambdas.clone(),
        sigma_sq: 1.0,
        beta: DVector::zeros(q),
        alpha: DVector::zeros(0),
        tau_sq: 1.0,
        tau_lambda_sq: 1.0,
        tau_beta_sq: 1.0,
        tau_alpha_sq: 1.0,
    })
}

/// Stage two: a clinical-block Gibbs chain carried across snapshots. After
/// `stage2_burn_in` scans on the first snapshot, each snapshot receives
/// `stage2_sweeps` scans and contributes the final state as one draw.
pub fn run_stage2(
    lambda_draws: &[DMatrix<f64>],
    clinical: &ClinicalData,
    config: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<Vec<ClinicalDraw>> {
    if clinical.is_empty() {
        return Err(BsnError::Config("clinical data has no subjects".into()));
    }
    let Some(first) = lambda_draws.first() else {
        return Ok(Vec::new());
    };
    for l in lambda_draws {
        if l.nrows() != clinical.len() || l.ncols() != first.ncols() {
            return Err(BsnError::Config(format!(
                "loading snapshot is {}x{}, expected {}x{}",
                l.nrows(),
                l.ncols(),
                clinical.len(),
                first.ncols()
            )));
        }
    }
    let mut state = clinical_state(first.ncols(), first)?;
    init_clinical(&mut state, clinical)?;
    for _ in 0..config.twostage.stage2_burn_in {
        sweep_clinical(&mut state, clinical, &config.hyper, rng)?;
    }
    let mut out = Vec::with_capacity(lambda_draws.len());
    for l in lambda_draws {
        state.lambdas.copy_from(l);
        for _ in 0..config.twostage.stage2_sweeps {
            sweep_clinical(&mut state, clinical, &config.hyper, rng)?;
        }
        out.push(ClinicalDraw::from_state(&state));
    }
    Ok(out)
}

fn precision_scales(
    scaling: PrecisionScaling,
    lambdas: &DMatrix<f64>,
    clinical: &ClinicalData,
    hyper: &Hyperparams,
) -> Result<PrecisionScales> {
    Ok(match scaling {
        PrecisionScaling::Unit => PrecisionScales::unit(),
        PrecisionScaling::PlugIn => {
            PrecisionScales::plug_in(&RegressionStats::new(lambdas, clinical)?, hyper)
        }
    })
}

/// Stage one, stage two, then the independence Metropolis–Hastings pass.
/// Rejected or unevaluable candidates repeat the last accepted draw. With
/// `shuffle_candidates` the output is in proposal order, and
/// `ImhSummary::candidates` maps each step back to its snapshot.
pub fn run_twostage(data: &Dataset, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    if data.is_empty() {
        return Err(BsnError::Config("dataset has no subjects".into()));
    }
    let mut stage1 = run_stage1(data.networks(), config)?;
    let snapshots: Vec<DMatrix<f64>> = stage1.draws.iter().map(|d| d.lambdas.clone()).collect();
    let mut rng2 = stream(config.seed, 1);
    let clinical_draws = run_stage2(&snapshots, data.clinical(), config, &mut rng2)?;

    let rule = build_quadrature(
        QuadratureKind::SparseUniform3d,
        config.twostage.sparse_level,
    )?;
    let scales = match snapshots.first() {
        Some(l) => precision_scales(
            config.twostage.precision_scaling,
            l,
            data.clinical(),
            &config.hyper,
        )?,
        None => PrecisionScales::unit(),
    };
    let mut rng3 = stream(config.seed, 2);
    let mut summary = stage1.imh.take().unwrap_or_default();
    let mut draws = Vec::with_capacity(snapshots.len());
    let mut current: Option<(Draw, f64)> = None;
    let mut order: Vec<usize> = (0..snapshots.len()).collect();
    if config.twostage.shuffle_candidates {
        order.shuffle(&mut rng3);
    }

    for &k in &order {
        let (net, clin) = (&stage1.draws[k], &clinical_draws[k]);
        let candidate = Draw {
            beta: clin.beta.clone(),
            alpha: clin.alpha.clone(),
            tau_sq: clin.tau_sq,
            tau_beta_sq: clin.tau_beta_sq,
            tau_alpha_sq: clin.tau_alpha_sq,
            ..net.clone()
        };
        let log_a = RegressionStats::new(&candidate.lambdas, data.clinical())
            .and_then(|s| log_a_from_stats(&s, &config.hyper, &rule, scales));
        let log_a = match log_a {
            Ok(r) => {
                summary.node_failures += r.skipped_nodes;
                Some(r.value)
            }
            Err(BsnError::Integration(_)) => None,
            Err(e) => return Err(e),
        };
        let accept = match (&current, log_a) {
            (_, None) => {
                summary.skipped += 1;
                false
            }
            (None, Some(_)) => true,
            (Some((_, cur)), Some(prop)) => imh_accept(prop, *cur, &mut rng3),
        };
        if accept {
            current = Some((candidate, log_a.expect("accepted candidates are evaluated")));
        }
        summary.candidates.push(k);
        summary.accepted.push(accept);
        summary
            .log_a
            .push(current.as_ref().map(|c| c.1).unwrap_or(f64::NAN));
        if let Some((d, _)) = &current {
            draws.push(d.clone());
        }
    }
    let n = summary.accepted.len();
    if summary.skipped * 20 > n {
        return Err(BsnError::Integration(format!(
            "A(λ) failed for {} of {n} candidates",
            summary.skipped
        )));
    }
    if draws.len() < n {
        // leading candidates that could not be evaluated take the first accepted draw
        let Some(first) = draws.first().cloned() else {
            return Err(BsnError::Integration(
                "no candidate could be evaluated".into(),
            ));
        };
        let mut padded = vec![first; n - draws.len()];
        padded.extend(draws);
        draws = padded;
    }
    summary.acceptance_rate = if n > 0 {
        summary.accepted.iter().filter(|&&a| a).count() as f64 / n as f64
    } else {
        0.0
    };
    Ok(PosteriorDraws {
        draws,
        imh: Some(summary),
        ..stage1
    })
}
