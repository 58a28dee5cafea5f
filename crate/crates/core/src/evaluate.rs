//! Out-of-sample prediction, accuracy metrics and repeated k-fold
//! cross-validation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BsnError, Result};
use crate::gibbs::sample_lambda_network;
use crate::model::{Dataset, NetworkData};
use crate::numerics::{normal, stream};
use crate::sampler::{align_draws_to, run_joint, PosteriorDraws, SamplerConfig};
use crate::simulate::GroundTruth;
use crate::twostage::run_twostage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Joint,
    Twostage,
}

impl std::str::FromStr for SamplerKind {
    type Err = BsnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "twostage" => Ok(Self::Twostage),
            other => Err(BsnError::Config(format!(
                "unknown sampler '{other}' (expected joint or twostage)"
            ))),
        }
    }
}

pub fn fit(data: &Dataset, config: &SamplerConfig, kind: SamplerKind) -> Result<PosteriorDraws> {
    match kind {
        SamplerKind::Joint => run_joint(data, config),
        SamplerKind::Twostage => run_twostage(data, config),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictOptions {
    pub seed: u64,
    /// Add `N(0, τ²)` outcome noise to each predictive sample.
    pub outcome_noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// `draws x subjects` predictive samples.
    pub samples: DMatrix<f64>,
    /// Posterior mean of the predictive mean.
    pub point: Vec<f64>,
    /// Standard deviation of the predictive samples.
    pub sd: Vec<f64>,
}

/// Predicts outcomes for new subjects. Each draw's loadings for the new
/// networks are sampled from their exact Gaussian conditional. The point
/// prediction averages `βᵀE[λ] + αᵀz` over draws, which is the expectation
/// of the sampled predictive mean without the λ-sampling noise.
pub fn predict(
    draws: &PosteriorDraws,
    networks: &NetworkData,
    covariates: &DMatrix<f64>,
    options: PredictOptions,
) -> Result<Predictions> {
    let first = draws
        .draws
        .first()
        .ok_or_else(|| BsnError::Config("no posterior draws to predict from".into()))?;
    let (n_fit, r_fit) = (first.u.nrows(), first.alpha.len());
    if networks.n() != n_fit {
        return Err(BsnError::Dimension(format!(
            "test networks have {} nodes but the fit has {n_fit}",
            networks.n()
        )));
    }
    if covariates.nrows() != networks.len() || covariates.ncols() != r_fit {
        return Err(BsnError::Dimension(format!(
            "test covariates are {}x{}, expected {}x{r_fit}",
            covariates.nrows(),
            covariates.ncols(),
            networks.len()
        )));
    }
    let m = networks.len();
    let mut rng = stream(options.seed, 0);
    let mut samples = DMatrix::zeros(draws.len(), m);
    let mut point = vec![0.0; m];
    for (k, d) in draws.draws.iter().enumerate() {
        let proj = networks.diag_projections(&d.u);
        let shrink = 1.0 / (1.0 + d.sigma_sq / d.tau_lambda_sq);
        for i in 0..m {
            let row: Vec<f64> = proj.row(i).iter().copied().collect();
            let cov = covariates.row(i).transpose().dot(&d.alpha);
            let lam = sample_lambda_network(&row, d.sigma_sq, d.tau_lambda_sq, &mut rng)?;
            let mut c = d.beta.dot(&lam) + cov;
            if options.outcome_noise {
                c = normal(&mut rng, c, d.tau_sq)?;
            }
            samples[(k, i)] = c;
            let mean_lam = DVector::from_iterator(row.len(), row.iter().map(|v| v * shrink));
            point[i] += d.beta.dot(&mean_lam) + cov;
        }
    }
    let nd = draws.len() as f64;
    point.iter_mut().for_each(|p| *p /= nd);
    let sd = (0..m)
        .map(|i| {
            let col = samples.column(i);
            let mean = col.mean();
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nd - 1.0).max(1.0)).sqrt()
        })
        .collect();
    Ok(Predictions { samples, point, sd })
}

/// `1 - SSE/SST`.
pub fn predictive_r2(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() || truths.len() < 2 {
        return Err(BsnError::Validation(format!(
            "R² needs two equal-length series of at least 2 values, got {} and {}",
            predictions.len(),
            truths.len()
        )));
    }
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let sst: f64 = truths.iter().map(|t| (t - mean) * (t - mean)).sum();
    if !(sst > 0.0) {
        return Err(BsnError::Validation(
            "R² is undefined when the outcome has zero variance".into(),
        ));
    }
    let sse: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - sse / sst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamRmse {
    pub u: f64,
    pub lambda: f64,
    pub coeffs: f64,
    pub sigma_sq: f64,
    pub tau_sq: f64,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64).sqrt()
}

/// RMSE of posterior means against the generating values, after aligning
/// every draw to the true frame. In heteroscedastic data `σ²` is compared
/// with the mean edge variance.
pub fn param_rmse(draws: &PosteriorDraws, truth: &GroundTruth) -> Result<ParamRmse> {
    if draws.is_empty() {
        return Err(BsnError::Config("no posterior draws".into()));
    }
    let u_true = truth.u_true.matrix();
    let d0 = &draws.draws[0];
    if d0.u.shape() != u_true.shape()
        || d0.lambdas.shape() != truth.lambdas_true.shape()
        || d0.alpha.len() != truth.alpha_true.len()
    {
        return Err(BsnError::Dimension(format!(
            "draws have U {:?}, λ {:?}, r={}; truth has U {:?}, λ {:?}, r={}",
            d0.u.shape(),
            d0.lambdas.shape(),
            d0.alpha.len(),
            u_true.shape(),
            truth.lambdas_true.shape(),
            truth.alpha_true.len()
        )));
    }
    let aligned = align_draws_to(draws, u_true);
    let coeffs_hat: Vec<f64> = aligned
        .mean_beta()
        .iter()
        .chain(aligned.mean_alpha().iter())
        .copied()
        .collect();
    let coeffs_true: Vec<f64> = truth
        .beta_true
        .iter()
        .chain(truth.alpha_true.iter())
        .copied()
        .collect();
    let sigma_true = match &truth.edge_variances {
        Some(v) => v.iter().sum::<f64>() / v.len() as f64,
        None => truth.sigma_sq_true,
    };
    Ok(ParamRmse {
        u: rmse(aligned.mean_u().as_slice(), u_true.as_slice()),
        lambda: rmse(
            aligned.mean_lambdas().as_slice(),
            truth.lambdas_true.as_slice(),
        ),
        coeffs: rmse(&coeffs_hat, &coeffs_true),
        sigma_sq: (aligned.mean_scalar(|d| d.sigma_sq) - sigma_true).abs(),
        tau_sq: (aligned.mean_scalar(|d| d.tau_sq) - truth.tau_sq_true).abs(),
    })
}

/// Frobenius distance between the projectors onto the two column spans.
///
/// # Panics
/// If the frames have different numbers of rows.
pub fn subspace_distance(u_a: &DMatrix<f64>, u_b: &DMatrix<f64>) -> f64 {
    assert_eq!(
        u_a.nrows(),
        u_b.nrows(),
        "frames must have the same number of nodes"
    );
    (u_a * u_a.transpose() - u_b * u_b.transpose()).norm()
}

/// Standard error of a chain mean by non-overlapping batch means.
pub fn batch_means_se(values: &[f64], batches: usize) -> f64 {
    let size = values.len() / batches.max(1);
    if size == 0 || batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = values
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Worker cap from `BSNMANI_THREADS`, defaulting to the logical core count.
pub fn worker_threads() -> usize {
    std::env::var("BSNMANI_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub repeats: usize,
    pub sampler: SamplerKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub repeat: usize,
    pub fold: usize,
    pub n_test: usize,
    /// `NaN` when the fold holds fewer than two subjects.
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub rows: Vec<CvRow>,
    /// R² of all out-of-fold predictions of each repeat.
    pub pooled_r2: Vec<f64>,
    pub median: f64,
    pub iqr: f64,
}

/// Fold of every subject for one repeat. Subjects are ordered by id before
/// shuffling, so the assignment does not depend on input order.
pub fn fold_assignment(ids: &[String], folds: usize, seed: u64, repeat: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    order.shuffle(&mut stream(seed, 1_000 + repeat as u64));
    let mut fold = vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    (quantile(&v, 0.5), quantile(&v, 0.75) - quantile(&v, 0.25))
}

/// Repeated k-fold cross-validation of predictive R². Jobs run on at most
/// [`worker_threads`] threads; results do not depend on the thread count.
/// The summary is taken over per-fold values, or over the per-repeat pooled
/// values when every fold is too small to score on its own.
pub fn cross_validate(
    data: &Dataset,
    options: CvOptions,
    config: &SamplerConfig,
) -> Result<CvResult> {
    let m = data.len();
    if options.folds < 2 {
        return Err(BsnError::Config(format!(
            "need at least 2 folds, got {}",
            options.folds
        )));
    }
    if options.repeats == 0 {
        return Err(BsnError::Config("need at least 1 repeat".into()));
    }
    if m < options.folds {
        return Err(BsnError::Config(format!(
            "{m} subjects cannot fill {} folds",
            options.folds
        )));
    }
    config.validate()?;
    let ids: Vec<String> = data.records().iter().map(|r| r.id.clone()).collect();
    let assignments: Vec<Vec<usize>> = (0..options.repeats)
        .map(|rep| fold_assignment(&ids, options.folds, config.seed, rep))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..options.repeats)
        .flat_map(|r| (0..options.folds).map(move |f| (r, f)))
        .collect();

    let run_job = |&(rep, fold): &(usize, usize)| -> Result<(Vec<usize>, Vec<f64>)> {
        let assign = &assignments[rep];
        let test: Vec<usize> = (0..m).filter(|&i| assign[i] == fold).collect();
        let train: Vec<usize> = (0..m).filter(|&i| assign[i] != fold).collect();
        let seed = config
            .seed
            .wrapping_add((rep * options.folds + fold + 1) as u64);
        let cfg = SamplerConfig { seed, ..*config };
        let draws = fit(&data.subset(&train)?, &cfg, options.sampler)?;
        let test_data = data.subset(&test)?;
        let pred = predict(
            &draws,
            test_data.networks(),
            &test_data.clinical().z,
            PredictOptions {
                seed,
                outcome_noise: false,
            },
        )?;
        Ok((test, pred.point))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| BsnError::Config(format!("cannot start worker pool: {e}")))?;
    let outputs: Vec<(Vec<usize>, Vec<f64>)> =
        pool.install(|| jobs.par_iter().map(run_job).collect::<Result<_>>())?;

    let truth = &data.clinical().c;
    let mut rows = Vec::with_capacity(jobs.len());
    let mut pooled = vec![vec![0.0; m]; options.repeats];
    for (&(rep, fold), (test, point)) in jobs.iter().zip(&outputs) {
        let t: Vec<f64> = test.iter().map(|&i| truth[i]).collect();
        let r2 = if t.len() >= 2 {
            predictive_r2(point, &t).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        rows.push(CvRow {
            repeat: rep,
            fold,
            n_test: t.len(),
            r2,
        });
        for (&i, &p) in test.iter().zip(point) {
            pooled[rep][i] = p;
        }
    }
    let pooled_r2: Vec<f64> = pooled
        .iter()
        .map(|p| predictive_r2(p, truth.as_slice()).unwrap_or(f64::NAN))
        .collect();
    let per_fold: Vec<f64> = rows.iter().map(|r| r.r2).collect();
    let (median, iqr) = if per_fold.iter().any(|v| v.is_finite()) {
        median_iqr(&per_fold)
    } else {
        median_iqr(&pooled_r2)
    };
    Ok(CvResult {
        rows,
        pooled_r2,
        median,
        iqr,
    })
}
