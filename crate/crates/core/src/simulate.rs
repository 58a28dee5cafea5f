//! Synthetic datasets with block-structured subnetworks, exponential loadings
//! and noise calibrated to a target signal-to-noise ratio.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BsnError, Result};
use crate::model::{Dataset, SubjectRecord};
use crate::numerics::{exponential, gamma, stream, uniform, vecl, StiefelPoint, SymmetricNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_nodes: usize,
    pub q: usize,
    pub n_subjects: usize,
    /// Extra held-out subjects drawn from the same model.
    pub n_test: usize,
    /// Network signal-to-noise ratio; `inf` gives noiseless networks.
    pub snr_y: f64,
    /// Outcome signal-to-noise ratio; `inf` gives noiseless outcomes.
    pub snr_c: f64,
    pub lambda_rate: f64,
    /// Defaults to `(1, -1, 0.5)` repeated and cut to `q`.
    pub beta_true: Option<Vec<f64>>,
    /// Defaults to `(0.5, -0.5)` repeated and cut to the covariate count.
    pub alpha_true: Option<Vec<f64>>,
    pub n_continuous: usize,
    pub n_binary: usize,
    /// Consecutive node blocks, one per subnetwork; defaults to equal blocks.
    pub block_sizes: Option<Vec<usize>>,
    pub heteroscedastic: bool,
    /// Coefficient of variation of the per-edge noise variances.
    pub edge_variance_cv: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_nodes: 30,
            q: 3,
            n_subjects: 300,
            n_test: 0,
            snr_y: 0.5,
            snr_c: 3.0,
            lambda_rate: 1.0,
            beta_true: None,
            alpha_true: None,
            n_continuous: 1,
            n_binary: 1,
            block_sizes: None,
            heteroscedastic: false,
            edge_variance_cv: 0.5,
            seed: 0,
        }
    }
}

fn cycled(pattern: &[f64], len: usize) -> Vec<f64> {
    pattern.iter().copied().cycle().take(len).collect()
}

impl SimConfig {
    pub fn r(&self) -> usize {
        self.n_continuous + self.n_binary
    }

    pub fn beta(&self) -> Vec<f64> {
        self.beta_true
            .clone()
            .unwrap_or_else(|| cycled(&[1.0, -1.0, 0.5], self.q))
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.alpha_true
            .clone()
            .unwrap_or_else(|| cycled(&[0.5, -0.5], self.r()))
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let sizes = self
            .block_sizes
            .clone()
            .unwrap_or_else(|| vec![self.n_nodes / self.q.max(1); self.q]);
        let mut start = 0;
        sizes
            .iter()
            .map(|&s| {
                let b = (start..start + s).collect();
                start += s;
                b
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BsnError::Config(m));
        if self.q == 0 || self.q > self.n_nodes {
            return bad(format!(
                "need 1 <= q <= n_nodes, got q={} n_nodes={}",
                self.q, self.n_nodes
            ));
        }
        if self.n_nodes < 2 {
            return bad("n_nodes must be at least 2".into());
        }
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1".into());
        }
        for (name, v) in [("snr_y", self.snr_y), ("snr_c", self.snr_c)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lambda_rate > 0.0) || !self.lambda_rate.is_finite() {
            return bad(format!(
                "lambda_rate must be positive, got {}",
                self.lambda_rate
            ));
        }
        if self.beta().len() != self.q {
            return bad(format!(
                "beta_true has {} entries, q is {}",
                self.beta().len(),
                self.q
            ));
        }
        if self.alpha().len() != self.r() {
            return bad(format!(
                "alpha_true has {} entries, expected {}",
                self.alpha().len(),
                self.r()
            ));
        }
        if self.heteroscedastic
            && !(self.edge_variance_cv > 0.0 && self.edge_variance_cv.is_finite())
        {
            return bad(format!(
                "edge_variance_cv must be positive, got {}",
                self.edge_variance_cv
            ));
        }
        let sizes: usize = self.blocks().iter().map(Vec::len).sum();
        if self.blocks().len() != self.q || self.blocks().iter().any(Vec::is_empty) {
            return bad(format!("need {} non-empty blocks", self.q));
        }
        if sizes > self.n_nodes {
            return bad(format!(
                "block sizes sum to {sizes}, more than {} nodes",
                self.n_nodes
            ));
        }
        Ok(())
    }
}

/// Parameters the data were generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub u_true: StiefelPoint,
    /// Loadings of the training subjects.
    pub lambdas_true: DMatrix<f64>,
    pub test_lambdas_true: DMatrix<f64>,
    pub sigma_sq_true: f64,
    /// Per-edge noise variances in `vecl` order, heteroscedastic mode only.
    pub edge_variances: Option<Vec<f64>>,
    pub beta_true: DVector<f64>,
    pub alpha_true: DVector<f64>,
    pub tau_sq_true: f64,
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub records: Vec<SubjectRecord>,
    pub test_records: Vec<SubjectRecord>,
    pub truth: GroundTruth,
}

impl Simulated {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::new(self.records.clone())
    }

    pub fn test_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.test_records.clone())
    }
}

/// Orthonormal frame whose column `l` is the normalised indicator of `blocks[l]`.
pub fn make_block_u(n: usize, blocks: &[Vec<usize>]) -> Result<StiefelPoint> {
    let mut owner = vec![None; n];
    let mut u = DMatrix::zeros(n, blocks.len());
    for (l, block) in blocks.iter().enumerate() {
        if block.is_empty() {
            return Err(BsnError::Config(format!("block {l} is empty")));
        }
        let w = 1.0 / (block.len() as f64).sqrt();
        for &node in block {
            match owner.get_mut(node) {
                None => return Err(BsnError::Config(format!("node {node} is outside 0..{n}"))),
                Some(Some(prev)) => {
                    return Err(BsnError::Config(format!(
                        "node {node} is in blocks {prev} and {l}"
                    )));
                }
                Some(slot) => *slot = Some(l),
            }
            u[(node, l)] = w;
        }
    }
    StiefelPoint::new(u)
}

fn pooled_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Draws a dataset. Loadings, covariates, network noise and outcome noise
/// use separate random streams. Noise levels are calibrated on training and
/// test subjects together.
pub fn generate(config: &SimConfig) -> Result<Simulated> {
    config.validate()?;
    let (n, q, r) = (config.n_nodes, config.q, config.r());
    let m = config.n_subjects + config.n_test;
    let u = make_block_u(n, &config.blocks())?;

    let mut rng = stream(config.seed, 0);
    let mut lambdas = DMatrix::zeros(m, q);
    for i in 0..m {
        for l in 0..q {
            lambdas[(i, l)] = exponential(&mut rng, config.lambda_rate)?;
        }
    }
    let means: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let scaled = u.matrix() * DMatrix::from_diagonal(&lambdas.row(i).transpose());
            vecl(&(&scaled * u.matrix().transpose()))
        })
        .collect::<Result<_>>()?;
    let v = pooled_variance(means.iter().flatten().copied());
    if !(v > 0.0) {
        return Err(BsnError::Config(
            "mean-model variance is zero; cannot calibrate SNR_Y".into(),
        ));
    }
    let sigma_sq = v / config.snr_y;
    let p = n * (n - 1) / 2;

    let mut rng = stream(config.seed, 1);
    let edge_variances = if config.heteroscedastic && sigma_sq > 0.0 {
        let shape = 2.0 + 1.0 / (config.edge_variance_cv * config.edge_variance_cv);
        let vars = (0..p)
            .map(|_| gamma(&mut rng, shape, 1.0).map(|g| sigma_sq * (shape - 1.0) / g))
            .collect::<Result<Vec<_>>>()?;
        Some(vars)
    } else {
        None
    };

    let mut rng = stream(config.seed, 2);
    let networks = means
        .iter()
        .map(|mean| {
            let data = mean
                .iter()
                .enumerate()
                .map(|(e, mu)| {
                    let var = edge_variances.as_ref().map_or(sigma_sq, |vs| vs[e]);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + var.sqrt() * z
                })
                .collect();
            SymmetricNetwork::from_vecl(n, data)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = stream(config.seed, 3);
    let z: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut row = Vec::with_capacity(r);
            for _ in 0..config.n_continuous {
                row.push(StandardNormal.sample(&mut rng));
            }
            for _ in 0..config.n_binary {
                row.push(if uniform(&mut rng) < 0.5 { 1.0 } else { 0.0 });
            }
            row
        })
        .collect();
    let beta = DVector::from_vec(config.beta());
    let alpha = DVector::from_vec(config.alpha());
    let clinical_means: Vec<f64> = (0..m)
        .map(|i| {
            lambdas.row(i).transpose().dot(&beta)
                + z[i]
                    .iter()
                    .zip(alpha.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    let vc = pooled_variance(clinical_means.iter().copied());
    if !(vc > 0.0) && config.snr_c.is_finite() {
        return Err(BsnError::Config(
            "outcome mean variance is zero; cannot calibrate SNR_C".into(),
        ));
    }
    let tau_sq = if config.snr_c.is_finite() {
        vc / config.snr_c
    } else {
        0.0
    };

    let mut rng = stream(config.seed, 4);
    let mut records: Vec<SubjectRecord> = networks
        .into_iter()
        .zip(z)
        .enumerate()
        .map(|(i, (y, zi))| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            SubjectRecord {
                id: format!("subj{:04}", i + 1),
                y,
                c: clinical_means[i] + tau_sq.sqrt() * noise,
                z: zi,
            }
        })
        .collect();
    let test_records = records.split_off(config.n_subjects);
    let m_train = config.n_subjects;

    Ok(Simulated {
        records,
        test_records,
        truth: GroundTruth {
            u_true: u,
            test_lambdas_true: lambdas.rows(m_train, config.n_test).into_owned(),
            lambdas_true: lambdas.rows(0, m_train).into_owned(),
            sigma_sq_true: sigma_sq,
            edge_variances,
            beta_true: beta,
            alpha_true: alpha,
            tau_sq_true: tau_sq,
        },
    })
}
