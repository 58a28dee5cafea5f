//! Reproducible correctness checks, each returning the measured quantities
//! so tests can assert on them and the acceptance harness can report them.

use std::f64::consts::PI;

use bsnmani::gibbs::*;
use bsnmani::mala::{mala_step, Evaluated, MalaConfig, StepAdapter};
use bsnmani::marginal::{log_a_lambda, log_marginal_network, PrecisionScales};
use bsnmani::model::{
    clinical_loglik, log_clinical_block, log_network_block, network_kernel_loglik, ClinicalData,
    Dataset, Hyperparams, ModelState, NetworkData, XTarget,
};
use bsnmani::numerics::{
    build_quadrature, gamma, matrix_normal_std, normal, stream, QuadratureKind, SymmetricNetwork,
};
use bsnmani::sampler::init_state;
use bsnmani::simulate::{generate, SimConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::oracles::{fd_gradient, grid_moments, grid_moments_2d, moments_agree, sample_moments};

pub const GIBBS_DRAWS: usize = 100_000;

/// Sampled vs oracle `(mean, variance)` of one scalar.
#[derive(Debug, Clone, Copy)]
pub struct Comparison {
    pub name: &'static str,
    pub sampled: (f64, f64),
    pub oracle: (f64, f64),
}

impl Comparison {
    pub fn agrees(&self) -> bool {
        moments_agree(self.sampled, self.oracle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditional {
    LambdaNetworkOnly,
    LambdaJoint,
    Coefficients,
    SigmaSq,
    TauLambdaSq,
    TauSq,
    TauBetaSq,
    TauAlphaSq,
}

pub const CONDITIONALS: [Conditional; 8] = [
    Conditional::LambdaNetworkOnly,
    Conditional::LambdaJoint,
    Conditional::Coefficients,
    Conditional::SigmaSq,
    Conditional::TauLambdaSq,
    Conditional::TauSq,
    Conditional::TauBetaSq,
    Conditional::TauAlphaSq,
];

/// Single-subnetwork instance with one covariate.
fn gibbs_instance() -> (Dataset, ModelState, Hyperparams) {
    let cfg = SimConfig {
        n_nodes: 5,
        q: 1,
        n_subjects: 200,
        n_continuous: 1,
        n_binary: 0,
        snr_y: 2.0,
        seed: 21,
        ..Default::default()
    };
    let data = generate(&cfg).unwrap().dataset().unwrap();
    let mut state = init_state(&data, 1).unwrap();
    state.beta[0] = 0.8;
    state.alpha[0] = 0.4;
    state.tau_sq = 0.3;
    // a one-coefficient variance conditional with the default prior has
    // shape 3/2 and no finite variance to compare against
    let hyper = Hyperparams {
        gamma0: 200.0,
        omega0: 200.0,
        ..Default::default()
    };
    (data, state, hyper)
}

fn sampled(mut draw: impl FnMut() -> f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..GIBBS_DRAWS).map(|_| draw()).collect();
    sample_moments(&xs)
}

fn variance_oracle(
    block: impl Fn(&ModelState) -> bsnmani::Result<f64>,
    state: &ModelState,
    set: impl Fn(&mut ModelState, f64),
) -> (f64, f64) {
    grid_moments(
        |v| {
            let mut s = state.clone();
            set(&mut s, v);
            block(&s).unwrap_or(f64::NEG_INFINITY)
        },
        true,
    )
}

/// Moments of `GIBBS_DRAWS` conditional draws against the quadrature posterior
/// of the same conditional, built from the model's log density.
pub fn gibbs_conditional(which: Conditional) -> Vec<Comparison> {
    let (data, state, hyper) = gibbs_instance();
    let nets = data.networks();
    let cl = data.clinical();
    let u = state.u.matrix().clone();
    let lambda_prior = |x: f64| -x * x / (2.0 * state.tau_lambda_sq);
    let one = |name, sampled, oracle| {
        vec![Comparison {
            name,
            sampled,
            oracle,
        }]
    };
    let network = |s: &ModelState| log_network_block(s, nets, &hyper);
    let clinical = |s: &ModelState| log_clinical_block(s, cl, &hyper);
    match which {
        Conditional::LambdaNetworkOnly => {
            let i = 7;
            let y = nets.dense(i);
            let oracle = grid_moments(
                |x| network_kernel_loglik(y, &u, &[x], state.sigma_sq).unwrap() + lambda_prior(x),
                false,
            );
            let mut rng = stream(1, 0);
            one(
                "λ network-only",
                sampled(|| update_lambda_network_only(i, &state, nets, &mut rng).unwrap()[0]),
                oracle,
            )
        }
        Conditional::LambdaJoint => {
            let i = 3;
            let y = nets.dense(i);
            let z = [cl.z[(i, 0)]];
            let oracle = grid_moments(
                |x| {
                    network_kernel_loglik(y, &u, &[x], state.sigma_sq).unwrap()
                        + lambda_prior(x)
                        + clinical_loglik(
                            cl.c[i],
                            &z,
                            &[x],
                            &[state.beta[0]],
                            &[state.alpha[0]],
                            state.tau_sq,
                        )
                        .unwrap()
                },
                false,
            );
            let mut rng = stream(2, 0);
            one(
                "λ joint",
                sampled(|| update_lambda_joint(i, &state, &data, &mut rng).unwrap()[0]),
                oracle,
            )
        }
        Conditional::Coefficients => {
            let f = |b: f64, a: f64| {
                let mut s = state.clone();
                s.beta[0] = b;
                s.alpha[0] = a;
                clinical(&s).unwrap()
            };
            let (mean, cov) = grid_moments_2d(f, (0.0, 0.0));
            let mut rng = stream(3, 0);
            let xs: Vec<DVector<f64>> = (0..GIBBS_DRAWS)
                .map(|_| update_coeffs(&state, cl, &mut rng).unwrap())
                .collect();
            let col = |k: usize| sample_moments(&xs.iter().map(|d| d[k]).collect::<Vec<_>>());
            vec![
                Comparison {
                    name: "β",
                    sampled: col(0),
                    oracle: (mean[0], cov[(0, 0)]),
                },
                Comparison {
                    name: "α",
                    sampled: col(1),
                    oracle: (mean[1], cov[(1, 1)]),
                },
            ]
        }
        Conditional::SigmaSq => {
            let oracle = variance_oracle(network, &state, |s, v| s.sigma_sq = v);
            let mut rng = stream(4, 0);
            one(
                "σ²",
                sampled(|| update_sigma_sq(&state, nets, &hyper, &mut rng).unwrap()),
                oracle,
            )
        }
        Conditional::TauLambdaSq => {
            let oracle = variance_oracle(network, &state, |s, v| s.tau_lambda_sq = v);
            let mut rng = stream(5, 0);
            one(
                "τ_λ²",
                sampled(|| update_tau_lambda_sq(&state, &hyper, &mut rng).unwrap()),
                oracle,
            )
        }
        Conditional::TauSq => {
            let oracle = variance_oracle(clinical, &state, |s, v| s.tau_sq = v);
            let mut rng = stream(6, 0);
            one(
                "τ²",
                sampled(|| update_tau_sq(&state, cl, &hyper, &mut rng).unwrap()),
                oracle,
            )
        }
        Conditional::TauBetaSq => {
            let oracle = variance_oracle(clinical, &state, |s, v| s.tau_beta_sq = v);
            let mut rng = stream(7, 0);
            one(
                "τ_β²",
                sampled(|| update_tau_beta_sq(&state, &hyper, &mut rng).unwrap()),
                oracle,
            )
        }
        Conditional::TauAlphaSq => {
            let oracle = variance_oracle(clinical, &state, |s, v| s.tau_alpha_sq = v);
            let mut rng = stream(8, 0);
            one(
                "τ_α²",
                sampled(|| update_tau_alpha_sq(&state, &hyper, &mut rng).unwrap()),
                oracle,
            )
        }
    }
}

/// Random X target with `N ≤ 8`, `q ≤ 3` and a random evaluation point.
pub fn random_x_target(seed: u64) -> (XTarget, DMatrix<f64>) {
    let mut rng = stream(seed, 0);
    let n = rng.random_range(3..=8);
    let q = rng.random_range(1..=3.min(n - 1));
    let m = rng.random_range(2..=6);
    let networks = (0..m)
        .map(|_| {
            let a = matrix_normal_std(&mut rng, n, n);
            SymmetricNetwork::from_dense(&((&a + a.transpose()) * 0.5)).unwrap()
        })
        .collect();
    let networks = NetworkData::new(networks).unwrap();
    let lambdas = matrix_normal_std(&mut rng, m, q) * 2.0;
    let sigma_sq = rng.random_range(0.5..2.0);
    let target = XTarget::new(&lambdas, sigma_sq, &networks).unwrap();
    (target, matrix_normal_std(&mut rng, n, q))
}

/// Relative error `‖∇ - ∇_fd‖ / ‖∇‖` on each of `instances` random targets.
pub fn gradient_errors(instances: u64) -> Vec<f64> {
    (0..instances)
        .map(|seed| {
            let (target, x) = random_x_target(seed);
            let (_, grad) = target.log_density_and_grad(&x).unwrap();
            let fd = fd_gradient(|p| target.log_density(p).unwrap(), &x, 1e-5);
            (&grad - &fd).norm() / grad.norm().max(1e-12)
        })
        .collect()
}

/// MALA on the X target with all loadings zero, i.e. a standard matrix
/// normal. Returns the mean of `‖X‖²/(Nq)` and the acceptance rate over
/// `steps` iterations after adaptation has been frozen.
pub fn mala_data_free(steps: usize) -> (f64, f64) {
    const N: usize = 8;
    const Q: usize = 2;
    let networks = (0..4)
        .map(|_| SymmetricNetwork::from_dense(&DMatrix::identity(N, N)).unwrap())
        .collect();
    let networks = NetworkData::new(networks).unwrap();
    let target = XTarget::new(&DMatrix::zeros(4, Q), 1.0, &networks).unwrap();
    let eval = |x: &DMatrix<f64>| target.log_density_and_grad(x);
    let mut rng = stream(11, 0);
    let x0 = matrix_normal_std(&mut rng, N, Q);
    let (lp, grad) = eval(&x0).unwrap();
    let mut point = Evaluated {
        x: x0,
        log_target: lp,
        grad,
    };
    let config = MalaConfig::default();
    let mut adapter = StepAdapter::new(config, config.initial_step(N, Q));
    for _ in 0..5_000 {
        let out = mala_step(point, adapter.omega(), eval, &mut rng).unwrap();
        adapter.record(out.accepted);
        point = out.point;
    }
    adapter.freeze();
    let (mut sum_sq, mut accepted) = (0.0, 0usize);
    for _ in 0..steps {
        let out = mala_step(point, adapter.omega(), eval, &mut rng).unwrap();
        accepted += out.accepted as usize;
        point = out.point;
        sum_sq += point.x.norm_squared() / (N * Q) as f64;
    }
    (sum_sq / steps as f64, accepted as f64 / steps as f64)
}

/// Streaming `log(mean(exp(v)))`.
pub struct LogMean {
    shift: f64,
    sum: f64,
    n: usize,
}

impl LogMean {
    pub fn new() -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            sum: 0.0,
            n: 0,
        }
    }

    pub fn push(&mut self, v: f64) {
        self.n += 1;
        if v > self.shift {
            self.sum = self.sum * (self.shift - v).exp() + 1.0;
            self.shift = v;
        } else {
            self.sum += (v - self.shift).exp();
        }
    }

    pub fn value(&self) -> f64 {
        self.shift + (self.sum / self.n as f64).ln()
    }
}

/// One 3-node network and a fixed unit frame.
pub fn network_instance() -> (NetworkData, DMatrix<f64>) {
    let y = SymmetricNetwork::from_vecl(3, vec![0.9, 0.4, 0.7]).unwrap();
    let nets = NetworkData::new(vec![y]).unwrap();
    let u = DMatrix::from_column_slice(3, 1, &[0.6, 0.48, 0.64]);
    (nets, u)
}

/// Quadrature and Monte Carlo values of the integrated network likelihood,
/// the latter drawing `(λ, τ_λ²)` from their priors.
pub fn network_marginal_vs_monte_carlo(draws: usize) -> (f64, f64) {
    let (nets, u) = network_instance();
    let hyper = Hyperparams::default();
    let sigma_sq = 0.8;
    let rule = build_quadrature(QuadratureKind::GaussHermite1d, 32).unwrap();
    let quad = log_marginal_network(&nets, &u, sigma_sq, &hyper, &rule).unwrap();
    let prior = hyper.tau_lambda_sq_prior();
    let mut rng = stream(101, 0);
    let mut acc = LogMean::new();
    for _ in 0..draws {
        let t = 1.0 / gamma(&mut rng, prior.shape, prior.rate).unwrap();
        let lam = normal(&mut rng, 0.0, t).unwrap();
        acc.push(network_kernel_loglik(nets.dense(0), &u, &[lam], sigma_sq).unwrap());
    }
    (quad, acc.value())
}

/// Four subjects, one loading column, one binary covariate.
pub fn clinical_instance() -> (DMatrix<f64>, ClinicalData) {
    let lam = DMatrix::from_column_slice(4, 1, &[0.5, 1.2, -0.3, 2.0]);
    let clinical = ClinicalData::new(
        DVector::from_vec(vec![0.8, 1.5, -0.1, 2.4]),
        DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 1.0, 0.0]),
    )
    .unwrap();
    (lam, clinical)
}

/// Monte Carlo `log A(λ)` drawing `(β, α, τ², τ_β², τ_α²)` from their priors.
pub fn a_lambda_monte_carlo(
    lam: &DMatrix<f64>,
    cl: &ClinicalData,
    hyper: &Hyperparams,
    draws: usize,
    seed: u64,
) -> f64 {
    let (pt, pb, pa) = (
        hyper.tau_sq_prior(),
        hyper.tau_beta_sq_prior(),
        hyper.tau_alpha_sq_prior(),
    );
    let mut rng = stream(seed, 0);
    let mut acc = LogMean::new();
    for _ in 0..draws {
        let tau = 1.0 / gamma(&mut rng, pt.shape, pt.rate).unwrap();
        let tb = 1.0 / gamma(&mut rng, pb.shape, pb.rate).unwrap();
        let ta = 1.0 / gamma(&mut rng, pa.shape, pa.rate).unwrap();
        let beta = normal(&mut rng, 0.0, tb).unwrap();
        let alpha = normal(&mut rng, 0.0, ta).unwrap();
        let ll: f64 = (0..cl.len())
            .map(|i| {
                let mean = beta * lam[(i, 0)] + alpha * cl.z[(i, 0)];
                -0.5 * (2.0 * PI * tau).ln() - (cl.c[i] - mean).powi(2) / (2.0 * tau)
            })
            .sum();
        acc.push(ll);
    }
    acc.value()
}

/// Quadrature and Monte Carlo `log A(λ)` on the four-subject instance.
pub fn a_lambda_vs_monte_carlo(draws: usize) -> (f64, f64) {
    let (lam, cl) = clinical_instance();
    let hyper = Hyperparams::default();
    let rule = build_quadrature(QuadratureKind::SparseUniform3d, 6).unwrap();
    let quad = log_a_lambda(&lam, &cl, &hyper, &rule, PrecisionScales::unit())
        .unwrap()
        .value;
    (quad, a_lambda_monte_carlo(&lam, &cl, &hyper, draws, 202))
}
