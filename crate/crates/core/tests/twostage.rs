//! Behaviour of the two stages and the correction step on small instances.

use bsnmani::evaluate::batch_means_se;
use bsnmani::marginal::{log_a_precision_integrand, RegressionStats};
use bsnmani::model::{ClinicalData, Dataset, Hyperparams, NetworkData, SubjectRecord};
use bsnmani::numerics::{normal, polar_expand, stream, EuclideanPoint, SymmetricNetwork};
use bsnmani::sampler::{align_draws, run_joint, SamplerConfig};
use bsnmani::simulate::{generate, SimConfig};
use bsnmani::twostage::{run_stage1, run_stage2, run_twostage};
use nalgebra::{DMatrix, DVector};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// With the outcome independent of the loadings, A(λ) only moves through
/// chance correlation with the sampled loadings, so it is nearly constant once
/// the loadings are well determined by the networks.
#[test]
fn outcome_unrelated_to_loadings_is_almost_always_accepted() {
    let rates: Vec<f64> = (10..14)
        .map(|seed| {
            let cfg = SimConfig {
                n_nodes: 8,
                q: 2,
                n_subjects: 50,
                snr_y: 5.0,
                beta_true: Some(vec![0.0, 0.0]),
                seed,
                ..Default::default()
            };
            let data = generate(&cfg).unwrap().dataset().unwrap();
            let config = SamplerConfig {
                iters: 4_000,
                burn_in: 2_000,
                q: 2,
                seed: 1,
                ..Default::default()
            };
            run_twostage(&data, &config)
                .unwrap()
                .imh
                .unwrap()
                .acceptance_rate
        })
        .collect();
    assert!(mean(&rates) > 0.9, "acceptance rates {rates:?}");
}

/// `E[(β, α) | C]` for fixed loadings by tensor quadrature over the three log
/// precisions, each node weighted by the integrated outcome likelihood and
/// carrying the conditional Gaussian mean of the coefficients.
fn coefficient_posterior_mean(
    lam: &DMatrix<f64>,
    cl: &ClinicalData,
    hyper: &Hyperparams,
) -> DVector<f64> {
    let stats = RegressionStats::new(lam, cl).unwrap();
    let k = stats.q + stats.r;
    let axis = |lo: f64, hi: f64, n: usize| {
        (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    };
    let mut logs = Vec::new();
    let mut means = Vec::new();
    for lp in axis(-10.0, 8.0, 121) {
        for lb in axis(-14.0, 10.0, 121) {
            for la in axis(-14.0, 10.0, 121) {
                let (p, pb, pa) = (lp.exp(), lb.exp(), la.exp());
                let Some(v) = log_a_precision_integrand(&stats, hyper, p, pb, pa) else {
                    continue;
                };
                let mut q = &stats.sxx * p;
                for j in 0..k {
                    q[(j, j)] += if j < stats.q { pb } else { pa };
                }
                let d = q.cholesky().unwrap().solve(&stats.scx) * p;
                logs.push(v + lp + lb + la);
                means.push(d);
            }
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut acc = DVector::zeros(k);
    for (l, d) in logs.iter().zip(&means) {
        let w = (l - top).exp();
        total += w;
        acc += d * w;
    }
    acc / total
}

#[test]
fn fixed_snapshot_matches_regression_posterior_mean() {
    let m = 30;
    let mut rng = stream(4, 0);
    let lam = DMatrix::from_fn(m, 1, |_, _| normal(&mut rng, 1.0, 1.0).unwrap());
    let z = DMatrix::from_fn(m, 1, |i, _| (i % 2) as f64);
    let c = DVector::from_fn(m, |i, _| {
        0.8 * lam[(i, 0)] - 0.5 * z[(i, 0)] + normal(&mut rng, 0.0, 0.5).unwrap()
    });
    let cl = ClinicalData::new(c, z).unwrap();
    let config = SamplerConfig::default();
    let oracle = coefficient_posterior_mean(&lam, &cl, &config.hyper);

    let snaps = vec![lam; 40_000];
    let draws = run_stage2(&snaps, &cl, &config, &mut stream(9, 1)).unwrap();
    for (j, name) in ["β", "α"].iter().enumerate() {
        let xs: Vec<f64> = draws
            .iter()
            .map(|d| if j == 0 { d.beta[0] } else { d.alpha[0] })
            .collect();
        let se = batch_means_se(&xs, 40);
        let got = mean(&xs);
        assert!(
            (got - oracle[j]).abs() < 3.0 * se,
            "{name}: chain {got} ± {se} vs quadrature {}",
            oracle[j]
        );
    }
}

#[test]
fn zero_loadings_leave_beta_centred_at_zero() {
    let m = 20;
    let cl = ClinicalData::new(
        DVector::from_fn(m, |i, _| (i as f64 * 0.7).sin()),
        DMatrix::from_fn(m, 1, |i, _| (i % 3) as f64),
    )
    .unwrap();
    let snaps = vec![DMatrix::zeros(m, 2); 20_000];
    let draws = run_stage2(&snaps, &cl, &SamplerConfig::default(), &mut stream(2, 1)).unwrap();
    for l in 0..2 {
        let xs: Vec<f64> = draws.iter().map(|d| d.beta[l]).collect();
        let se = batch_means_se(&xs, 40);
        assert!(mean(&xs).abs() < 4.0 * se, "β{l} mean {} ± {se}", mean(&xs));
    }
}

#[test]
fn zero_networks_centre_loadings_at_zero() {
    let nets = NetworkData::new(vec![
        SymmetricNetwork::from_vecl(5, vec![0.0; 10]).unwrap();
        15
    ])
    .unwrap();
    let config = SamplerConfig {
        iters: 2_000,
        burn_in: 1_000,
        q: 2,
        seed: 3,
        ..Default::default()
    };
    let draws = run_stage1(&nets, &config).unwrap();
    for i in 0..15 {
        let xs: Vec<f64> = draws.draws.iter().map(|d| d.lambdas[(i, 0)]).collect();
        let sd = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
        assert!(
            mean(&xs).abs() < 0.15 * sd.max(1e-300),
            "subject {i}: mean {} sd {sd}",
            mean(&xs)
        );
    }
}

#[test]
fn noiseless_stage_one_recovers_the_span() {
    let cfg = SimConfig {
        n_nodes: 12,
        q: 2,
        n_subjects: 60,
        snr_y: f64::INFINITY,
        seed: 6,
        ..Default::default()
    };
    let sim = generate(&cfg).unwrap();
    let config = SamplerConfig {
        iters: 3_000,
        burn_in: 1_500,
        q: 2,
        seed: 2,
        ..Default::default()
    };
    let draws =
        align_draws(&run_stage1(sim.dataset().unwrap().networks(), &config).unwrap()).unwrap();
    let u = polar_expand(&EuclideanPoint::new(draws.mean_u()).unwrap())
        .unwrap()
        .into_matrix();
    let cosines = (u.transpose() * sim.truth.u_true.matrix())
        .svd(false, false)
        .singular_values;
    let worst = cosines
        .iter()
        .map(|c| c.min(1.0).acos())
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "largest principal angle {worst} rad");
}

#[test]
fn stage_one_matches_joint_when_the_outcome_is_uninformative() {
    let sim = generate(&SimConfig {
        n_nodes: 8,
        q: 2,
        n_subjects: 40,
        seed: 13,
        ..Default::default()
    })
    .unwrap();
    let mut rng = stream(77, 0);
    // outcomes of enormous variance carry no information about the loadings
    let records: Vec<SubjectRecord> = sim
        .records
        .iter()
        .map(|r| SubjectRecord {
            c: 1e4 * normal(&mut rng, 0.0, 1.0).unwrap(),
            ..r.clone()
        })
        .collect();
    let data = Dataset::new(records).unwrap();
    let config = SamplerConfig {
        iters: 30_000,
        burn_in: 5_000,
        q: 2,
        seed: 4,
        ..Default::default()
    };
    let joint = run_joint(&data, &config).unwrap();
    let stage1 = run_stage1(data.networks(), &config).unwrap();
    for (name, f) in [
        (
            "σ²",
            (|d: &bsnmani::sampler::Draw| d.sigma_sq) as fn(&bsnmani::sampler::Draw) -> f64,
        ),
        ("τ_λ²", |d| d.tau_lambda_sq),
    ] {
        let a: Vec<f64> = joint.draws.iter().map(f).collect();
        let b: Vec<f64> = stage1.draws.iter().map(f).collect();
        let se = batch_means_se(&a, 25).hypot(batch_means_se(&b, 25));
        let gap = (mean(&a) - mean(&b)).abs();
        assert!(
            gap < 3.0 * se,
            "{name}: joint {} vs stage one {} (se {se})",
            mean(&a),
            mean(&b)
        );
    }
}
