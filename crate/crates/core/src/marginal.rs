//! Integrated likelihoods used by the two-stage sampler.
//!
//! [`log_marginal_network`] integrates the loadings and `τ_λ²` out of the
//! network model; [`log_a_lambda`] integrates the clinical coefficients and
//! the three clinical precisions out of the outcome model given loadings.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{BsnError, Result};
use crate::model::{ClinicalData, Hyperparams, NetworkData};
use crate::numerics::{log_sum_exp, signed_log_sum_exp, uniform, QuadratureKind, QuadratureRule};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

/// `log g(x)` for the network marginal after `x = log τ_λ²`, without the
/// prior normalising constant.
#[derive(Debug, Clone, Copy)]
struct NetworkIntegrand {
    /// `(qM + η₀)/2`
    slope: f64,
    /// `qM/2`
    half_qm: f64,
    inv_sigma_sq: f64,
    /// `σ⁻⁴ Σ‖dᵢ‖² / 2`
    signal: f64,
    /// prior rate `η₀τ₀²/2`
    rate: f64,
}

impl NetworkIntegrand {
    fn value(&self, x: f64) -> f64 {
        let e = (-x).exp();
        let d = self.inv_sigma_sq + e;
        -self.slope * x - self.half_qm * d.ln() + self.signal / d - self.rate * e
    }

    fn derivatives(&self, x: f64) -> (f64, f64) {
        let e = (-x).exp();
        let d = self.inv_sigma_sq + e;
        let first = -self.slope + self.half_qm * e / d + self.signal * e / (d * d) + self.rate * e;
        let second = -self.half_qm * e * self.inv_sigma_sq / (d * d)
            + self.signal * (2.0 * e * e - e * d) / (d * d * d)
            - self.rate * e;
        (first, second)
    }

    /// Mode by a coarse scan and Newton polishing, with the curvature there.
    fn mode(&self) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut x = -40.0;
        while x <= 40.0 {
            let v = self.value(x);
            if v > best.0 {
                best = (v, x);
            }
            x += 0.05;
        }
        let mut x = best.1;
        for _ in 0..50 {
            let (g, h) = self.derivatives(x);
            if !(h < 0.0) {
                break;
            }
            let step = (g / h).clamp(-1.0, 1.0);
            let next = x - step;
            if !(self.value(next) >= self.value(x) - 1e-12) {
                break;
            }
            x = next;
            if step.abs() < 1e-12 {
                break;
            }
        }
        (x, self.derivatives(x).1)
    }
}

/// Density of `x = -log(G / rate)` with `G ~ Gamma(shape, 1)`, i.e. the law
/// of `log τ` when `1/τ ~ Gamma(shape, rate)`. Its skewed, exponential right
/// tail matches the `log τ_λ²` integrand far better than a Gaussian.
#[derive(Debug, Clone, Copy)]
struct LogGammaReference {
    shape: f64,
    rate: f64,
}

impl LogGammaReference {
    /// Same mode and curvature as the integrand, falling back to the prior.
    fn matched(mode: f64, curvature: f64, prior_shape: f64, prior_rate: f64) -> Self {
        if curvature < 0.0 && curvature.is_finite() && mode.is_finite() {
            let shape = -curvature;
            Self {
                shape,
                rate: shape * mode.exp(),
            }
        } else {
            Self {
                shape: prior_shape,
                rate: prior_rate,
            }
        }
    }

    fn ln_density(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) - self.shape * x - self.rate * (-x).exp()
    }

    /// `x` with `P(X ≤ x) = Φ(ξ)`, solved in the smaller tail for accuracy.
    fn quantile_at_normal(&self, xi: f64) -> f64 {
        // P(X ≤ x) = Q(shape, rate e^{-x}); large ξ means a small lower tail of G.
        let ln_tail = (0.5 * erfc(xi.abs() / std::f64::consts::SQRT_2)).ln();
        let g = gamma_tail_quantile(self.shape, ln_tail, xi <= 0.0);
        -(g / self.rate).ln()
    }
}

/// `G` with `log P(G' > G) = ln_p` (upper) or `log P(G' ≤ G) = ln_p` (lower)
/// for `G' ~ Gamma(shape, 1)`, by safeguarded Newton on `log G`.
fn gamma_tail_quantile(shape: f64, ln_p: f64, upper: bool) -> f64 {
    let ln_tail = |u: f64| {
        let g = u.exp();
        let t = if upper {
            gamma_ur(shape, g)
        } else {
            gamma_lr(shape, g)
        };
        t.ln()
    };
    // the tail log-probability is decreasing in u for the upper tail
    let dir = if upper { -1.0 } else { 1.0 };
    let (mut lo, mut hi) = (-700.0f64, 700.0f64.min(shape.ln().max(0.0) + 50.0));
    let mut u = {
        // Wilson–Hilferty starting point
        let z = (-2.0 * ln_p).sqrt() * dir;
        let c = 1.0 / (9.0 * shape);
        let base = (1.0 - c + z * c.sqrt()).max(1e-3);
        (shape * base.powi(3)).ln().clamp(lo, hi)
    };
    for _ in 0..200 {
        let f = ln_tail(u) - ln_p;
        if !f.is_finite() {
            // underflowed tail: the root lies toward the bulk
            if upper {
                hi = u
            } else {
                lo = u
            }
            u = 0.5 * (lo + hi);
            continue;
        }
        if f * dir > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let g = u.exp();
        let ln_pdf_g = shape * u - g - ln_gamma(shape);
        let slope = dir * (ln_pdf_g - (ln_p + f)).exp();
        let mut next = u - f / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() < 1e-14 * u.abs().max(1.0) {
            return next.exp();
        }
        u = next;
    }
    u.exp()
}

/// Log of the network likelihood with loadings and `τ_λ²` integrated out.
/// The Gauss–Hermite rule is pushed through the quantile map of a log-gamma
/// density matched to the mode and curvature of the `log τ_λ²` integrand.
pub fn log_marginal_network(
    networks: &NetworkData,
    u: &DMatrix<f64>,
    sigma_sq: f64,
    hyper: &Hyperparams,
    rule: &QuadratureRule,
) -> Result<f64> {
    if rule.kind != QuadratureKind::GaussHermite1d {
        return Err(BsnError::Config(
            "network marginal needs a gauss-hermite-1d rule".into(),
        ));
    }
    if !(sigma_sq > 0.0) {
        return Err(BsnError::Parameter(format!(
            "sigma_sq must be positive, got {sigma_sq}"
        )));
    }
    if u.nrows() != networks.n() {
        return Err(BsnError::Dimension(format!(
            "U has {} rows for {}-node networks",
            u.nrows(),
            networks.n()
        )));
    }
    let m = networks.len() as f64;
    let q = u.ncols() as f64;
    let p = networks.edge_count() as f64;
    let inv_s = 1.0 / sigma_sq;
    let proj = networks.diag_projections(u);
    let frob: f64 = (0..networks.len()).map(|i| networks.frobenius_sq(i)).sum();
    let prior = hyper.tau_lambda_sq_prior();
    let integrand = NetworkIntegrand {
        slope: (q * m + hyper.eta0) / 2.0,
        half_qm: q * m / 2.0,
        inv_sigma_sq: inv_s,
        signal: inv_s * inv_s * proj.norm_squared() / 2.0,
        rate: prior.rate,
    };
    let (mu, curv) = integrand.mode();
    let reference = LogGammaReference::matched(mu, curv, integrand.slope, integrand.rate);

    let terms: Vec<f64> = rule
        .iter()
        .map(|(xi, w)| {
            let x = reference.quantile_at_normal(xi[0]);
            w.ln() + integrand.value(x) - reference.ln_density(x)
        })
        .collect();
    if terms.iter().all(|t| !t.is_finite()) {
        return Err(BsnError::Integration(format!(
            "network marginal integrand non-finite at all {} nodes (mode {mu}, curvature {curv})",
            terms.len()
        )));
    }
    let integral = log_sum_exp(&terms);
    Ok(-0.5 * m * p * (2.0 * PI * sigma_sq).ln() - frob * inv_s / 2.0 + prior.ln_norm() + integral)
}

/// Sufficient statistics of the outcome regression given loadings.
#[derive(Debug, Clone)]
pub struct RegressionStats {
    pub m: usize,
    pub q: usize,
    pub r: usize,
    pub sxx: DMatrix<f64>,
    pub scx: DVector<f64>,
    pub scc: f64,
}

impl RegressionStats {
    pub fn new(lambdas: &DMatrix<f64>, clinical: &ClinicalData) -> Result<Self> {
        let m = clinical.len();
        if lambdas.nrows() != m {
            return Err(BsnError::Dimension(format!(
                "{} loading rows for {m} outcomes",
                lambdas.nrows()
            )));
        }
        let q = lambdas.ncols();
        let r = clinical.r();
        let mut design = DMatrix::zeros(m, q + r);
        design.view_mut((0, 0), (m, q)).copy_from(lambdas);
        design.view_mut((0, q), (m, r)).copy_from(&clinical.z);
        Ok(Self {
            m,
            q,
            r,
            sxx: design.transpose() * &design,
            scx: design.transpose() * &clinical.c,
            scc: clinical.c.norm_squared(),
        })
    }
}

/// Multipliers `s` in `p = -s log x` for the outcome, coefficient-β and
/// coefficient-α precisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionScales {
    pub tau: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl PrecisionScales {
    pub fn unit() -> Self {
        Self {
            tau: 1.0,
            beta: 1.0,
            alpha: 1.0,
        }
    }

    /// Approximate posterior means of the three precisions from a
    /// near-least-squares fit, so that the integrand mass sits away from the
    /// corners of the unit cube.
    pub fn plug_in(stats: &RegressionStats, hyper: &Hyperparams) -> Self {
        let k = stats.q + stats.r;
        let ridge = 1e-8 * (stats.sxx.trace() / k.max(1) as f64).max(1.0);
        let a = &stats.sxx + DMatrix::identity(k, k) * ridge;
        let coef = a
            .cholesky()
            .map(|c| c.solve(&stats.scx))
            .unwrap_or_else(|| DVector::zeros(k));
        let rss =
            (stats.scc - 2.0 * coef.dot(&stats.scx) + coef.dot(&(&stats.sxx * &coef))).max(0.0);
        let beta_sq = coef.rows(0, stats.q).norm_squared();
        let alpha_sq = coef.rows(stats.q, stats.r).norm_squared();
        let (pt, pb, pa) = (
            hyper.tau_sq_prior(),
            hyper.tau_beta_sq_prior(),
            hyper.tau_alpha_sq_prior(),
        );
        Self {
            tau: (stats.m as f64 / 2.0 + pt.shape) / (pt.rate + rss / 2.0),
            beta: (stats.q as f64 / 2.0 + pb.shape) / (pb.rate + beta_sq / 2.0),
            alpha: (stats.r as f64 / 2.0 + pa.shape) / (pa.rate + alpha_sq / 2.0),
        }
    }
}

/// Value of `log A(λ)` and how many grid nodes were dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogAResult {
    pub value: f64,
    pub skipped_nodes: usize,
}

/// Log integrand over the three precisions `(p, p_β, p_α)` with `d` integrated out.
pub fn log_a_precision_integrand(
    stats: &RegressionStats,
    hyper: &Hyperparams,
    p: f64,
    pb: f64,
    pa: f64,
) -> Option<f64> {
    let (q, r, m) = (stats.q, stats.r, stats.m as f64);
    let k = q + r;
    let (gt, gb, ga) = (
        hyper.tau_sq_prior(),
        hyper.tau_beta_sq_prior(),
        hyper.tau_alpha_sq_prior(),
    );
    let mut qm = &stats.sxx * p;
    for j in 0..k {
        qm[(j, j)] += if j < q { pb } else { pa };
    }
    let chol = qm.cholesky()?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let solved = chol.solve(&stats.scx);
    let quad = p * p * stats.scx.dot(&solved);
    let v = -0.5 * m * (2.0 * PI).ln() + (m / 2.0 + gt.shape - 1.0) * p.ln()
        - (gt.rate + stats.scc / 2.0) * p
        + (q as f64 / 2.0 + gb.shape - 1.0) * pb.ln()
        - gb.rate * pb
        + (r as f64 / 2.0 + ga.shape - 1.0) * pa.ln()
        - ga.rate * pa
        - 0.5 * log_det
        + 0.5 * quad
        + gt.ln_norm()
        + gb.ln_norm()
        + ga.ln_norm();
    v.is_finite().then_some(v)
}

/// `log A(λ)`: the outcome likelihood with `β`, `α`, `τ²`, `τ_β²` and `τ_α²`
/// integrated against their priors, on a sparse grid over `(0,1)³` after
/// `p = -s log x` for each precision.
pub fn log_a_lambda(
    lambdas: &DMatrix<f64>,
    clinical: &ClinicalData,
    hyper: &Hyperparams,
    rule: &QuadratureRule,
    scales: PrecisionScales,
) -> Result<LogAResult> {
    if rule.kind != QuadratureKind::SparseUniform3d {
        return Err(BsnError::Config(
            "A(λ) needs a sparse-uniform-3d rule".into(),
        ));
    }
    let stats = RegressionStats::new(lambdas, clinical)?;
    log_a_from_stats(&stats, hyper, rule, scales)
}

pub fn log_a_from_stats(
    stats: &RegressionStats,
    hyper: &Hyperparams,
    rule: &QuadratureRule,
    scales: PrecisionScales,
) -> Result<LogAResult> {
    let jac = scales.tau.ln() + scales.beta.ln() + scales.alpha.ln();
    let mut terms = Vec::with_capacity(rule.len());
    let mut skipped = 0usize;
    for (x, w) in rule.iter() {
        let p = -scales.tau * x[0].ln();
        let pb = -scales.beta * x[1].ln();
        let pa = -scales.alpha * x[2].ln();
        match log_a_precision_integrand(stats, hyper, p, pb, pa) {
            Some(v) => {
                let sign = if w < 0.0 { -1.0 } else { 1.0 };
                terms.push((
                    sign,
                    w.abs().ln() + v + jac - x[0].ln() - x[1].ln() - x[2].ln(),
                ));
            }
            None => skipped += 1,
        }
    }
    if skipped * 100 > rule.len() {
        return Err(BsnError::Integration(format!(
            "{skipped} of {} grid nodes failed",
            rule.len()
        )));
    }
    match signed_log_sum_exp(&terms) {
        Some((value, sign)) if sign > 0.0 && value.is_finite() => Ok(LogAResult {
            value,
            skipped_nodes: skipped,
        }),
        _ => Err(BsnError::Integration(
            "sparse-grid estimate of A(λ) is not positive".into(),
        )),
    }
}

/// Independence Metropolis–Hastings decision with ratio `A(λ*)/A(λ)`.
pub fn imh_accept<R: Rng + ?Sized>(log_a_proposed: f64, log_a_current: f64, rng: &mut R) -> bool {
    let diff = log_a_proposed - log_a_current;
    uniform(rng).ln() < diff
}
