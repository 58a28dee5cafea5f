//! Metropolis-adjusted Langevin step with windowed step-size adaptation.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BsnError, Result};
use crate::numerics::{matrix_normal_std, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalaConfig {
    /// Initial step size; `None` means `0.01 / sqrt(N q)`.
    pub omega0: Option<f64>,
    pub rho_target: f64,
    pub k0: usize,
    pub shrink: f64,
    pub grow: f64,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            omega0: None,
            rho_target: 0.574,
            k0: 50,
            shrink: 0.9,
            grow: 1.1,
        }
    }
}

impl MalaConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.omega0 {
            if !(w > 0.0) || !w.is_finite() {
                return Err(BsnError::Config(format!(
                    "omega0 must be positive, got {w}"
                )));
            }
        }
        if !(self.rho_target > 0.0 && self.rho_target < 1.0) {
            return Err(BsnError::Config(format!(
                "rho_target must lie in (0,1), got {}",
                self.rho_target
            )));
        }
        if self.k0 == 0 {
            return Err(BsnError::Config("k0 must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.grow > 0.0) {
            return Err(BsnError::Config(
                "shrink and grow factors must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_step(&self, n: usize, q: usize) -> f64 {
        self.omega0
            .unwrap_or_else(|| 0.01 / ((n * q) as f64).sqrt())
    }
}

/// Log target value and gradient at a point.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub x: DMatrix<f64>,
    pub log_target: f64,
    pub grad: DMatrix<f64>,
}

/// Result of one MALA transition.
#[derive(Debug, Clone)]
pub struct MalaOutcome {
    pub point: Evaluated,
    pub accepted: bool,
    /// `log` of the Metropolis–Hastings ratio; `-∞` when the proposal was invalid.
    pub log_ratio: f64,
}

/// `log q(to | from)` up to the Gaussian normalising constant, which cancels.
fn log_proposal(to: &DMatrix<f64>, from: &Evaluated, omega: f64) -> f64 {
    let drift = &from.x + &from.grad * (0.5 * omega * omega);
    -(to - drift).norm_squared() / (2.0 * omega * omega)
}

/// `log [π(Q) q(X|Q)] - log [π(X) q(Q|X)]`.
pub fn log_accept_ratio(current: &Evaluated, proposal: &Evaluated, omega: f64) -> f64 {
    proposal.log_target - current.log_target + log_proposal(&current.x, proposal, omega)
        - log_proposal(&proposal.x, current, omega)
}

/// One MALA transition from `current`. `target` returns the log density and
/// its gradient; an error or a non-finite value at the proposal is a rejection.
pub fn mala_step<R, F>(
    current: Evaluated,
    omega: f64,
    target: F,
    rng: &mut R,
) -> Result<MalaOutcome>
where
    R: Rng + ?Sized,
    F: Fn(&DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>,
{
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(BsnError::Parameter(format!(
            "MALA step size must be positive, got {omega}"
        )));
    }
    let noise = matrix_normal_std(rng, current.x.nrows(), current.x.ncols());
    let proposed = &current.x + &current.grad * (0.5 * omega * omega) + noise * omega;
    let u = uniform(rng);

    let evaluated = match target(&proposed) {
        Ok((lp, g)) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => Some(Evaluated {
            x: proposed,
            log_target: lp,
            grad: g,
        }),
        _ => None,
    };
    let Some(prop) = evaluated else {
        return Ok(MalaOutcome {
            point: current,
            accepted: false,
            log_ratio: f64::NEG_INFINITY,
        });
    };
    let log_ratio = log_accept_ratio(&current, &prop, omega);
    if u.ln() < log_ratio {
        Ok(MalaOutcome {
            point: prop,
            accepted: true,
            log_ratio,
        })
    } else {
        Ok(MalaOutcome {
            point: current,
            accepted: false,
            log_ratio,
        })
    }
}

/// Shrinks the step when the window acceptance rate is below target and
/// grows it otherwise (ties grow).
pub fn adapt_step(omega: f64, accepts_in_window: usize, window: usize, config: &MalaConfig) -> f64 {
    let rate = accepts_in_window as f64 / window.max(1) as f64;
    if rate < config.rho_target {
        omega * config.shrink
    } else {
        omega * config.grow
    }
}

/// Tracks the current step and the acceptance count within the tuning window.
#[derive(Debug, Clone)]
pub struct StepAdapter {
    config: MalaConfig,
    omega: f64,
    accepts: usize,
    seen: usize,
    frozen: bool,
}

impl StepAdapter {
    pub fn new(config: MalaConfig, omega0: f64) -> Self {
        Self {
            config,
            omega: omega0,
            accepts: 0,
            seen: 0,
            frozen: false,
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Stops further adaptation; the step stays at its current value.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn record(&mut self, accepted: bool) {
        if self.frozen {
            return;
        }
        self.seen += 1;
        self.accepts += accepted as usize;
        if self.seen == self.config.k0 {
            self.omega = adapt_step(self.omega, self.accepts, self.seen, &self.config);
            self.seen = 0;
            self.accepts = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream;

    fn std_normal(x: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        Ok((-0.5 * x.norm_squared(), -x))
    }

    fn eval(x: DMatrix<f64>) -> Evaluated {
        let (lp, g) = std_normal(&x).unwrap();
        Evaluated {
            x,
            log_target: lp,
            grad: g,
        }
    }

    #[test]
    fn adapt_branches() {
        let c = MalaConfig::default();
        assert!((adapt_step(1.0, 0, 50, &c) - 0.9).abs() < 1e-15);
        assert!((adapt_step(1.0, 50, 50, &c) - 1.1).abs() < 1e-15);
        let tie = MalaConfig {
            rho_target: 0.5,
            ..c
        };
        assert!((adapt_step(1.0, 25, 50, &tie) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn tiny_step_always_accepts() {
        let mut rng = stream(1, 0);
        let mut cur = eval(DMatrix::from_element(3, 2, 0.7));
        for _ in 0..100 {
            let out = mala_step(cur, 1e-8, std_normal, &mut rng).unwrap();
            assert!(out.accepted);
            assert!(out.log_ratio.abs() < 1e-6);
            cur = out.point;
        }
    }

    #[test]
    fn ratio_is_antisymmetric() {
        let a = eval(DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 2.0, 0.1]));
        let b = eval(DMatrix::from_row_slice(2, 2, &[0.5, -0.2, 1.1, 0.9]));
        let fwd = log_accept_ratio(&a, &b, 0.4);
        let back = log_accept_ratio(&b, &a, 0.4);
        assert!((fwd + back).abs() < 1e-10);
    }

    #[test]
    fn constant_shift_does_not_change_decisions() {
        let shifted = |x: &DMatrix<f64>| std_normal(x).map(|(lp, g)| (lp + 1000.0, g));
        let mut r1 = stream(9, 0);
        let mut r2 = stream(9, 0);
        let mut a = eval(DMatrix::from_element(2, 2, 0.1));
        let mut b = {
            let mut e = a.clone();
            e.log_target += 1000.0;
            e
        };
        for _ in 0..500 {
            let oa = mala_step(a, 0.9, std_normal, &mut r1).unwrap();
            let ob = mala_step(b, 0.9, shifted, &mut r2).unwrap();
            assert_eq!(oa.accepted, ob.accepted);
            a = oa.point;
            b = ob.point;
        }
    }

    #[test]
    fn invalid_proposal_is_rejected() {
        let mut rng = stream(2, 0);
        let bad = |_: &DMatrix<f64>| -> Result<(f64, DMatrix<f64>)> {
            Err(BsnError::Singular("x".into()))
        };
        let cur = eval(DMatrix::from_element(2, 1, 1.0));
        let out = mala_step(cur.clone(), 0.5, bad, &mut rng).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.point.x, cur.x);
    }

    #[test]
    fn adapter_freezes() {
        let cfg = MalaConfig {
            k0: 2,
            ..Default::default()
        };
        let mut a = StepAdapter::new(cfg, 1.0);
        a.record(false);
        a.record(false);
        assert!((a.omega() - 0.9).abs() < 1e-15);
        a.freeze();
        for _ in 0..10 {
            a.record(true);
        }
        assert!((a.omega() - 0.9).abs() < 1e-15);
    }
}
