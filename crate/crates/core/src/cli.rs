//! Command-line front end: `simulate`, `fit`, `predict` and `cv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{BsnError, Result};
use crate::evaluate::{
    cross_validate, fit, predict, predictive_r2, CvOptions, PredictOptions, SamplerKind,
};
use crate::io;
use crate::sampler::SamplerConfig;
use crate::simulate::{generate, SimConfig};

#[derive(Debug, Parser)]
#[command(
    name = "bsnmani",
    version,
    about = "Bayesian scalar-on-network regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Sample the posterior and write draws.
    Fit(FitArgs),
    /// Predict outcomes for new subjects from a fitted posterior.
    Predict(PredictArgs),
    /// Repeated k-fold cross-validation of predictive R².
    Cv(CvArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML file with simulation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub snr_y: Option<f64>,
    #[arg(long)]
    pub snr_c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub networks: PathBuf,
    #[arg(long)]
    pub clinical: PathBuf,
}

#[derive(Debug, Args)]
pub struct SamplerArgs {
    /// TOML file with sampler settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "joint")]
    pub sampler: SamplerKind,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Defaults to half of `iters` when the configured value would not fit.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Also write every draw of the subject loadings.
    #[arg(long)]
    pub save_lambdas: bool,
    /// Posterior output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub posterior: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the full matrix of predictive samples here.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include outcome noise in the predictive samples.
    #[arg(long)]
    pub outcome_noise: bool,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn read_toml<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| BsnError::Config(format!("{}: {e}", path.display())))
}

pub fn sim_config(args: &SimulateArgs) -> Result<SimConfig> {
    let mut cfg: SimConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => SimConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_subjects {
        cfg.n_subjects = v;
    }
    if let Some(v) = args.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = args.snr_y {
        cfg.snr_y = v;
    }
    if let Some(v) = args.snr_c {
        cfg.snr_c = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn sampler_config(args: &SamplerArgs) -> Result<SamplerConfig> {
    let mut cfg: SamplerConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => SamplerConfig::default(),
    };
    if let Some(v) = args.q {
        cfg.q = v;
    }
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.thin {
        cfg.thin = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    match args.burn_in {
        Some(v) => cfg.burn_in = v,
        None if cfg.burn_in >= cfg.iters => cfg.burn_in = cfg.iters / 2,
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

const POSTERIOR_FILES: [&str; 7] = [
    "draws.csv",
    "u_draws.csv",
    "lambda_draws.csv",
    "traces.csv",
    "imh.csv",
    "run.json",
    "timing.json",
];

fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let cfg = sim_config(args)?;
    let sim = generate(&cfg)?;
    io::write_simulated(&args.out, &sim)?;
    println!(
        "wrote {} subjects ({} held out) to {}",
        sim.records.len(),
        sim.test_records.len(),
        args.out.display()
    );
    Ok(())
}

fn fit_cmd(args: &FitArgs) -> Result<()> {
    let cfg = sampler_config(&args.sampler)?;
    let data = io::load_dataset(&args.data.networks, &args.data.clinical)?;
    let start = Instant::now();
    let draws = fit(&data, &cfg, args.sampler.sampler)?;
    let seconds = start.elapsed().as_secs_f64();
    let info = io::RunInfo {
        sampler: args.sampler.sampler,
        config: cfg,
        n_nodes: data.n(),
        n_subjects: data.len(),
        n_covariates: data.r(),
        n_draws: draws.len(),
        mala_acceptance: draws.mala_acceptance,
        final_step: draws.final_step,
        imh_acceptance_rate: draws.imh.as_ref().map(|s| s.acceptance_rate),
        imh_skipped: draws.imh.as_ref().map(|s| s.skipped),
        imh_node_failures: draws.imh.as_ref().map(|s| s.node_failures),
        lambdas_saved: args.save_lambdas,
    };
    let ids: Vec<String> = data.records().iter().map(|r| r.id.clone()).collect();
    let existed = args.out.exists();
    let written = io::write_posterior(&args.out, &draws, &info, &ids).and_then(|_| {
        let timing = serde_json::json!({ "seconds": seconds, "iterations": cfg.iters });
        fs::write(args.out.join("timing.json"), format!("{timing:#}\n")).map_err(BsnError::Io)
    });
    if let Err(e) = written {
        if existed {
            for f in POSTERIOR_FILES {
                let _ = fs::remove_file(args.out.join(f));
            }
        } else {
            let _ = fs::remove_dir_all(&args.out);
        }
        return Err(e);
    }
    print!(
        "{} draws, MALA acceptance {:.3}",
        draws.len(),
        draws.mala_acceptance
    );
    if let Some(rate) = info.imh_acceptance_rate {
        print!(", IMH acceptance {rate:.3}");
    }
    println!(", {seconds:.1}s");
    Ok(())
}

fn predict_cmd(args: &PredictArgs) -> Result<()> {
    let (draws, info) = io::read_posterior(&args.posterior)?;
    let data = io::load_dataset(&args.data.networks, &args.data.clinical)?;
    if data.n() != info.n_nodes {
        return Err(BsnError::Validation(format!(
            "test networks have N = {} nodes but the posterior was fitted with N = {}",
            data.n(),
            info.n_nodes
        )));
    }
    if data.r() != info.n_covariates {
        return Err(BsnError::Validation(format!(
            "test data have r = {} covariates but the posterior was fitted with r = {}",
            data.r(),
            info.n_covariates
        )));
    }
    let opts = PredictOptions {
        seed: args.seed,
        outcome_noise: args.outcome_noise,
    };
    let pred = predict(&draws, data.networks(), &data.clinical().z, opts)?;
    let ids: Vec<String> = data.records().iter().map(|r| r.id.clone()).collect();
    io::write_predictions(&args.out, &ids, &pred)?;
    if let Some(p) = &args.samples {
        io::write_prediction_samples(p, &ids, &pred)?;
    }
    let truth = data.clinical().c.as_slice();
    if truth.iter().all(|v| v.is_finite()) {
        if let Ok(r2) = predictive_r2(&pred.point, truth) {
            println!("predictive R² {r2:.4} over {} subjects", ids.len());
        }
    }
    Ok(())
}

fn cv_cmd(args: &CvArgs) -> Result<()> {
    let cfg = sampler_config(&args.sampler)?;
    let data = io::load_dataset(&args.data.networks, &args.data.clinical)?;
    let opts = CvOptions {
        folds: args.folds,
        repeats: args.repeats,
        sampler: args.sampler.sampler,
    };
    let result = cross_validate(&data, opts, &cfg)?;
    io::write_cv(&args.out, &result)?;
    println!("median R² {:.4}, IQR {:.4}", result.median, result.iqr);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Cv(a) => cv_cmd(a),
    }
}
