//! CSV and JSON formats for datasets, posterior draws, predictions and
//! cross-validation tables. Floats are written with 17 significant digits.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BsnError, Result};
use crate::evaluate::{CvResult, Predictions, SamplerKind};
use crate::model::{Dataset, SubjectRecord};
use crate::numerics::SymmetricNetwork;
use crate::sampler::{Draw, ImhSummary, PosteriorDraws, SamplerConfig, Traces};
use crate::simulate::{GroundTruth, Simulated};

pub const VECL_ORDER: &str = "column-major-strict-lower";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, what: &str, path: &Path) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        BsnError::Validation(format!(
            "{}: cannot parse {what} value '{s}'",
            path.display()
        ))
    })
}

fn csv_err(path: &Path, e: csv::Error) -> BsnError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BsnError::Io(io),
        other => BsnError::Validation(format!("{}: {other:?}", path.display())),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn write_row<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_err(path, e))
}

fn finish(mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(BsnError::Io)
}

fn records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| BsnError::Validation(format!("cannot serialise {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| BsnError::Validation(format!("{}: {e}", path.display())))
}

/// Column names of the `vecl` entries, 1-based: `e_2_1, e_3_1, ...`.
pub fn edge_names(n: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for col in 1..=n {
        for row in col + 1..=n {
            out.push(format!("e_{row}_{col}"));
        }
    }
    out
}

/// Node count whose strict lower triangle has `p` entries.
pub fn nodes_for_edges(p: usize) -> Option<usize> {
    let n = ((1.0 + (1.0 + 8.0 * p as f64).sqrt()) / 2.0).round() as usize;
    (n >= 2 && n * (n - 1) / 2 == p).then_some(n)
}

pub fn write_networks(path: &Path, records: &[SubjectRecord]) -> Result<()> {
    let n = records.first().map_or(0, |r| r.y.n());
    let mut w = writer(path)?;
    write_row(
        &mut w,
        path,
        std::iter::once("subject_id".to_owned()).chain(edge_names(n)),
    )?;
    for r in records {
        write_row(
            &mut w,
            path,
            std::iter::once(r.id.clone()).chain(r.y.vecl().iter().map(|&v| fmt_f64(v))),
        )?;
    }
    finish(w)
}

pub fn read_networks(path: &Path) -> Result<Vec<(String, SymmetricNetwork)>> {
    let (header, rows) = records(path)?;
    if header.first().map(String::as_str) != Some("subject_id") {
        return Err(BsnError::Validation(format!(
            "{}: first column must be subject_id",
            path.display()
        )));
    }
    let p = header.len() - 1;
    let n = nodes_for_edges(p).ok_or_else(|| {
        BsnError::Validation(format!(
            "{}: {p} edge columns is not N(N-1)/2 for any N >= 2",
            path.display()
        ))
    })?;
    if header[1..] != edge_names(n)[..] {
        return Err(BsnError::Validation(format!(
            "{}: edge columns must be named e_2_1, e_3_1, ... in {VECL_ORDER} order",
            path.display()
        )));
    }
    rows.iter()
        .map(|row| {
            let id = row[0].to_owned();
            let vals = (1..row.len())
                .map(|k| parse_f64(&row[k], &header[k], path))
                .collect::<Result<Vec<_>>>()?;
            Ok((id, SymmetricNetwork::from_vecl(n, vals)?))
        })
        .collect()
}

pub fn write_clinical(path: &Path, records: &[SubjectRecord]) -> Result<()> {
    let r = records.first().map_or(0, |s| s.z.len());
    let mut w = writer(path)?;
    let header = ["subject_id".to_owned(), "outcome".to_owned()]
        .into_iter()
        .chain((1..=r).map(|k| format!("z_{k}")));
    write_row(&mut w, path, header)?;
    for s in records {
        let row = [s.id.clone(), fmt_f64(s.c)]
            .into_iter()
            .chain(s.z.iter().map(|&v| fmt_f64(v)));
        write_row(&mut w, path, row)?;
    }
    finish(w)
}

/// Outcome and covariates keyed by subject id, in file order.
pub fn read_clinical(path: &Path) -> Result<Vec<(String, f64, Vec<f64>)>> {
    let (header, rows) = records(path)?;
    if header.len() < 2 || header[0] != "subject_id" || header[1] != "outcome" {
        return Err(BsnError::Validation(format!(
            "{}: header must start with subject_id,outcome",
            path.display()
        )));
    }
    rows.iter()
        .map(|row| {
            let c = parse_f64(&row[1], "outcome", path)?;
            let z = (2..row.len())
                .map(|k| parse_f64(&row[k], &header[k], path))
                .collect::<Result<Vec<_>>>()?;
            Ok((row[0].to_owned(), c, z))
        })
        .collect()
}

/// Joins the two files on subject id, keeping the order of the network file.
pub fn load_dataset(networks: &Path, clinical: &Path) -> Result<Dataset> {
    let nets = read_networks(networks)?;
    let clin = read_clinical(clinical)?;
    let mut by_id: HashMap<String, (f64, Vec<f64>)> = HashMap::with_capacity(clin.len());
    for (id, c, z) in clin {
        if by_id.insert(id.clone(), (c, z)).is_some() {
            return Err(BsnError::Validation(format!(
                "{}: duplicate subject '{id}'",
                clinical.display()
            )));
        }
    }
    if by_id.len() != nets.len() {
        return Err(BsnError::Validation(format!(
            "{} has {} subjects but {} has {}",
            networks.display(),
            nets.len(),
            clinical.display(),
            by_id.len()
        )));
    }
    let records = nets
        .into_iter()
        .map(|(id, y)| {
            let (c, z) = by_id.remove(&id).ok_or_else(|| {
                BsnError::Validation(format!(
                    "subject '{id}' missing from {}",
                    clinical.display()
                ))
            })?;
            Ok(SubjectRecord { id, y, c, z })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_nodes: usize,
    pub node_labels: Vec<String>,
    pub vecl_order: String,
    pub n_subjects: usize,
    pub n_covariates: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthParams {
    sigma_sq_true: f64,
    tau_sq_true: f64,
    beta_true: Vec<f64>,
    alpha_true: Vec<f64>,
}

fn write_matrix(path: &Path, ids: Option<&[String]>, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    let cols = (1..=m.ncols()).map(|k| format!("{prefix}_{k}"));
    match ids {
        Some(_) => write_row(
            &mut w,
            path,
            std::iter::once("subject_id".to_owned()).chain(cols),
        )?,
        None => write_row(&mut w, path, std::iter::once("node".to_owned()).chain(cols))?,
    }
    for i in 0..m.nrows() {
        let label = ids.map_or_else(|| (i + 1).to_string(), |ids| ids[i].clone());
        write_row(
            &mut w,
            path,
            std::iter::once(label).chain(m.row(i).iter().map(|&v| fmt_f64(v))),
        )?;
    }
    finish(w)
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let (header, rows) = records(path)?;
    let k = header.len().saturating_sub(1);
    let mut data = Vec::with_capacity(rows.len() * k);
    let mut labels = Vec::with_capacity(rows.len());
    for row in &rows {
        labels.push(row[0].to_owned());
        for j in 1..=k {
            data.push(parse_f64(&row[j], &header[j], path)?);
        }
    }
    Ok((labels, DMatrix::from_row_slice(rows.len(), k, &data)))
}

/// Writes `u_true.csv`, `lambdas_true.csv` (and `test_lambdas_true.csv`),
/// `params.json` and, in heteroscedastic mode, `edge_variances.csv`.
pub fn write_truth(
    dir: &Path,
    truth: &GroundTruth,
    ids: &[String],
    test_ids: &[String],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("u_true.csv"), None, "u", truth.u_true.matrix())?;
    write_matrix(
        &dir.join("lambdas_true.csv"),
        Some(ids),
        "lambda",
        &truth.lambdas_true,
    )?;
    if !test_ids.is_empty() {
        write_matrix(
            &dir.join("test_lambdas_true.csv"),
            Some(test_ids),
            "lambda",
            &truth.test_lambdas_true,
        )?;
    }
    if let Some(vars) = &truth.edge_variances {
        let n = truth.u_true.n();
        let path = dir.join("edge_variances.csv");
        let mut w = writer(&path)?;
        write_row(&mut w, &path, ["edge", "variance"])?;
        for (name, v) in edge_names(n).into_iter().zip(vars) {
            write_row(&mut w, &path, [name, fmt_f64(*v)])?;
        }
        finish(w)?;
    }
    let params = TruthParams {
        sigma_sq_true: truth.sigma_sq_true,
        tau_sq_true: truth.tau_sq_true,
        beta_true: truth.beta_true.iter().copied().collect(),
        alpha_true: truth.alpha_true.iter().copied().collect(),
    };
    write_json(&dir.join("params.json"), &params)
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth> {
    let (_, u) = read_matrix(&dir.join("u_true.csv"))?;
    let (_, lambdas) = read_matrix(&dir.join("lambdas_true.csv"))?;
    let test_path = dir.join("test_lambdas_true.csv");
    let test_lambdas = if test_path.exists() {
        read_matrix(&test_path)?.1
    } else {
        DMatrix::zeros(0, u.ncols())
    };
    let var_path = dir.join("edge_variances.csv");
    let edge_variances = if var_path.exists() {
        let (_, rows) = records(&var_path)?;
        Some(
            rows.iter()
                .map(|r| parse_f64(&r[1], "variance", &var_path))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let p: TruthParams = read_json(&dir.join("params.json"))?;
    Ok(GroundTruth {
        u_true: crate::numerics::StiefelPoint::new(u)?,
        lambdas_true: lambdas,
        test_lambdas_true: test_lambdas,
        sigma_sq_true: p.sigma_sq_true,
        edge_variances,
        beta_true: DVector::from_vec(p.beta_true),
        alpha_true: DVector::from_vec(p.alpha_true),
        tau_sq_true: p.tau_sq_true,
    })
}

/// Writes `networks.csv`, `clinical.csv`, `meta.json` and `truth/`, plus
/// `test_networks.csv` and `test_clinical.csv` when held-out subjects exist.
pub fn write_simulated(dir: &Path, sim: &Simulated) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = sim.truth.u_true.n();
    write_networks(&dir.join("networks.csv"), &sim.records)?;
    write_clinical(&dir.join("clinical.csv"), &sim.records)?;
    if !sim.test_records.is_empty() {
        write_networks(&dir.join("test_networks.csv"), &sim.test_records)?;
        write_clinical(&dir.join("test_clinical.csv"), &sim.test_records)?;
    }
    let meta = DatasetMeta {
        n_nodes: n,
        node_labels: (1..=n).map(|k| format!("node_{k}")).collect(),
        vecl_order: VECL_ORDER.into(),
        n_subjects: sim.records.len(),
        n_covariates: sim.truth.alpha_true.len(),
        n_test: sim.test_records.len(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    let ids: Vec<String> = sim.records.iter().map(|r| r.id.clone()).collect();
    let test_ids: Vec<String> = sim.test_records.iter().map(|r| r.id.clone()).collect();
    write_truth(&dir.join("truth"), &sim.truth, &ids, &test_ids)
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    read_json(path)
}

/// Everything about a fit that is not a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub sampler: SamplerKind,
    pub config: SamplerConfig,
    pub n_nodes: usize,
    pub n_subjects: usize,
    pub n_covariates: usize,
    pub n_draws: usize,
    pub mala_acceptance: f64,
    pub final_step: f64,
    pub imh_acceptance_rate: Option<f64>,
    pub imh_skipped: Option<usize>,
    pub imh_node_failures: Option<usize>,
    pub lambdas_saved: bool,
}

const SCALARS: [&str; 5] = [
    "sigma_sq",
    "tau_sq",
    "tau_lambda_sq",
    "tau_beta_sq",
    "tau_alpha_sq",
];

fn scalar(d: &Draw, name: &str) -> f64 {
    match name {
        "sigma_sq" => d.sigma_sq,
        "tau_sq" => d.tau_sq,
        "tau_lambda_sq" => d.tau_lambda_sq,
        "tau_beta_sq" => d.tau_beta_sq,
        _ => d.tau_alpha_sq,
    }
}

fn set_scalar(d: &mut Draw, name: &str, v: f64) -> bool {
    match name {
        "sigma_sq" => d.sigma_sq = v,
        "tau_sq" => d.tau_sq = v,
        "tau_lambda_sq" => d.tau_lambda_sq = v,
        "tau_beta_sq" => d.tau_beta_sq = v,
        "tau_alpha_sq" => d.tau_alpha_sq = v,
        _ => return false,
    }
    true
}

/// Writes a posterior directory: `draws.csv`, `u_draws.csv`, `traces.csv`,
/// `run.json`, optionally `lambda_draws.csv`, and `imh.csv` for two-stage fits.
pub fn write_posterior(
    dir: &Path,
    draws: &PosteriorDraws,
    info: &RunInfo,
    subject_ids: &[String],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join("draws.csv");
    let mut w = writer(&path)?;
    write_row(&mut w, &path, ["iteration", "name", "index", "value"])?;
    for (it, d) in draws.iterations.iter().zip(&draws.draws) {
        let it = it.to_string();
        for name in SCALARS {
            write_row(
                &mut w,
                &path,
                [it.as_str(), name, "1", &fmt_f64(scalar(d, name))],
            )?;
        }
        for (name, v) in [("beta", &d.beta), ("alpha", &d.alpha)] {
            for (k, x) in v.iter().enumerate() {
                write_row(
                    &mut w,
                    &path,
                    [it.clone(), name.into(), (k + 1).to_string(), fmt_f64(*x)],
                )?;
            }
        }
    }
    finish(w)?;

    let path = dir.join("u_draws.csv");
    let mut w = writer(&path)?;
    let (n, q) = draws
        .draws
        .first()
        .map_or((info.n_nodes, info.config.q), |d| d.u.shape());
    let cols = (1..=n).flat_map(|j| (1..=q).map(move |l| format!("u_{j}_{l}")));
    write_row(
        &mut w,
        &path,
        std::iter::once("iteration".to_owned()).chain(cols),
    )?;
    for (it, d) in draws.iterations.iter().zip(&draws.draws) {
        let vals = (0..n)
            .flat_map(|j| (0..q).map(move |l| (j, l)))
            .map(|(j, l)| fmt_f64(d.u[(j, l)]));
        write_row(&mut w, &path, std::iter::once(it.to_string()).chain(vals))?;
    }
    finish(w)?;

    if info.lambdas_saved {
        let path = dir.join("lambda_draws.csv");
        let mut w = writer(&path)?;
        write_row(&mut w, &path, ["iteration", "subject_id", "index", "value"])?;
        for (it, d) in draws.iterations.iter().zip(&draws.draws) {
            for (i, id) in subject_ids.iter().enumerate() {
                for l in 0..d.lambdas.ncols() {
                    write_row(
                        &mut w,
                        &path,
                        [
                            it.to_string(),
                            id.clone(),
                            (l + 1).to_string(),
                            fmt_f64(d.lambdas[(i, l)]),
                        ],
                    )?;
                }
            }
        }
        finish(w)?;
    }

    let path = dir.join("traces.csv");
    let mut w = writer(&path)?;
    write_row(
        &mut w,
        &path,
        ["iteration", "step_size", "accepted", "log_density"],
    )?;
    for k in 0..draws.traces.step_size.len() {
        let t = &draws.traces;
        write_row(
            &mut w,
            &path,
            [
                k.to_string(),
                fmt_f64(t.step_size[k]),
                (t.accepted[k] as u8).to_string(),
                fmt_f64(t.log_joint[k]),
            ],
        )?;
    }
    finish(w)?;

    if let Some(imh) = &draws.imh {
        let path = dir.join("imh.csv");
        let mut w = writer(&path)?;
        write_row(
            &mut w,
            &path,
            ["candidate", "accepted", "log_a", "log_marginal_network"],
        )?;
        for k in 0..imh.accepted.len() {
            let cand = imh.candidates.get(k).copied().unwrap_or(k);
            let lm = imh
                .log_marginal_network
                .get(cand)
                .map_or_else(String::new, |&v| fmt_f64(v));
            write_row(
                &mut w,
                &path,
                [
                    cand.to_string(),
                    (imh.accepted[k] as u8).to_string(),
                    fmt_f64(imh.log_a[k]),
                    lm,
                ],
            )?;
        }
        finish(w)?;
    }
    write_json(&dir.join("run.json"), info)
}

fn parse_usize(s: &str, path: &Path) -> Result<usize> {
    s.parse()
        .map_err(|_| BsnError::Validation(format!("{}: bad integer '{s}'", path.display())))
}

/// Reads a posterior directory written by [`write_posterior`]. Loadings are
/// empty (`0 x q`) unless `lambda_draws.csv` was saved.
pub fn read_posterior(dir: &Path) -> Result<(PosteriorDraws, RunInfo)> {
    let info: RunInfo = read_json(&dir.join("run.json"))?;
    let q = info.config.q;
    let path = dir.join("u_draws.csv");
    let (header, rows) = records(&path)?;
    let nq = header.len().saturating_sub(1);
    if nq != info.n_nodes * q {
        return Err(BsnError::Validation(format!(
            "{}: {nq} frame entries, expected {} x {q}",
            path.display(),
            info.n_nodes
        )));
    }
    let mut iterations = Vec::with_capacity(rows.len());
    let mut index = HashMap::with_capacity(rows.len());
    let mut draws = Vec::with_capacity(rows.len());
    for row in &rows {
        let it = parse_usize(&row[0], &path)?;
        let vals = (1..=nq)
            .map(|k| parse_f64(&row[k], &header[k], &path))
            .collect::<Result<Vec<_>>>()?;
        index.insert(it, draws.len());
        iterations.push(it);
        draws.push(Draw {
            u: DMatrix::from_row_slice(info.n_nodes, q, &vals),
            lambdas: DMatrix::zeros(0, q),
            sigma_sq: f64::NAN,
            beta: DVector::zeros(q),
            alpha: DVector::zeros(info.n_covariates),
            tau_sq: f64::NAN,
            tau_lambda_sq: f64::NAN,
            tau_beta_sq: f64::NAN,
            tau_alpha_sq: f64::NAN,
        });
    }

    let path = dir.join("draws.csv");
    let (_, rows) = records(&path)?;
    for row in &rows {
        let it = parse_usize(&row[0], &path)?;
        let k = parse_usize(&row[2], &path)?;
        let v = parse_f64(&row[3], &row[1], &path)?;
        let d = index.get(&it).map(|&i| &mut draws[i]).ok_or_else(|| {
            BsnError::Validation(format!("{}: iteration {it} has no frame", path.display()))
        })?;
        let slot = match &row[1] {
            "beta" => d.beta.get_mut(k.wrapping_sub(1)),
            "alpha" => d.alpha.get_mut(k.wrapping_sub(1)),
            name => {
                if !set_scalar(d, name, v) {
                    return Err(BsnError::Validation(format!(
                        "{}: unknown parameter '{name}'",
                        path.display()
                    )));
                }
                continue;
            }
        };
        *slot.ok_or_else(|| {
            BsnError::Validation(format!(
                "{}: index {k} out of range for {}",
                path.display(),
                &row[1]
            ))
        })? = v;
    }

    let path = dir.join("lambda_draws.csv");
    if info.lambdas_saved {
        let (_, rows) = records(&path)?;
        let mut subjects: HashMap<String, usize> = HashMap::new();
        for d in &mut draws {
            d.lambdas = DMatrix::zeros(info.n_subjects, q);
        }
        for row in &rows {
            let it = parse_usize(&row[0], &path)?;
            let next = subjects.len();
            let i = *subjects.entry(row[1].to_owned()).or_insert(next);
            let l = parse_usize(&row[2], &path)?;
            let v = parse_f64(&row[3], "lambda", &path)?;
            let d = index.get(&it).map(|&j| &mut draws[j]);
            match d {
                Some(d) if i < info.n_subjects && (1..=q).contains(&l) => d.lambdas[(i, l - 1)] = v,
                _ => {
                    return Err(BsnError::Validation(format!(
                        "{}: entry out of range",
                        path.display()
                    )))
                }
            }
        }
    }

    let path = dir.join("traces.csv");
    let mut traces = Traces::default();
    if path.exists() {
        let (_, rows) = records(&path)?;
        for row in &rows {
            traces
                .step_size
                .push(parse_f64(&row[1], "step_size", &path)?);
            traces.accepted.push(&row[2] == "1");
            traces
                .log_joint
                .push(parse_f64(&row[3], "log_density", &path)?);
        }
    }

    let path = dir.join("imh.csv");
    let imh = if path.exists() {
        let (_, rows) = records(&path)?;
        let mut s = ImhSummary {
            skipped: info.imh_skipped.unwrap_or(0),
            acceptance_rate: info.imh_acceptance_rate.unwrap_or(f64::NAN),
            node_failures: info.imh_node_failures.unwrap_or(0),
            ..Default::default()
        };
        let mut monitored = vec![None; rows.len()];
        for row in &rows {
            let cand = parse_usize(&row[0], &path)?;
            s.candidates.push(cand);
            s.accepted.push(&row[1] == "1");
            s.log_a.push(parse_f64(&row[2], "log_a", &path)?);
            if !row[3].is_empty() {
                let slot = monitored.get_mut(cand).ok_or_else(|| {
                    BsnError::Validation(format!(
                        "{}: candidate {cand} out of range",
                        path.display()
                    ))
                })?;
                *slot = Some(parse_f64(&row[3], "log_marginal_network", &path)?);
            }
        }
        if monitored.iter().any(Option::is_some) {
            s.log_marginal_network = monitored
                .into_iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect();
        }
        Some(s)
    } else {
        None
    };

    let out = PosteriorDraws {
        draws,
        iterations,
        traces,
        mala_acceptance: info.mala_acceptance,
        final_step: info.final_step,
        imh,
    };
    Ok((out, info))
}

pub fn write_predictions(path: &Path, ids: &[String], pred: &Predictions) -> Result<()> {
    let mut w = writer(path)?;
    write_row(&mut w, path, ["subject_id", "prediction", "predictive_sd"])?;
    for (i, id) in ids.iter().enumerate() {
        write_row(
            &mut w,
            path,
            [id.clone(), fmt_f64(pred.point[i]), fmt_f64(pred.sd[i])],
        )?;
    }
    finish(w)
}

/// One row per posterior draw, one column per subject.
pub fn write_prediction_samples(path: &Path, ids: &[String], pred: &Predictions) -> Result<()> {
    let mut w = writer(path)?;
    write_row(
        &mut w,
        path,
        std::iter::once("draw".to_owned()).chain(ids.iter().cloned()),
    )?;
    for k in 0..pred.samples.nrows() {
        let row = pred.samples.row(k);
        write_row(
            &mut w,
            path,
            std::iter::once(k.to_string()).chain(row.iter().map(|&v| fmt_f64(v))),
        )?;
    }
    finish(w)
}

/// Per-(repeat, fold) rows followed by one `summary` row carrying the median
/// in the `r2` column and the interquartile range in `iqr`.
pub fn write_cv(path: &Path, result: &CvResult) -> Result<()> {
    let mut w = writer(path)?;
    write_row(&mut w, path, ["repeat", "fold", "n_test", "r2", "iqr"])?;
    for r in &result.rows {
        write_row(
            &mut w,
            path,
            [
                r.repeat.to_string(),
                r.fold.to_string(),
                r.n_test.to_string(),
                fmt_f64(r.r2),
                String::new(),
            ],
        )?;
    }
    let total: usize = result.rows.iter().map(|r| r.n_test).sum();
    write_row(
        &mut w,
        path,
        [
            "summary".to_owned(),
            String::new(),
            total.to_string(),
            fmt_f64(result.median),
            fmt_f64(result.iqr),
        ],
    )?;
    finish(w)
}
