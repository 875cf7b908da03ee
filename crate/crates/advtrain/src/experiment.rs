//! Experiment harness: replication running, metric tables, trajectory CSVs,
//! and tidy plot-data emission.
//!
//! Every run writes into one directory: `config.toml` (the resolved
//! configuration, echoed back), `rows.csv` (per-replication metrics),
//! `summary.csv` (mean and sd per metric and group), and one
//! `traj_<group>_rep<k>.csv` per replication with the per-iteration columns
//! t, train_loss_surrogate, train_loss_exact, pop_risk, grad_norm,
//! theta_norm, theta_l1.
//!
//! Replications run in parallel but their outputs are assembled in
//! replication order, and all CSV bytes come from deterministic formatting,
//! so a run is byte-identical for a fixed seed regardless of thread count.
//! Replication k uses seed `dataset.seed + k`.

use crate::attack::{AttackSpec, Norm};
use crate::config::{
    ActivationName, ActivationSpec, AutoWord, EtaSpec, ExperimentConfig, InitName, InitSpec,
    StopName, StopSpec,
};
use crate::datagen::{sample_dataset, GenModel};
use crate::error::{Error, Result};
use crate::linalg::{norm1, norm2, ols};
use crate::network::{balance_outer, uniform_outer, Activation, TwoLayerNet};
use crate::risk::{optimal_theta, RobustOptimum};
use crate::train::{
    adv_train_linear, adv_train_two_layer, Eta, Init, Reporting, StopRule, TrainConfig,
};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const TRAJ_HEADER: &str =
    "t,train_loss_surrogate,train_loss_exact,pop_risk,grad_norm,theta_norm,theta_l1";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub group: String,
    pub replication: u32,
    pub value: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub group: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Per-replication metric rows plus mean/sd summary rows.
#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    pub rows: Vec<MetricRow>,
    pub summaries: Vec<SummaryRow>,
}

impl ResultTable {
    pub fn push(&mut self, metric: &str, group: &str, replication: u32, value: f64) {
        self.rows.push(MetricRow {
            metric: metric.to_string(),
            group: group.to_string(),
            replication,
            value,
            ok: true,
        });
    }

    pub fn push_failure(&mut self, group: &str, replication: u32) {
        self.rows.push(MetricRow {
            metric: "run_failed".into(),
            group: group.to_string(),
            replication,
            value: 1.0,
            ok: false,
        });
    }

    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.ok)
    }

    /// Rebuilds the summary rows from the metric rows: per (metric, group),
    /// mean and sample sd accumulated in row order.
    pub fn summarize(&mut self) {
        let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            if r.ok {
                groups
                    .entry((r.metric.clone(), r.group.clone()))
                    .or_default()
                    .push(r.value);
            }
        }
        self.summaries = groups
            .into_iter()
            .map(|((metric, group), vals)| {
                let (mean, sd) = mean_sd(&vals);
                SummaryRow {
                    metric,
                    group,
                    mean,
                    sd,
                    count: vals.len(),
                }
            })
            .collect();
    }

    pub fn summary(&self, metric: &str, group: &str) -> Option<&SummaryRow> {
        self.summaries
            .iter()
            .find(|s| s.metric == metric && s.group == group)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("metric,group,replication,value,status\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.metric,
                r.group,
                r.replication,
                fmt_f64(r.value),
                if r.ok { "ok" } else { "failed" }
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,group,mean,sd,count\n");
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.metric,
                s.group,
                fmt_f64(s.mean),
                fmt_f64(s.sd),
                s.count
            );
        }
        out
    }
}

/// Sequential mean and sample sd (n-1 denominator; sd = 0 for n < 2).
pub fn mean_sd(vals: &[f64]) -> (f64, f64) {
    if vals.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let ss = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "".into()
    } else {
        format!("{v}")
    }
}

/// In-memory run outputs; files are written once by the coordinator.
#[derive(Debug, Default)]
pub struct Outputs {
    pub table: ResultTable,
    /// (file name, file body) pairs, written verbatim.
    pub files: Vec<(String, String)>,
    pub failed_replications: usize,
    /// One line per linear replication for sweep.csv.
    pub sweep_rows: Vec<SweepRow>,
}

/// One replication of a sweep, in the wide per-run format
/// {seed, n, d, epsilon, xi, lambda, train_over_v2, pop_over_v2, T,
/// theta_norm, theta_l1} (T = -1 when the stopping threshold was never hit).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub epsilon: f64,
    pub xi: f64,
    pub lambda: f64,
    pub train_over_v2: f64,
    pub pop_over_v2: f64,
    pub stopping_t: i64,
    pub theta_norm: f64,
    pub theta_l1: f64,
}

pub const SWEEP_HEADER: &str =
    "seed,n,d,epsilon,xi,lambda,train_over_v2,pop_over_v2,T,theta_norm,theta_l1";

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.n,
            r.d,
            r.epsilon,
            r.xi,
            r.lambda,
            fmt_f64(r.train_over_v2),
            fmt_f64(r.pop_over_v2),
            r.stopping_t,
            fmt_f64(r.theta_norm),
            fmt_f64(r.theta_l1)
        );
    }
    out
}

/// A finished run on disk.
#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub table: ResultTable,
    pub failed_replications: usize,
}

pub fn group_tag(epsilon: f64, xi: f64, lambda: f64, label: Option<&str>) -> String {
    let mut tag = String::new();
    if let Some(l) = label {
        let _ = write!(tag, "{l},");
    }
    let _ = write!(tag, "eps={epsilon},xi={xi}");
    if lambda != 0.0 {
        let _ = write!(tag, ",lambda={lambda}");
    }
    tag
}

fn traj_file_name(group: &str, rep: u32) -> String {
    let sanitized: String = group
        .chars()
        .map(|c| match c {
            '=' => '-',
            ',' => '_',
            c => c,
        })
        .collect();
    format!("traj_{sanitized}_rep{rep}.csv")
}

fn trajectory_csv(records: impl Iterator<Item = TrajRow>) -> String {
    let mut out = String::from(TRAJ_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            fmt_f64(r.surrogate),
            fmt_f64(r.exact),
            r.pop_risk.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.grad_norm),
            fmt_f64(r.theta_norm),
            fmt_f64(r.theta_l1)
        );
    }
    out
}

type RepPayload = (String, Vec<(String, f64)>, Option<SweepRow>);

struct TrajRow {
    t: usize,
    surrogate: f64,
    exact: f64,
    pop_risk: Option<f64>,
    grad_norm: f64,
    theta_norm: f64,
    theta_l1: f64,
}

/// Number of strict surrogate-loss increases after the first iteration
/// (comparisons from iteration 1 -> 2 onward, tolerance 1e-12).
pub fn increases_after_first(losses: &[f64]) -> usize {
    losses
        .windows(2)
        .skip(1)
        .filter(|w| w[1] > w[0] + 1e-12)
        .count()
}

fn resolve_init(
    init: &InitSpec,
    ds: &crate::datagen::Dataset,
    rep_seed: u64,
) -> Result<Init> {
    Ok(match init {
        InitSpec::Name(InitName::Zero) => Init::Zero,
        InitSpec::Name(InitName::Ols) => Init::Explicit(ols(ds.x.view(), ds.y.view())?),
        InitSpec::Vanishing { vanishing } => Init::Vanishing {
            delta: vanishing.delta,
            seed: crate::rng::derive_seed(rep_seed, 0x1237),
        },
        InitSpec::Explicit { explicit } => Init::Explicit(ndarray::Array1::from_vec(explicit.clone())),
    })
}

fn resolve_train_config(cfg: &ExperimentConfig, lambda: f64, init: Init) -> TrainConfig {
    TrainConfig {
        eta: match cfg.train.eta {
            EtaSpec::Fixed(e) => Eta::Fixed(e),
            EtaSpec::Auto(AutoWord::Auto) => Eta::Auto,
        },
        max_iters: cfg.train.max_iters,
        lambda_l1: lambda,
        init,
        stop: match cfg.train.stop {
            StopSpec::Name(StopName::Fixed) => StopRule::FixedT,
            StopSpec::Name(StopName::Highdim) => StopRule::HighdimThreshold,
            StopSpec::GradNorm { grad_norm } => StopRule::GradNorm { tol: grad_norm },
        },
        snapshot_every: cfg.train.snapshot_every,
    }
}

pub fn build_network(cfg: &ExperimentConfig, d: usize) -> Result<Option<TwoLayerNet>> {
    let Some(net) = &cfg.network else {
        return Ok(None);
    };
    let mut outer = uniform_outer(net.h, net.outer_seed);
    if net.balance {
        balance_outer(&mut outer);
    }
    let activation = match &net.activation {
        ActivationSpec::Name(ActivationName::Sigmoid) => Activation::SigmoidCentered,
        ActivationSpec::Identity { identity } => Activation::IdentityScaled { scale: *identity },
        ActivationSpec::Relu { relu } => Activation::ReluScaled { scale: *relu },
    };
    Ok(Some(TwoLayerNet::zero_init(d, outer, activation)?))
}

struct RepOutcome {
    rep: u32,
    file: (String, String),
    metrics: Vec<(String, f64)>,
    sweep: Option<SweepRow>,
    failure: Option<String>,
}

/// Runs one configuration (every epsilon x xi x lambda combination times
/// `replications`) into `outputs`. `label` distinguishes network variants
/// when a preset runs several under one roof.
pub fn run_config_into(
    cfg: &ExperimentConfig,
    model: &GenModel,
    label: Option<&str>,
    outputs: &mut Outputs,
) -> Result<()> {
    cfg.validate()?;
    let reps = cfg.dataset.replications;
    if model.is_degenerate() {
        outputs.table.push("model_degenerate_flag", "all", 0, 1.0);
    }
    for epsilon in cfg.attack.epsilon.values() {
        // The robust optimum is shared across xi/lambda/replications.
        let optimum: Option<RobustOptimum> = match cfg.attack.norm {
            Norm::L2 => Some(optimal_theta(model, epsilon, Norm::L2)?),
            Norm::Linf => None,
        };
        for xi in cfg.attack.xi.values() {
            for lambda in cfg.train.lambda_l1.values() {
                let group = group_tag(epsilon, xi, lambda, label);
                let spec = AttackSpec {
                    norm: cfg.attack.norm,
                    epsilon,
                    xi,
                    method: cfg.attack.method,
                };
                if let Some(opt) = &optimum {
                    outputs.table.push("r_star", &group, 0, opt.r_star);
                }
                let outcomes: Vec<RepOutcome> = (0..reps)
                    .into_par_iter()
                    .map(|rep| {
                        run_one_replication(cfg, model, &spec, lambda, &group, rep, optimum.as_ref())
                    })
                    .collect();
                for oc in outcomes {
                    match oc.failure {
                        Some(_) => {
                            outputs.table.push_failure(&group, oc.rep);
                            outputs.failed_replications += 1;
                        }
                        None => {
                            for (m, v) in &oc.metrics {
                                outputs.table.push(m, &group, oc.rep, *v);
                            }
                            if let Some(sr) = oc.sweep {
                                outputs.sweep_rows.push(sr);
                            }
                            outputs.files.push(oc.file);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn run_one_replication(
    cfg: &ExperimentConfig,
    model: &GenModel,
    spec: &AttackSpec,
    lambda: f64,
    group: &str,
    rep: u32,
    optimum: Option<&RobustOptimum>,
) -> RepOutcome {
    let rep_seed = cfg.dataset.seed.wrapping_add(rep as u64);
    let file_name = traj_file_name(group, rep);
    let inner = || -> Result<RepPayload> {
        let ds = sample_dataset(model, cfg.dataset.n, rep_seed)?;
        let init = resolve_init(&cfg.train.init, &ds, rep_seed)?;
        let mut tc = resolve_train_config(cfg, lambda, init);
        let mut spec = *spec;
        let mut schedule_metrics: Vec<(String, f64)> = Vec::new();
        if cfg.network.is_none() {
            // A schedule constant requests the theorem-driven (xi, eta, T),
            // derived from this replication's sample variance of y.
            if let Some(l) = cfg.train.schedule_l {
                let sched = crate::train::linear_schedule_from_data(&ds, l)?;
                spec.xi = sched.xi;
                tc.eta = crate::train::Eta::Fixed(sched.eta);
                tc.max_iters = sched.t;
                schedule_metrics.push(("schedule_xi".into(), sched.xi));
                schedule_metrics.push(("schedule_eta".into(), sched.eta));
                schedule_metrics.push(("schedule_t".into(), sched.t as f64));
            }
        }
        let spec = &spec;
        let v2 = model.v_squared();
        let mut metrics = schedule_metrics;
        let mut sweep = None;
        let body;
        if let Some(base_net) = build_network(cfg, ds.dim())? {
            let netsec = cfg.network.as_ref().unwrap();
            let reporting = Reporting {
                model,
                mc_samples: netsec.mc_samples,
                mc_seed: crate::rng::derive_seed(rep_seed, 0xA77AC),
                mc_every: netsec.mc_every,
            };
            let traj = adv_train_two_layer(&ds, &base_net, Some(reporting), spec, &tc)?;
            body = trajectory_csv(traj.records.iter().map(|r| TrajRow {
                t: r.t,
                surrogate: r.surrogate_loss,
                exact: r.exact_loss,
                pop_risk: r.pop_risk,
                grad_norm: r.grad_norm,
                theta_norm: r.weight_norm,
                theta_l1: norm1(r.effective_coef.view()),
            }));
            let last = traj.records.last().unwrap();
            let losses: Vec<f64> = traj.records.iter().map(|r| r.surrogate_loss).collect();
            let incr = increases_after_first(&losses);
            metrics.push(("final_train_surrogate".into(), last.surrogate_loss));
            metrics.push(("final_train_exact".into(), last.exact_loss));
            metrics.push(("train_over_v2".into(), last.surrogate_loss / v2));
            if let Some(p) = last.pop_risk {
                metrics.push(("final_pop_risk".into(), p));
                metrics.push(("pop_over_v2".into(), p / v2));
                if let Some(opt) = optimum {
                    metrics.push(("pop_over_r_star".into(), p / opt.r_star));
                }
            }
            let coef = &last.effective_coef;
            metrics.push(("effective_coef_norm".into(), norm2(coef.view())));
            metrics.push((
                "std_risk".into(),
                crate::train::standard_risk(&coef.to_owned(), model),
            ));
            metrics.push(("increases_after_first".into(), incr as f64));
            metrics.push(("monotone_after_first".into(), (incr == 0) as u8 as f64));
            metrics.push((
                "stopping_t".into(),
                traj.stopping_t.map(|t| t as f64).unwrap_or(-1.0),
            ));
        } else {
            let reporting = Reporting {
                model,
                mc_samples: 0,
                mc_seed: 0,
                mc_every: 0,
            };
            let traj = adv_train_linear(&ds, Some(reporting), spec, &tc)?;
            body = trajectory_csv(traj.records.iter().map(|r| TrajRow {
                t: r.t,
                surrogate: r.surrogate_loss,
                exact: r.exact_loss,
                pop_risk: r.pop_risk,
                grad_norm: r.grad_norm,
                theta_norm: r.theta_norm,
                theta_l1: r.theta_l1,
            }));
            let last = traj.records.last().unwrap();
            let losses: Vec<f64> = traj.records.iter().map(|r| r.surrogate_loss).collect();
            let incr = increases_after_first(&losses);
            let theta = &traj.final_theta;
            metrics.push(("final_train_surrogate".into(), last.surrogate_loss));
            metrics.push(("final_train_exact".into(), last.exact_loss));
            metrics.push(("train_over_v2".into(), last.surrogate_loss / v2));
            let pop = last.pop_risk.unwrap();
            metrics.push(("final_pop_risk".into(), pop));
            metrics.push(("pop_over_v2".into(), pop / v2));
            metrics.push(("theta_norm".into(), last.theta_norm));
            metrics.push(("theta_l1".into(), last.theta_l1));
            metrics.push(("std_risk".into(), crate::train::standard_risk(theta, model)));
            metrics.push(("support_size".into(), theta.iter().filter(|v| v.abs() > 1e-6).count() as f64));
            metrics.push(("increases_after_first".into(), incr as f64));
            metrics.push(("monotone_after_first".into(), (incr == 0) as u8 as f64));
            metrics.push((
                "stopping_t".into(),
                traj.stopping_t.map(|t| t as f64).unwrap_or(-1.0),
            ));
            if let Some(opt) = optimum {
                metrics.push(("pop_over_r_star".into(), pop / opt.r_star));
                let dist = theta
                    .iter()
                    .zip(opt.theta_star.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
                metrics.push(("l1_dist_to_theta_star".into(), dist));
            }
            sweep = Some(SweepRow {
                seed: rep_seed,
                n: ds.n(),
                d: ds.dim(),
                epsilon: spec.epsilon,
                xi: spec.xi,
                lambda,
                train_over_v2: last.surrogate_loss / v2,
                pop_over_v2: pop / v2,
                stopping_t: traj.stopping_t.map(|t| t as i64).unwrap_or(-1),
                theta_norm: last.theta_norm,
                theta_l1: last.theta_l1,
            });
        }
        Ok((body, metrics, sweep))
    };
    match inner() {
        Ok((body, metrics, sweep)) => RepOutcome {
            rep,
            file: (file_name, body),
            metrics,
            sweep,
            failure: None,
        },
        Err(e) => RepOutcome {
            rep,
            file: (file_name, String::new()),
            metrics: Vec::new(),
            sweep: None,
            failure: Some(e.to_string()),
        },
    }
}

/// Runs a full configuration and writes everything under `out_dir`.
pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path, base_dir: &Path) -> Result<RunOutput> {
    let model = cfg.build_model(base_dir)?;
    let mut outputs = Outputs::default();
    run_config_into(cfg, &model, None, &mut outputs)?;
    finish(cfg, outputs, out_dir)
}

/// Writes the accumulated outputs plus the echoed configuration.
pub fn finish(cfg: &ExperimentConfig, mut outputs: Outputs, out_dir: &Path) -> Result<RunOutput> {
    outputs.table.summarize();
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("config.toml"),
        crate::config::serialize_config(cfg)?,
    )?;
    for (name, body) in &outputs.files {
        if !body.is_empty() {
            std::fs::write(out_dir.join(name), body)?;
        }
    }
    std::fs::write(out_dir.join("rows.csv"), outputs.table.rows_csv())?;
    std::fs::write(out_dir.join("summary.csv"), outputs.table.summary_csv())?;
    if !outputs.sweep_rows.is_empty() {
        std::fs::write(out_dir.join("sweep.csv"), sweep_csv(&outputs.sweep_rows))?;
    }
    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        table: outputs.table,
        failed_replications: outputs.failed_replications,
    })
}

/// Tidy per-figure plot data: for each metric panel (train = surrogate
/// training loss, test = population risk), one CSV with columns
/// series,x,y,y_lo,y_hi where y is the mean across replications at iteration
/// x and the band is mean -/+ one sd.
pub fn emit_plotdata(dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg_path = dir.join("config.toml");
    if !cfg_path.exists() {
        return Err(Error::MissingResults(format!(
            "{} (is this a run directory?)",
            cfg_path.display()
        )));
    }
    let cfg = ExperimentConfig::from_path(&cfg_path)?;
    let mut entries: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("traj_") && n.ends_with(".csv"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::MissingResults(format!(
            "no trajectory files (traj_*.csv) in {}",
            dir.display()
        )));
    }
    // group -> rep -> (iteration, training loss, population risk) rows
    type PlotRows = Vec<(usize, f64, Option<f64>)>;
    let mut series: BTreeMap<String, Vec<PlotRows>> = BTreeMap::new();
    for name in &entries {
        let stem = name.trim_start_matches("traj_").trim_end_matches(".csv");
        let Some(pos) = stem.rfind("_rep") else { continue };
        let group = stem[..pos].to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(dir.join(name))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let t: usize = rec[0].parse().map_err(|_| Error::Csv(format!("bad t in {name}")))?;
            let train: f64 = rec[1]
                .parse()
                .map_err(|_| Error::Csv(format!("bad loss in {name}")))?;
            let pop = rec.get(3).and_then(|s| if s.is_empty() { None } else { s.parse().ok() });
            rows.push((t, train, pop));
        }
        series.entry(group).or_default().push(rows);
    }
    let expected_reps = cfg.dataset.replications as usize;
    for (group, reps) in &series {
        if reps.len() < expected_reps {
            return Err(Error::MissingResults(format!(
                "group {group} has {} trajectory files, expected {expected_reps}",
                reps.len()
            )));
        }
    }
    let mut written = Vec::new();
    for (panel, pick) in [
        ("train", 0usize),
        ("test", 1usize),
    ] {
        let mut out = String::from("series,x,y,y_lo,y_hi\n");
        let mut any = false;
        for (group, reps) in &series {
            let max_t = reps.iter().map(|r| r.len()).max().unwrap_or(0);
            for ti in 0..max_t {
                let mut vals = Vec::new();
                let mut x = 0usize;
                for r in reps {
                    if let Some(row) = r.get(ti) {
                        x = row.0;
                        match pick {
                            0 => vals.push(row.1),
                            _ => {
                                if let Some(p) = row.2 {
                                    vals.push(p);
                                }
                            }
                        }
                    }
                }
                if vals.is_empty() {
                    continue;
                }
                any = true;
                let (mean, sd) = mean_sd(&vals);
                let _ = writeln!(
                    out,
                    "{group},{x},{},{},{}",
                    fmt_f64(mean),
                    fmt_f64(mean - sd),
                    fmt_f64(mean + sd)
                );
            }
        }
        if any {
            let path = dir.join(format!("plot_{panel}.csv"));
            std::fs::write(&path, out)?;
            written.push(path);
        }
    }
    Ok(written)
}
