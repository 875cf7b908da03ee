//! Named experiment presets at desk scale, each expressed in the shared
//! configuration schema and run through the common harness.
//!
//! Replication seeds are root_seed + replication_index throughout, so a
//! failed replication can be re-run in isolation.

use crate::attack::{AttackSpec, Method, Norm};
use crate::config::{parse_config, ExperimentConfig};
use crate::datagen::{estimate_v_squared, sample_dataset};
use crate::error::{Error, Result};
use crate::experiment::{
    finish, group_tag, run_config_into, Outputs, RunOutput,
};
use crate::network::LinearModel;
use crate::risk::{optimal_theta, population_risk};
use crate::train::{adv_train_linear, Eta, Init, StopRule, TrainConfig};
use rayon::prelude::*;
use std::path::Path;

pub const PRESET_NAMES: [&str; 9] = [
    "fig1_smoothing",
    "fig3_highdim",
    "a1_lowdim_linear",
    "a2_lowdim_networks",
    "a4_highdim_variants",
    "a5_highdim_networks",
    "lasso_sparse_l2",
    "lasso_sparse_linf",
    "attack_difference",
];

/// The preset's base configuration. Loading and re-serializing it is the
/// identity (presets are immutable).
pub fn preset_config(name: &str) -> Result<ExperimentConfig> {
    let text = preset_toml(name)?;
    parse_config(text)
}

pub fn preset_toml(name: &str) -> Result<&'static str> {
    Ok(match name {
        // Smoothing effect on one dataset: d = 10, n = 1000, eps = 3, with
        // xi = 0 against xi = 0.05, warm-started from least squares so the
        // descent phase is visible. The xi = 0 run fluctuates; xi = 0.05 is
        // non-increasing after the first iteration.
        "fig1_smoothing" => r#"
experiment = "fig1_smoothing"

[model]
noise_var = 1.0
theta0 = { dense = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0] }
sigma = "identity"

[dataset]
n = 1000
seed = 42
replications = 1

[attack]
norm = "l2"
epsilon = 3.0
xi = [0.0, 0.05]
method = "exact"

[train]
eta = 0.0005
max_iters = 1000
init = "ols"
"#,
        // Interpolation failure: n = 20, d = 1000, sparse truth, xi = 0.5,
        // eta = 0.001, zero init, 2000 iterations, 100 replications. The
        // stopping iteration is recorded; training runs on so the loss curves
        // are visible end to end.
        "fig3_highdim" => r#"
experiment = "fig3_highdim"

[model]
noise_var = 1.0
theta0 = { sparse = { d = 1000, s = 10, value = 1.0 } }
sigma = "identity"

[dataset]
n = 20
seed = 42
replications = 100

[attack]
norm = "l2"
epsilon = [0.0, 0.01, 0.1]
xi = 0.5
method = "exact"

[train]
eta = 0.001
max_iters = 2000
init = "zero"
"#,
        // Low-dimensional linear sweep over attack strengths with zero init,
        // xi = 0.1, eta = 0.01.
        "a1_lowdim_linear" => r#"
experiment = "a1_lowdim_linear"

[model]
noise_var = 1.0
theta0 = { dense = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0] }
sigma = "identity"

[dataset]
n = 1000
seed = 42
replications = 100

[attack]
norm = "l2"
epsilon = [0.1, 0.5, 1.0, 2.0]
xi = 0.1
method = "exact"

[train]
eta = 0.01
max_iters = 1000
init = "zero"
"#,
        // Lazy-trained two-layer networks, d = 3, n = 100, h = 50,
        // a ~ Unif[-1,1], FGM attacks, xi = 0.01, 4000 iterations. Three
        // activation variants run side by side: centered sigmoid (vanishing
        // init, eta 0.2), x/4 (zero init, eta 0.2), relu/4 with balanced
        // outer weights (zero init, eta 0.8).
        "a2_lowdim_networks" => r#"
experiment = "a2_lowdim_networks"
[model]
noise_var = 1.0
theta0 = { dense = [0.5773502691896258, 0.5773502691896258, 0.5773502691896258] }
sigma = "identity"

[dataset]
n = 100
seed = 42
replications = 50

[attack]
norm = "l2"
epsilon = 0.5
xi = 0.01
method = "fgm"

[train]
eta = 0.2
max_iters = 4000
init = { vanishing = { delta = 0.5 } }

[network]
h = 50
activation = "sigmoid"
outer_seed = 17
balance = true
mc_samples = 10000
mc_every = 200
"#,
        // High-dimensional variants at d = 5000 with eta = 0.0002, plus the
        // xi = 0 ablation.
        "a4_highdim_variants" => r#"
experiment = "a4_highdim_variants"

[model]
noise_var = 1.0
theta0 = { sparse = { d = 5000, s = 10, value = 1.0 } }
sigma = "identity"

[dataset]
n = 20
seed = 42
replications = 20

[attack]
norm = "l2"
epsilon = [0.0, 0.01, 0.1]
xi = [0.5, 0.0]
method = "exact"

[train]
eta = 0.0002
max_iters = 500
init = "zero"
"#,
        // High-dimensional two-layer networks: d = 1000, n = 20,
        // sigma^2 = 0.1, h = 50, xi = 0.1, 100 iterations; eta 0.16 for the
        // sigmoid/linear variants and 0.64 for relu; vanishing init with
        // h^delta = d^0.6 except relu (zero init).
        "a5_highdim_networks" => r#"
experiment = "a5_highdim_networks"
[model]
noise_var = 0.1
theta0 = { sparse = { d = 1000, s = 10, value = 1.0 } }
sigma = "identity"

[dataset]
n = 20
seed = 42
replications = 20

[attack]
norm = "l2"
epsilon = 0.1
xi = 0.1
method = "fgm"

[train]
eta = 0.16
max_iters = 100
init = { vanishing = { delta = 1.0594 } }

[network]
h = 50
activation = "sigmoid"
outer_seed = 17
balance = true
mc_samples = 2000
mc_every = 25
"#,
        // LASSO-penalized adversarial training on the sparse model,
        // n in {50, 100, 200, 400}, lambda at the Theorem lower bound with
        // c = 2 (computed from each replication's sample variance of y)
        // against the lambda = 0 interpolating run.
        "lasso_sparse_l2" => r#"
experiment = "lasso_sparse_l2"

[model]
noise_var = 1.0
theta0 = { sparse = { d = 1000, s = 10, value = 1.0 } }
sigma = "identity"

[dataset]
n = 400
seed = 42
replications = 20

[attack]
norm = "l2"
epsilon = 0.3
xi = 0.05
method = "exact"

[train]
eta = 0.01
max_iters = 2500
init = "zero"
"#,
        "lasso_sparse_linf" => r#"
experiment = "lasso_sparse_linf"

[model]
noise_var = 1.0
theta0 = { sparse = { d = 1000, s = 10, value = 1.0 } }
sigma = "identity"

[dataset]
n = 400
seed = 42
replications = 20

[attack]
norm = "linf"
epsilon = 0.0316227766016838
xi = 0.00005
method = "exact"

[train]
eta = 0.005
max_iters = 2500
init = "zero"
"#,
        // Attack-difference probe: train at each attack strength, then run
        // PGD-5 twice from independent random starts and report the mean
        // distance between the two perturbations.
        "attack_difference" => r#"
experiment = "attack_difference"

[model]
noise_var = 1.0
theta0 = { dense = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0] }
sigma = "identity"

[dataset]
n = 200
seed = 42
replications = 10

[attack]
norm = "l2"
epsilon = [0.5, 1.0, 2.0, 3.0]
xi = 0.05
method = { pgd = 5 }

[train]
eta = 0.01
max_iters = 300
init = "zero"
"#,
        other => {
            return Err(Error::UnknownPreset(
                other.to_string(),
                PRESET_NAMES.join(", "),
            ))
        }
    })
}

/// Runs a preset with optional seed/out-dir/`--set` overrides.
pub fn run_preset(
    name: &str,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunOutput> {
    let mut text = preset_toml(name)?.to_string();
    let mut all_overrides: Vec<(String, String)> = Vec::new();
    if let Some(s) = seed {
        all_overrides.push(("dataset.seed".into(), s.to_string()));
    }
    all_overrides.extend_from_slice(overrides);
    if !all_overrides.is_empty() {
        text = crate::config::apply_overrides(&text, &all_overrides)?;
    }
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    let out = resolve_out_dir(&cfg, out_dir);
    match name {
        "a2_lowdim_networks" | "a5_highdim_networks" => run_network_preset(name, &cfg, &out),
        "lasso_sparse_l2" | "lasso_sparse_linf" => run_lasso_preset(&cfg, &out),
        "attack_difference" => run_attack_difference(&cfg, &out),
        _ => crate::experiment::run_config(&cfg, &out, Path::new(".")),
    }
}

fn resolve_out_dir(cfg: &ExperimentConfig, cli: Option<&Path>) -> std::path::PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out_dir {
        return p.clone();
    }
    let root = std::env::var("ADVTRAIN_OUT").unwrap_or_else(|_| "results".into());
    Path::new(&root).join(&cfg.experiment)
}

/// Three activation variants per network preset: (label, activation spec,
/// eta, init).
fn network_variants(name: &str) -> Vec<(&'static str, crate::config::ActivationSpec, f64, bool)> {
    use crate::config::{ActivationName, ActivationSpec};
    match name {
        // (label, activation, eta, vanishing_init)
        "a2_lowdim_networks" => vec![
            ("sigmoid", ActivationSpec::Name(ActivationName::Sigmoid), 0.2, true),
            ("linear", ActivationSpec::Identity { identity: 0.25 }, 0.2, false),
            ("relu", ActivationSpec::Relu { relu: 0.25 }, 0.8, false),
        ],
        "a5_highdim_networks" => vec![
            ("sigmoid", ActivationSpec::Name(ActivationName::Sigmoid), 0.16, true),
            ("linear", ActivationSpec::Identity { identity: 0.25 }, 0.16, true),
            ("relu", ActivationSpec::Relu { relu: 0.25 }, 0.64, false),
        ],
        _ => unreachable!(),
    }
}

fn run_network_preset(name: &str, cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    let model = cfg.build_model(Path::new("."))?;
    let mut outputs = Outputs::default();
    for (label, activation, eta, vanishing) in network_variants(name) {
        let mut sub = cfg.clone();
        let net = sub.network.as_mut().expect("network presets carry a network table");
        net.activation = activation;
        sub.train.eta = crate::config::EtaSpec::Fixed(eta);
        if !vanishing {
            sub.train.init = crate::config::InitSpec::Name(crate::config::InitName::Zero);
        }
        run_config_into(&sub, &model, Some(&format!("net={label}")), &mut outputs)?;
    }
    finish(cfg, outputs, out)
}

fn run_lasso_preset(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    let model = cfg.build_model(Path::new("."))?;
    let d = model.dim();
    let s_active = model.theta0().iter().filter(|v| **v != 0.0).count().max(1);
    let epsilon = cfg.attack.epsilon.values()[0];
    let xi = cfg.attack.xi.values()[0];
    let optimum = match cfg.attack.norm {
        Norm::L2 => Some(optimal_theta(&model, epsilon, Norm::L2)?),
        Norm::Linf => None,
    };
    let mut outputs = Outputs::default();
    let reps = cfg.dataset.replications;
    for n in [50usize, 100, 200, 400] {
        if n > cfg.dataset.n {
            continue;
        }
        for lam_kind in ["0", "theorem"] {
            let group = format!("n={n},lambda={lam_kind},eps={epsilon},xi={xi}");
            if let Some(opt) = &optimum {
                outputs.table.push("r_star", &group, 0, opt.r_star);
            }
            type RepMetrics = Vec<(String, f64)>;
            let results: Vec<(u32, Result<RepMetrics>)> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let rep_seed = cfg.dataset.seed.wrapping_add(rep as u64);
                    let r = (|| {
                        let ds = sample_dataset(&model, n, rep_seed)?;
                        let v_hat_sq = estimate_v_squared(&ds);
                        let lambda = if lam_kind == "0" {
                            0.0
                        } else {
                            2.0 * v_hat_sq.sqrt()
                                * (s_active as f64 * (d as f64).ln() / n as f64).sqrt()
                        };
                        let spec = AttackSpec {
                            norm: cfg.attack.norm,
                            epsilon,
                            xi,
                            method: cfg.attack.method,
                        };
                        let tc = TrainConfig {
                            eta: match cfg.train.eta {
                                crate::config::EtaSpec::Fixed(e) => Eta::Fixed(e),
                                _ => Eta::Auto,
                            },
                            max_iters: cfg.train.max_iters,
                            lambda_l1: lambda,
                            init: Init::Zero,
                            stop: StopRule::FixedT,
                            snapshot_every: 0,
                        };
                        let rep_ctx = crate::train::Reporting {
                            model: &model,
                            mc_samples: 0,
                            mc_seed: 0,
                            mc_every: 0,
                        };
                        let traj = adv_train_linear(&ds, Some(rep_ctx), &spec, &tc)?;
                        let theta = &traj.final_theta;
                        let last = traj.records.last().unwrap();
                        let v2 = model.v_squared();
                        let pop = last.pop_risk.unwrap();
                        let mut m: Vec<(String, f64)> = vec![
                            ("lambda_value".into(), lambda),
                            ("final_train_surrogate".into(), last.surrogate_loss),
                            ("final_pop_risk".into(), pop),
                            ("pop_over_v2".into(), pop / v2),
                            ("theta_l1".into(), last.theta_l1),
                            (
                                "support_size".into(),
                                theta.iter().filter(|v| v.abs() > 1e-6).count() as f64,
                            ),
                            (
                                "std_risk".into(),
                                crate::train::standard_risk(theta, &model),
                            ),
                        ];
                        if let Some(opt) = &optimum {
                            let dist: f64 = theta
                                .iter()
                                .zip(opt.theta_star.iter())
                                .map(|(a, b)| (a - b).abs())
                                .sum();
                            m.push(("pop_over_r_star".into(), pop / opt.r_star));
                            m.push(("l1_dist_to_theta_star".into(), dist));
                            if lambda > 0.0 {
                                m.push((
                                    "l1_dist_over_lambda_s".into(),
                                    dist / (lambda * s_active as f64),
                                ));
                            }
                        }
                        Ok(m)
                    })();
                    (rep, r)
                })
                .collect();
            for (rep, r) in results {
                match r {
                    Ok(metrics) => {
                        for (metric, value) in metrics {
                            outputs.table.push(&metric, &group, rep, value);
                        }
                    }
                    Err(_) => {
                        outputs.table.push_failure(&group, rep);
                        outputs.failed_replications += 1;
                    }
                }
            }
        }
    }
    finish(cfg, outputs, out)
}

fn run_attack_difference(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput> {
    let model = cfg.build_model(Path::new("."))?;
    let Method::Pgd(k) = cfg.attack.method else {
        return Err(Error::Config {
            path: "attack.method".into(),
            message: "the attack-difference probe needs a pgd method".into(),
        });
    };
    let xi_train = cfg.attack.xi.values()[0];
    let mut outputs = Outputs::default();
    let reps = cfg.dataset.replications;
    let mut means_per_eps = Vec::new();
    for epsilon in cfg.attack.epsilon.values() {
        let group = group_tag(epsilon, xi_train, 0.0, None);
        let results: Vec<(u32, Result<f64>)> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = cfg.dataset.seed.wrapping_add(rep as u64);
                let r = (|| {
                    let ds = sample_dataset(&model, cfg.dataset.n, rep_seed)?;
                    let train_spec = AttackSpec::surrogate(Norm::L2, epsilon, xi_train);
                    let tc = TrainConfig {
                        eta: match cfg.train.eta {
                            crate::config::EtaSpec::Fixed(e) => Eta::Fixed(e),
                            _ => Eta::Auto,
                        },
                        max_iters: cfg.train.max_iters,
                        ..Default::default()
                    };
                    let traj = adv_train_linear(&ds, None, &train_spec, &tc)?;
                    let theta = traj.final_theta;
                    let lm = LinearModel::new(theta.view());
                    // Probe with the plain (xi = 0) attack so only PGD's
                    // start-point memory drives the difference.
                    let probe_spec = AttackSpec {
                        norm: cfg.attack.norm,
                        epsilon,
                        xi: 0.0,
                        method: cfg.attack.method,
                    };
                    let mut rng = crate::rng::GaussianStream::new(
                        crate::rng::derive_seed(rep_seed, 0xD1FF),
                    );
                    let mut total = 0.0;
                    for i in 0..ds.n() {
                        total += crate::attack::attack_difference(
                            &lm,
                            ds.x.row(i),
                            ds.y[i],
                            &probe_spec,
                            k,
                            &mut rng,
                        );
                    }
                    Ok(total / ds.n() as f64)
                })();
                (rep, r)
            })
            .collect();
        let mut vals = Vec::new();
        for (rep, r) in results {
            match r {
                Ok(v) => {
                    outputs.table.push("mean_attack_difference", &group, rep, v);
                    outputs
                        .table
                        .push("relative_attack_difference", &group, rep, v / epsilon);
                    vals.push(v);
                }
                Err(_) => {
                    outputs.table.push_failure(&group, rep);
                    outputs.failed_replications += 1;
                }
            }
        }
        let (mean, _) = crate::experiment::mean_sd(&vals);
        means_per_eps.push(mean);
    }
    let increasing = means_per_eps.windows(2).all(|w| w[1] > w[0]);
    outputs
        .table
        .push("attack_difference_increasing", "all", 0, increasing as u8 as f64);
    finish(cfg, outputs, out)
}

/// One-shot closed-form risk evaluation for the CLI: a CSV row
/// {epsilon, xi, norm, value, normalized, se}.
pub fn risk_csv_row(
    theta: &ndarray::Array1<f64>,
    model: &crate::datagen::GenModel,
    epsilon: f64,
    xi: f64,
    norm: Norm,
) -> String {
    let r = population_risk(theta.view(), model, epsilon, norm);
    let norm_name = match norm {
        Norm::L2 => "l2",
        Norm::Linf => "linf",
    };
    format!(
        "epsilon,xi,norm,value,normalized,se\n{epsilon},{xi},{norm_name},{},{},\n",
        r.value, r.normalized
    )
}
