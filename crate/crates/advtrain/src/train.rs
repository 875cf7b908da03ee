//! The two-step min-max training loop: attack the samples at the current
//! parameters, then take one gradient step on the loss with the attacked
//! inputs held fixed. Supports linear models and two-layer networks,
//! theorem-driven (xi, eta, T) schedules, and an optional L1 proximal step
//! between gradient steps.
//!
//! Per-sample attacks within an iteration run in parallel; attacked rows are
//! written by sample index and all reductions happen in a fixed order, so a
//! run is bit-identical regardless of thread count.

use crate::attack::{AttackSpec, Norm};
use crate::datagen::{Dataset, GenModel};
use crate::error::{Error, Result};
use crate::linalg::{norm1, norm2, sgn};
use crate::network::TwoLayerNet;
use crate::risk::{monte_carlo_risk, population_risk, AttackModel};
use ndarray::{Array1, Array2, Axis, Zip};

/// Step size: fixed, or 0.9 / lambda_max(X^T X) chosen from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    Fixed(f64),
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    /// theta_j ~ N(0, I/(d h^(1+delta))); networks only.
    Vanishing { delta: f64, seed: u64 },
    Explicit(Array1<f64>),
    ExplicitMatrix(Array2<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run exactly max_iters steps.
    FixedT,
    /// Stop at the first t with ||X theta - y|| / (v sqrt(n)) < 1/sqrt(log n).
    HighdimThreshold,
    /// Stop once the fixed-attack gradient norm drops below tol.
    GradNorm { tol: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub eta: Eta,
    pub max_iters: usize,
    /// L1 penalty weight; 0 disables the proximal step.
    pub lambda_l1: f64,
    pub init: Init,
    pub stop: StopRule,
    /// Keep a full parameter snapshot every k-th iteration (0 = never).
    /// Scalars are recorded every iteration regardless.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: Eta::Fixed(0.01),
            max_iters: 1000,
            lambda_l1: 0.0,
            init: Init::Zero,
            stop: StopRule::FixedT,
            snapshot_every: 0,
        }
    }
}

/// Optional per-iteration risk reporting against a known generating model.
#[derive(Debug, Clone, Copy)]
pub struct Reporting<'a> {
    pub model: &'a GenModel,
    /// Monte-Carlo sample count for network risks (linear risks use the
    /// closed form every iteration).
    pub mc_samples: usize,
    pub mc_seed: u64,
    /// Evaluate the network MC risk every k-th iteration (and always at the
    /// final one); 0 = final only.
    pub mc_every: usize,
}

#[derive(Debug, Clone)]
pub struct IterRecord {
    pub t: usize,
    /// Empirical loss at the surrogate-attacked inputs for the current
    /// parameters.
    pub surrogate_loss: f64,
    /// Same with xi = 0.
    pub exact_loss: f64,
    pub pop_risk: Option<f64>,
    pub grad_norm: f64,
    pub theta_norm: f64,
    pub theta_l1: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Records at t = 0 (initialization) through the last visited iterate.
    pub records: Vec<IterRecord>,
    pub snapshots: Vec<(usize, Array1<f64>)>,
    pub final_theta: Array1<f64>,
    /// First t at which the interpolation stopping predicate held (tracked
    /// under every stop rule).
    pub stopping_t: Option<usize>,
}

/// Gradient of the empirical loss with the attacked inputs held fixed:
/// (2/n) sum_i xt_i (theta' xt_i - y_i).
pub fn grad_fixed_attack_linear(
    theta: &Array1<f64>,
    ds: &Dataset,
    spec: &AttackSpec,
) -> Array1<f64> {
    let xt = attacked_design(theta, ds, spec);
    let r = xt.dot(theta) - &ds.y;
    xt.t().dot(&r).mapv(|v| v * 2.0 / ds.n() as f64)
}

/// Attacked design matrix: row i is x_i + A_{eps,xi}(theta, x_i, y_i).
pub fn attacked_design(theta: &Array1<f64>, ds: &Dataset, spec: &AttackSpec) -> Array2<f64> {
    let mut xt = ds.x.clone();
    if spec.epsilon == 0.0 {
        return xt;
    }
    let y = &ds.y;
    Zip::indexed(xt.axis_iter_mut(Axis(0))).par_for_each(|i, mut row| {
        let p = crate::attack::linear_attack(theta.view(), ds.x.row(i), y[i], spec);
        row += &p.delta;
    });
    xt
}

fn empirical_loss_from_design(theta: &Array1<f64>, xt: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let r = xt.dot(theta) - y;
    r.dot(&r) / y.len() as f64
}

/// Coordinate-wise soft threshold, the proximal map of threshold * ||.||_1.
pub fn prox_l1(theta: &Array1<f64>, threshold: f64) -> Array1<f64> {
    theta.mapv(|v| sgn(v) * (v.abs() - threshold).max(0.0))
}

fn resolve_eta(eta: Eta, ds: &Dataset) -> f64 {
    match eta {
        Eta::Fixed(e) => e,
        Eta::Auto => 0.9 / crate::linalg::lambda_max_xtx(ds.x.view()),
    }
}

/// 1/sqrt(log n), the interpolation stopping threshold.
pub fn interpolation_threshold(n: usize) -> f64 {
    1.0 / (n as f64).ln().sqrt()
}

/// Adversarial training of a linear model. With lambda_l1 > 0 each gradient
/// step is followed by a soft-threshold, making the loop proximal gradient
/// on the penalized adversarial loss.
pub fn adv_train_linear(
    ds: &Dataset,
    reporting: Option<Reporting<'_>>,
    spec: &AttackSpec,
    config: &TrainConfig,
) -> Result<Trajectory> {
    spec.validate()?;
    let d = ds.dim();
    let n = ds.n() as f64;
    let mut theta = match &config.init {
        Init::Zero => Array1::zeros(d),
        Init::Explicit(t) => {
            if t.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "init has {} entries, data dimension is {}",
                    t.len(),
                    d
                )));
            }
            t.clone()
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "init {other:?} is not valid for linear training"
            )))
        }
    };
    let eta = resolve_eta(config.eta, ds);
    if eta <= 0.0 || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {eta}"
        )));
    }
    let mean_y_sq = ds.y.dot(&ds.y) / n;
    let divergence_guard = 1e12 * mean_y_sq.max(1.0);
    let v_for_stop = reporting
        .map(|r| r.model.v_squared().sqrt())
        .unwrap_or_else(|| crate::datagen::estimate_v_squared(ds).sqrt());
    let stop_thresh = interpolation_threshold(ds.n());

    let exact_spec = AttackSpec { xi: 0.0, ..*spec };
    let mut records = Vec::with_capacity(config.max_iters + 1);
    let mut snapshots = Vec::new();
    let mut stopping_t = None;
    let mut losses_so_far = Vec::new();

    for t in 0..=config.max_iters {
        let xt = attacked_design(&theta, ds, spec);
        let surrogate_loss = empirical_loss_from_design(&theta, &xt, &ds.y);
        if !surrogate_loss.is_finite() || surrogate_loss > divergence_guard {
            return Err(Error::Diverged {
                at_iter: t,
                loss: surrogate_loss,
                prefix: losses_so_far,
            });
        }
        losses_so_far.push(surrogate_loss);
        let exact_loss = {
            let xe = attacked_design(&theta, ds, &exact_spec);
            empirical_loss_from_design(&theta, &xe, &ds.y)
        };
        let grad = {
            let r = xt.dot(&theta) - &ds.y;
            xt.t().dot(&r).mapv(|v| v * 2.0 / n)
        };
        let grad_norm = norm2(grad.view());
        let pop_risk = reporting
            .map(|r| population_risk(theta.view(), r.model, spec.epsilon, spec.norm).value);
        records.push(IterRecord {
            t,
            surrogate_loss,
            exact_loss,
            pop_risk,
            grad_norm,
            theta_norm: norm2(theta.view()),
            theta_l1: norm1(theta.view()),
        });
        if config.snapshot_every > 0 && t % config.snapshot_every == 0 {
            snapshots.push((t, theta.clone()));
        }
        if stopping_t.is_none() {
            let clean_resid = ds.x.dot(&theta) - &ds.y;
            if norm2(clean_resid.view()) / (v_for_stop * n.sqrt()) < stop_thresh {
                stopping_t = Some(t);
            }
        }
        let done = t == config.max_iters
            || match config.stop {
                StopRule::FixedT => false,
                StopRule::HighdimThreshold => stopping_t == Some(t),
                StopRule::GradNorm { tol } => grad_norm < tol,
            };
        if done {
            break;
        }
        theta = &theta - &grad.mapv(|v| v * eta);
        if config.lambda_l1 > 0.0 {
            theta = prox_l1(&theta, eta * config.lambda_l1);
        }
    }

    Ok(Trajectory {
        records,
        snapshots,
        final_theta: theta,
        stopping_t,
    })
}

/// Proximal-gradient adversarial training with an L1 penalty (lambda > 0).
/// Returns the trajectory and the final estimate.
pub fn adv_train_lasso(
    ds: &Dataset,
    reporting: Option<Reporting<'_>>,
    spec: &AttackSpec,
    config: &TrainConfig,
) -> Result<(Trajectory, Array1<f64>)> {
    if config.lambda_l1 <= 0.0 {
        return Err(Error::InvalidArgument(
            "adv_train_lasso requires lambda_l1 > 0".into(),
        ));
    }
    let traj = adv_train_linear(ds, reporting, spec, config)?;
    let theta_hat = traj.final_theta.clone();
    Ok((traj, theta_hat))
}

#[derive(Debug, Clone)]
pub struct NetIterRecord {
    pub t: usize,
    pub surrogate_loss: f64,
    pub exact_loss: f64,
    pub pop_risk: Option<f64>,
    pub grad_norm: f64,
    pub weight_norm: f64,
    /// (phi'(0)/sqrt(h)) W a at this iteration.
    pub effective_coef: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct NetTrajectory {
    pub records: Vec<NetIterRecord>,
    /// Full weight snapshots every snapshot_every-th iteration (scalars and
    /// the effective coefficient are recorded every iteration regardless).
    pub snapshots: Vec<(usize, Array2<f64>)>,
    pub final_net: TwoLayerNet,
    pub stopping_t: Option<usize>,
}

/// Adversarial training of a two-layer network. Attacks use the attack
/// spec's approximation (FGM by default, PGD-k on request); the outer weights are
/// fixed throughout.
pub fn adv_train_two_layer(
    ds: &Dataset,
    net: &TwoLayerNet,
    reporting: Option<Reporting<'_>>,
    spec: &AttackSpec,
    config: &TrainConfig,
) -> Result<NetTrajectory> {
    spec.validate()?;
    let d = ds.dim();
    if net.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "network dimension {} vs data dimension {}",
            net.dim(),
            d
        )));
    }
    let h = net.hidden();
    let n = ds.n() as f64;
    let mut net = net.clone();
    match &config.init {
        Init::Zero => net.weights.fill(0.0),
        Init::Vanishing { delta, seed } => {
            let fresh =
                TwoLayerNet::vanishing_init(d, net.outer.clone(), net.activation, *delta, *seed)?;
            net.weights = fresh.weights;
        }
        Init::ExplicitMatrix(w) => {
            if w.nrows() != d || w.ncols() != h {
                return Err(Error::DimensionMismatch(format!(
                    "init weights are {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    d,
                    h
                )));
            }
            net.weights = w.clone();
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "init {other:?} is not valid for network training"
            )))
        }
    }
    let eta = match config.eta {
        Eta::Fixed(e) => e,
        Eta::Auto => {
            return Err(Error::InvalidArgument(
                "auto step size applies to linear training only".into(),
            ))
        }
    };
    let mean_y_sq = ds.y.dot(&ds.y) / n;
    let divergence_guard = 1e12 * mean_y_sq.max(1.0);
    let v_for_stop = reporting
        .map(|r| r.model.v_squared().sqrt())
        .unwrap_or_else(|| crate::datagen::estimate_v_squared(ds).sqrt());
    let stop_thresh = interpolation_threshold(ds.n());
    let exact_spec = AttackSpec { xi: 0.0, ..*spec };

    let mut records = Vec::with_capacity(config.max_iters + 1);
    let mut snapshots = Vec::new();
    let mut stopping_t = None;
    let mut losses_so_far = Vec::new();

    for t in 0..=config.max_iters {
        let xt = attacked_design_net(&net, ds, spec)?;
        let preds = forward_rows(&net, &xt);
        let resid = &preds - &ds.y;
        let surrogate_loss = resid.dot(&resid) / n;
        if !surrogate_loss.is_finite() || surrogate_loss > divergence_guard {
            return Err(Error::Diverged {
                at_iter: t,
                loss: surrogate_loss,
                prefix: losses_so_far,
            });
        }
        losses_so_far.push(surrogate_loss);
        let exact_loss = {
            let xe = attacked_design_net(&net, ds, &exact_spec)?;
            let pe = forward_rows(&net, &xe);
            let re = &pe - &ds.y;
            re.dot(&re) / n
        };
        let grad = grad_fixed_design_net(&net, &xt, &resid);
        let grad_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pop_risk = match reporting {
            Some(r) => {
                let due = t == config.max_iters || (r.mc_every > 0 && t % r.mc_every == 0);
                if due {
                    Some(monte_carlo_risk(&net, r.model, spec, r.mc_samples, r.mc_seed)?.value)
                } else {
                    None
                }
            }
            None => None,
        };
        records.push(NetIterRecord {
            t,
            surrogate_loss,
            exact_loss,
            pop_risk,
            grad_norm,
            weight_norm: net.weights.iter().map(|v| v * v).sum::<f64>().sqrt(),
            effective_coef: net.effective_coefficient(),
        });
        if config.snapshot_every > 0 && t % config.snapshot_every == 0 {
            snapshots.push((t, net.weights.clone()));
        }
        if stopping_t.is_none() {
            let clean_preds = forward_rows(&net, &ds.x);
            let clean_resid = &clean_preds - &ds.y;
            if norm2(clean_resid.view()) / (v_for_stop * n.sqrt()) < stop_thresh {
                stopping_t = Some(t);
            }
        }
        let done = t == config.max_iters
            || match config.stop {
                StopRule::FixedT => false,
                StopRule::HighdimThreshold => stopping_t == Some(t),
                StopRule::GradNorm { tol } => grad_norm < tol,
            };
        if done {
            break;
        }
        net.weights = &net.weights - &grad.mapv(|v| v * eta);
    }

    Ok(NetTrajectory {
        records,
        snapshots,
        final_net: net,
        stopping_t,
    })
}

fn attacked_design_net(net: &TwoLayerNet, ds: &Dataset, spec: &AttackSpec) -> Result<Array2<f64>> {
    let mut xt = ds.x.clone();
    if spec.epsilon == 0.0 {
        return Ok(xt);
    }
    use rayon::prelude::*;
    let deltas = (0..ds.n())
        .into_par_iter()
        .map(|i| net.attack(ds.x.row(i), ds.y[i], spec))
        .collect::<Result<Vec<_>>>()?;
    for (i, p) in deltas.iter().enumerate() {
        let mut row = xt.row_mut(i);
        row += &p.delta;
    }
    Ok(xt)
}

/// Fixed-attack gradient for a two-layer network: with attacked inputs held
/// fixed, the weight gradient is G = Xt' M with M(i,j) = (2/n) r_i (a_j/sqrt h)
/// phi'(xt_i' theta_j), where r are the residuals at the attacked inputs.
pub fn grad_fixed_attack_net(
    net: &TwoLayerNet,
    ds: &Dataset,
    spec: &AttackSpec,
) -> Result<Array2<f64>> {
    let xt = attacked_design_net(net, ds, spec)?;
    let resid = &forward_rows(net, &xt) - &ds.y;
    Ok(grad_fixed_design_net(net, &xt, &resid))
}

fn grad_fixed_design_net(net: &TwoLayerNet, xt: &Array2<f64>, resid: &Array1<f64>) -> Array2<f64> {
    let n = xt.nrows() as f64;
    let h = net.hidden();
    let inv_sqrt_h = 1.0 / (h as f64).sqrt();
    let z = xt.dot(&net.weights);
    let mut m = Array2::<f64>::zeros((xt.nrows(), h));
    for i in 0..xt.nrows() {
        let c = 2.0 * resid[i] / n;
        for j in 0..h {
            m[(i, j)] = c * net.outer[j] * inv_sqrt_h * net.activation.derivative(z[(i, j)]);
        }
    }
    xt.t().dot(&m)
}

fn forward_rows(net: &TwoLayerNet, x: &Array2<f64>) -> Array1<f64> {
    let z = x.dot(&net.weights);
    let h = net.hidden();
    let inv = 1.0 / (h as f64).sqrt();
    let mut out = Array1::zeros(x.nrows());
    for i in 0..x.nrows() {
        let mut s = 0.0;
        for j in 0..h {
            s += net.outer[j] * net.activation.value(z[(i, j)]);
        }
        out[i] = s * inv;
    }
    out
}

/// Theorem-driven schedule regimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleRegime {
    /// Linear models: xi = v^2 d / (sqrt(n) log n).
    LowDimLinear,
    /// Smooth networks: xi/v^2 = -loglog n / log(max(sqrt(d^2 log n / n),
    /// (d log n) ||a||_inf / sqrt(h))), eta = xi h / (v^2 L ||a||^2).
    LowDimSmoothNet {
        h: usize,
        a_inf: f64,
        a_norm_sq: f64,
        /// Vanishing-initialization exponent, used only for the reported
        /// growth diagnostic.
        delta: f64,
    },
    /// ReLU networks: the same with the log argument sqrt(d^2 log n / n).
    LowDimReluNet { h: usize, a_norm_sq: f64 },
}

/// A (xi, eta, T) schedule with attached warnings and, for network regimes,
/// the reported (not enforced) growth quantity.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub xi: f64,
    pub eta: f64,
    pub t: usize,
    pub l: f64,
    pub warnings: Vec<String>,
    pub growth_diagnostic: Option<f64>,
}

/// Builds the theorem schedule from an estimate of v^2 (sample variance of
/// y), the sample size, and the dimension. All logarithms are natural;
/// T = ceil(v^2 loglog n / xi) and eta * L * v^2 = xi in the linear regime.
pub fn schedule_from_theorem(
    v_sq: f64,
    n: usize,
    d: usize,
    regime: ScheduleRegime,
    l: f64,
) -> Result<Schedule> {
    if n < 3 {
        return Err(Error::ScheduleRejected(format!(
            "n = {n}: log log n must be defined and positive (need n >= 3)"
        )));
    }
    if v_sq <= 0.0 || !v_sq.is_finite() {
        return Err(Error::ScheduleRejected(format!("invalid v^2 estimate {v_sq}")));
    }
    if l <= 0.0 {
        return Err(Error::ScheduleRejected(format!("L must be positive, got {l}")));
    }
    let nf = n as f64;
    let df = d as f64;
    let log_n = nf.ln();
    let loglog_n = log_n.ln();
    if loglog_n <= 0.0 {
        return Err(Error::ScheduleRejected(format!(
            "n = {n}: log log n = {loglog_n:.4} is not positive"
        )));
    }
    let mut warnings = Vec::new();
    let dim_ratio = df * df * log_n / nf;
    if dim_ratio > 1.0 {
        warnings.push(format!(
            "low-dimensional schedule outside its regime: d^2 log n / n = {dim_ratio:.3} > 1"
        ));
    }
    let (xi, eta, growth) = match regime {
        ScheduleRegime::LowDimLinear => {
            let xi = v_sq * df / (nf.sqrt() * log_n);
            let eta = xi / (v_sq * l);
            (xi, eta, None)
        }
        ScheduleRegime::LowDimSmoothNet {
            h,
            a_inf,
            a_norm_sq,
            delta,
        } => {
            let hf = h as f64;
            let arg = (df * df * log_n / nf)
                .sqrt()
                .max(df * log_n * a_inf / hf.sqrt());
            if arg >= 1.0 {
                return Err(Error::ScheduleRejected(format!(
                    "network schedule needs its log argument below 1, got {arg:.4}"
                )));
            }
            let ratio = -loglog_n / arg.ln();
            let xi = ratio * v_sq;
            let eta = xi * hf / (v_sq * l * a_norm_sq);
            let t_est = (v_sq * loglog_n / xi).ceil();
            let v = v_sq.sqrt();
            let a_norm_cubed = a_norm_sq.powf(1.5);
            let base = 1.0 + v_sq * eta * a_norm_cubed / (hf.powf(1.5) * xi) + l * eta * v;
            let growth = (df * log_n).sqrt() * base.powf(t_est) / hf.powf(delta / 2.0);
            (xi, eta, Some(growth))
        }
        ScheduleRegime::LowDimReluNet { h, a_norm_sq } => {
            let hf = h as f64;
            let arg = (df * df * log_n / nf).sqrt();
            if arg >= 1.0 {
                return Err(Error::ScheduleRejected(format!(
                    "relu schedule needs sqrt(d^2 log n / n) < 1, got {arg:.4}"
                )));
            }
            let ratio = -loglog_n / arg.ln();
            let xi = ratio * v_sq;
            let eta = xi * hf / (v_sq * l * a_norm_sq);
            (xi, eta, None)
        }
    };
    if xi >= v_sq {
        return Err(Error::ScheduleRejected(format!(
            "schedule gives xi = {xi:.4} >= v^2 = {v_sq:.4}; smoothing must stay below the signal scale"
        )));
    }
    let t = (v_sq * loglog_n / xi).ceil() as usize;
    if t == 0 {
        return Err(Error::ScheduleRejected("schedule yields T = 0".into()));
    }
    Ok(Schedule {
        xi,
        eta,
        t,
        l,
        warnings,
        growth_diagnostic: growth,
    })
}

/// Theorem-1 linear schedule driven by the data itself (v^2 from the sample
/// variance of y).
pub fn linear_schedule_from_data(ds: &Dataset, l: f64) -> Result<Schedule> {
    let v_sq = crate::datagen::estimate_v_squared(ds);
    schedule_from_theorem(v_sq, ds.n(), ds.dim(), ScheduleRegime::LowDimLinear, l)
}

/// Standard (non-adversarial) risk of an estimator,
/// ||theta - theta0||_Sigma^2 + sigma^2.
pub fn standard_risk(theta: &Array1<f64>, model: &GenModel) -> f64 {
    population_risk(theta.view(), model, 0.0, Norm::L2).value
}
