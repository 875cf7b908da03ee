//! Population adversarial risks, empirical losses, the Monte-Carlo oracle,
//! and the robust optimum (theta*, R*).
//!
//! For Gaussian data the population risk of a linear model under the exact
//! attack has closed forms. With s^2 = ||theta - theta0||_Sigma^2 + sigma^2
//! and c0 = sqrt(2/pi):
//!
//!   L2:   s^2 + eps^2 ||theta||_2^2   + 2 eps c0 ||theta||_2 s
//!   Linf: s^2 + eps^2 ||theta||_1^2   + 2 eps c0 ||theta||_1 s
//!
//! The smoothed population risk has no closed form; it is estimated by Monte
//! Carlo, and the closed forms are used for (non-surrogate) reporting.
//!
//! The minimizer has the form theta* = (Sigma + kappa I)^-1 Sigma theta0 for
//! some kappa >= 0, collapsing to a scalar ray search when Sigma = I, and
//! theta* = 0 once eps >= ||Sigma theta0|| / (c0 v).

use crate::attack::{fgm_attack, linear_attack, pgd_attack, AttackSpec, Method, Perturbation};
use crate::datagen::{Dataset, GenModel};
use crate::error::{Error, Result};
use crate::linalg::{norm1, norm2};
use crate::network::{DiffModel, LinearModel, TwoLayerNet};
use crate::rng::{derive_seed, GaussianStream};
use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;

/// c0 = sqrt(2/pi), the mean of |N(0,1)|.
#[inline]
pub fn c0() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// A population-risk evaluation split into its three closed-form components.
#[derive(Debug, Clone, Copy)]
pub struct RiskReport {
    pub value: f64,
    /// value / v^2 of the generating model.
    pub normalized: f64,
    /// ||theta - theta0||_Sigma^2 + sigma^2.
    pub standard_term: f64,
    /// eps^2 ||theta||^2 (squared L2 or L1 norm by attack norm).
    pub attack_quad_term: f64,
    /// 2 eps c0 ||theta|| sqrt(standard_term).
    pub attack_cross_term: f64,
}

fn risk_from_parts(model: &GenModel, standard: f64, theta_norm: f64, epsilon: f64) -> RiskReport {
    let quad = epsilon * epsilon * theta_norm * theta_norm;
    let cross = 2.0 * epsilon * c0() * theta_norm * standard.sqrt();
    let value = standard + quad + cross;
    RiskReport {
        value,
        normalized: value / model.v_squared(),
        standard_term: standard,
        attack_quad_term: quad,
        attack_cross_term: cross,
    }
}

/// Closed-form population adversarial risk under the L2 attack.
pub fn population_risk_l2(theta: ArrayView1<f64>, model: &GenModel, epsilon: f64) -> RiskReport {
    let diff = &theta.to_owned() - &model.theta0();
    let standard = model.sigma_quad_form(diff.view()) + model.noise_var();
    risk_from_parts(model, standard, norm2(theta), epsilon)
}

/// Closed-form population adversarial risk under the Linf attack.
pub fn population_risk_linf(theta: ArrayView1<f64>, model: &GenModel, epsilon: f64) -> RiskReport {
    let diff = &theta.to_owned() - &model.theta0();
    let standard = model.sigma_quad_form(diff.view()) + model.noise_var();
    risk_from_parts(model, standard, norm1(theta), epsilon)
}

pub fn population_risk(
    theta: ArrayView1<f64>,
    model: &GenModel,
    epsilon: f64,
    norm: crate::attack::Norm,
) -> RiskReport {
    match norm {
        crate::attack::Norm::L2 => population_risk_l2(theta, model, epsilon),
        crate::attack::Norm::Linf => population_risk_linf(theta, model, epsilon),
    }
}

/// Models that know how to attack themselves under a spec. Linear models use
/// the closed forms (for which exact, FGM and PGD coincide); networks use
/// the approximation named in the attack spec.
pub trait AttackModel: DiffModel {
    fn attack(&self, x: ArrayView1<f64>, y: f64, spec: &AttackSpec) -> Result<Perturbation>;
}

impl AttackModel for LinearModel<'_> {
    fn attack(&self, x: ArrayView1<f64>, y: f64, spec: &AttackSpec) -> Result<Perturbation> {
        Ok(linear_attack(self.theta, x, y, spec))
    }
}

impl AttackModel for TwoLayerNet {
    fn attack(&self, x: ArrayView1<f64>, y: f64, spec: &AttackSpec) -> Result<Perturbation> {
        match spec.method {
            Method::Exact => Err(Error::InvalidArgument(
                "the exact attack has no closed form for two-layer networks; use fgm or pgd"
                    .into(),
            )),
            Method::Fgm => Ok(fgm_attack(self, x, y, spec)),
            Method::Pgd(k) => Ok(pgd_attack(self, x, y, spec, k)),
        }
    }
}

/// Mean squared loss at surrogate-attacked inputs over the dataset.
pub fn empirical_surrogate_loss<M: AttackModel + ?Sized>(
    model: &M,
    ds: &Dataset,
    spec: &AttackSpec,
) -> Result<f64> {
    if ds.n() == 0 {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let losses = (0..ds.n())
        .into_par_iter()
        .map(|i| {
            let x = ds.x.row(i);
            let y = ds.y[i];
            let p = model.attack(x, y, spec)?;
            let attacked = &x.to_owned() + &p.delta;
            let r = model.predict(attacked.view()) - y;
            Ok(r * r)
        })
        .collect::<Result<Vec<f64>>>()?;
    // Sequential reduction in sample order keeps runs bit-identical.
    Ok(losses.iter().sum::<f64>() / ds.n() as f64)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

const MC_BATCH: usize = 16_384;

/// Unbiased Monte-Carlo estimate of the population adversarial loss of
/// `model` under `spec`, over fresh draws from the generating model.
/// Batches are seeded deterministically from the root seed and combined in
/// batch order, so the estimate is reproducible and thread-count invariant.
pub fn monte_carlo_risk<M: AttackModel + ?Sized>(
    model: &M,
    gen: &GenModel,
    spec: &AttackSpec,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be >= 1".into()));
    }
    let n_batches = n_mc.div_ceil(MC_BATCH);
    let partials = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let count = MC_BATCH.min(n_mc - b * MC_BATCH);
            let mut g = GaussianStream::new(derive_seed(seed, b as u64));
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let (x, y) = gen.sample_point(&mut g);
                let p = model.attack(x.view(), y, spec)?;
                let attacked = &x + &p.delta;
                let r = model.predict(attacked.view()) - y;
                let l = r * r;
                sum += l;
                sum_sq += l * l;
            }
            Ok((sum, sum_sq, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (s, q, _) in &partials {
        sum += s;
        sum_sq += q;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_samples: n_mc,
    })
}

/// Minimizer of the population adversarial risk.
#[derive(Debug, Clone)]
pub struct RobustOptimum {
    pub theta_star: Array1<f64>,
    pub r_star: f64,
    /// The ridge multiplier when theta* = (Sigma + kappa I)^-1 Sigma theta0
    /// applies; None when theta* = 0.
    pub kappa: Option<f64>,
}

/// Attack strength above which the null model is optimal:
/// eps >= ||Sigma theta0||_2 / (c0 v). For Sigma = I this is
/// sqrt(pi) ||theta0|| / (sqrt(2) v).
pub fn null_optimum_threshold(model: &GenModel) -> f64 {
    let st = model.sigma_matvec(model.theta0());
    norm2(st.view()) / (c0() * model.v_squared().sqrt())
}

/// Minimizes the L2 population adversarial risk.
///
/// Sigma = I reduces to a convex scalar search over theta = c theta0
/// (Proposition-2 collinearity). General Sigma runs a 1-D search over kappa
/// in (Sigma + kappa I)^-1 Sigma theta0, cross-checked by full-dimensional
/// descent; the better of the two is returned.
pub fn optimal_theta(
    model: &GenModel,
    epsilon: f64,
    norm: crate::attack::Norm,
) -> Result<RobustOptimum> {
    if let crate::attack::Norm::Linf = norm {
        return Err(Error::InvalidArgument(
            "the robust optimum is implemented for the L2 attack; the Linf optimum is numeric only (see optimal_theta_descent)"
                .into(),
        ));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let d = model.dim();
    if epsilon == 0.0 {
        return Ok(RobustOptimum {
            theta_star: model.theta0().to_owned(),
            r_star: model.noise_var(),
            kappa: Some(0.0),
        });
    }
    if epsilon >= null_optimum_threshold(model) {
        return Ok(RobustOptimum {
            theta_star: Array1::zeros(d),
            r_star: model.v_squared(),
            kappa: None,
        });
    }
    let opt = if model.is_identity_cov() {
        let theta0 = model.theta0().to_owned();
        let risk_at = |c: f64| population_risk_l2(theta0.mapv(|t| t * c).view(), model, epsilon).value;
        let c = golden_min(&risk_at, 0.0, 1.0)?;
        RobustOptimum {
            theta_star: theta0.mapv(|t| t * c),
            r_star: risk_at(c),
            kappa: Some((1.0 - c) / c.max(1e-300)),
        }
    } else {
        // kappa parameterized through t in [0,1), kappa = t/(1-t).
        let risk_at_t = |t: f64| -> Result<f64> {
            let kappa = t / (1.0 - t);
            let th = model.shifted_solve_curve(kappa)?;
            Ok(population_risk_l2(th.view(), model, epsilon).value)
        };
        let grid = 800;
        let mut best_i = 0;
        let mut best_v = f64::INFINITY;
        let ts: Vec<f64> = (0..grid).map(|i| i as f64 / grid as f64).collect();
        for (i, &t) in ts.iter().enumerate() {
            let v = risk_at_t(t)?;
            if v < best_v {
                best_v = v;
                best_i = i;
            }
        }
        let lo = if best_i == 0 { 0.0 } else { ts[best_i - 1] };
        let hi = if best_i + 1 == grid { 1.0 - 1e-9 } else { ts[best_i + 1] };
        let f = |t: f64| risk_at_t(t).unwrap_or(f64::INFINITY);
        let t_star = golden_min(&f, lo, hi)?;
        let kappa = t_star / (1.0 - t_star);
        let theta_star = model.shifted_solve_curve(kappa)?;
        let r_star = population_risk_l2(theta_star.view(), model, epsilon).value;
        RobustOptimum {
            theta_star,
            r_star,
            kappa: Some(kappa),
        }
    };
    // Cross-check with full-dimensional descent; keep the better minimizer.
    let gd = optimal_theta_descent(model, epsilon, crate::attack::Norm::L2);
    let gd_risk = population_risk_l2(gd.view(), model, epsilon).value;
    if gd_risk < opt.r_star - 1e-12 * opt.r_star.abs().max(1.0) {
        Ok(RobustOptimum {
            theta_star: gd,
            r_star: gd_risk,
            kappa: opt.kappa,
        })
    } else {
        Ok(opt)
    }
}

/// Full-dimensional projected-gradient cross-check for the robust optimum,
/// usable under either norm. Subgradient descent with backtracking from two
/// starts (theta0 and theta0/2), compared against the null model.
pub fn optimal_theta_descent(
    model: &GenModel,
    epsilon: f64,
    norm: crate::attack::Norm,
) -> Array1<f64> {
    let d = model.dim();
    let mut best = Array1::zeros(d);
    let mut best_v = population_risk(best.view(), model, epsilon, norm).value;
    for start_scale in [1.0, 0.5] {
        let mut th = model.theta0().mapv(|t| t * start_scale);
        let mut step = 0.5 / (1.0 + epsilon * epsilon);
        let mut value = population_risk(th.view(), model, epsilon, norm).value;
        for _ in 0..2000 {
            let g = risk_subgradient(th.view(), model, epsilon, norm);
            let gn = norm2(g.view());
            if gn < 1e-13 {
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &th - &g.mapv(|v| v * step);
                let cv = population_risk(cand.view(), model, epsilon, norm).value;
                if cv < value {
                    th = cand;
                    value = cv;
                    step *= 1.25;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if value < best_v {
            best_v = value;
            best = th;
        }
    }
    best
}

fn risk_subgradient(
    theta: ArrayView1<f64>,
    model: &GenModel,
    epsilon: f64,
    norm: crate::attack::Norm,
) -> Array1<f64> {
    let diff = &theta.to_owned() - &model.theta0();
    let sig_diff = model.sigma_matvec(diff.view());
    let standard = diff.dot(&sig_diff) + model.noise_var();
    let s = standard.sqrt().max(1e-300);
    let (tn, tn_grad): (f64, Array1<f64>) = match norm {
        crate::attack::Norm::L2 => {
            let n = norm2(theta);
            if n == 0.0 {
                (0.0, Array1::zeros(theta.len()))
            } else {
                (n, theta.mapv(|t| t / n))
            }
        }
        crate::attack::Norm::Linf => (norm1(theta), theta.mapv(crate::linalg::sgn)),
    };
    // d/dtheta [ standard + eps^2 tn^2 + 2 eps c0 tn s ]
    let mut g = sig_diff.mapv(|v| 2.0 * v);
    g += &tn_grad.mapv(|v| v * (2.0 * epsilon * epsilon * tn + 2.0 * epsilon * c0() * s));
    g += &sig_diff.mapv(|v| v * (2.0 * epsilon * c0() * tn / s));
    g
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (orig_a, orig_b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..300 {
        if (b - a).abs() < 1e-13 * (1.0 + orig_b.abs()) {
            return Ok(0.5 * (a + b));
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if !fc.is_finite() && !fd.is_finite() {
            return Err(Error::NonConvergence { lo: orig_a, hi: orig_b });
        }
    }
    Ok(0.5 * (a + b))
}

/// Support mask of theta*: true where |theta*_i| >= 1e-8.
pub fn sparsity_of_optimum(model: &GenModel, epsilon: f64) -> Result<Vec<bool>> {
    let opt = optimal_theta(model, epsilon, crate::attack::Norm::L2)?;
    Ok(opt.theta_star.iter().map(|v| v.abs() >= 1e-8).collect())
}
