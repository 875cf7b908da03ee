//! Exact and smoothed adversarial perturbations under L2 and Linf budgets.
//!
//! For the linear model with squared loss the exact attacks have closed forms:
//!
//!   L2:   delta = eps * sign(theta' x - y) * theta / ||theta||
//!   Linf: delta_i = eps * sign(theta' x - y) * sign(theta_i)
//!
//! The smoothed (surrogate) attack scales the exact one by a factor of the
//! input-gradient magnitude g = ||dl/dx||: g / sqrt(g^2 + xi^2) for L2, and
//! per coordinate g_i / (g_i + xi) for Linf. With xi = 0 the surrogate
//! coincides with the exact attack wherever the latter is defined; with
//! xi > 0 it is continuous through theta = 0 and vanishes at zero gradient.
//!
//! Sign ties resolve as sign(0) = 0 everywhere, so zero-residual samples
//! receive no attack. Networks are attacked by one normalized gradient step
//! (FGM) or by k projected ascent steps of size 2 eps / k (PGD); the
//! surrogate shrink is applied after the geometric step, using the
//! clean-input gradient.

use crate::error::{Error, Result};
use crate::linalg::{norm2, sgn};
use crate::network::DiffModel;
use crate::rng::GaussianStream;
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Fgm,
    Pgd(u32),
}

/// Attack description: norm ball, strength, smoothing, and the approximation
/// used for networks (linear models always have the closed form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub norm: Norm,
    pub epsilon: f64,
    #[serde(default)]
    pub xi: f64,
    #[serde(default = "default_method")]
    pub method: Method,
}

fn default_method() -> Method {
    Method::Fgm
}

impl AttackSpec {
    pub fn exact(norm: Norm, epsilon: f64) -> Self {
        Self {
            norm,
            epsilon,
            xi: 0.0,
            method: Method::Exact,
        }
    }

    pub fn surrogate(norm: Norm, epsilon: f64, xi: f64) -> Self {
        Self {
            norm,
            epsilon,
            xi,
            method: Method::Fgm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.xi < 0.0 || !self.xi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "xi must be finite and >= 0, got {}",
                self.xi
            )));
        }
        if let Method::Pgd(k) = self.method {
            if k == 0 {
                return Err(Error::InvalidArgument("pgd needs k >= 1".into()));
            }
        }
        Ok(())
    }
}

/// An input perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Array1<f64>,
}

impl Perturbation {
    pub fn zero(d: usize) -> Self {
        Self {
            delta: Array1::zeros(d),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        norm2(self.delta.view())
    }

    pub fn linf_norm(&self) -> f64 {
        self.delta.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// L2 shrink factor g / sqrt(g^2 + xi^2); zero gradient yields zero.
#[inline]
pub fn l2_shrink(g: f64, xi: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else {
        g / (g * g + xi * xi).sqrt()
    }
}

/// Per-coordinate Linf shrink factor g / (g + xi); zero gradient yields zero.
#[inline]
pub fn linf_shrink(g: f64, xi: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else {
        g / (g + xi)
    }
}

/// Exact L2 attack on a linear model. Maximizes the squared loss over the
/// eps-ball. Undefined at theta = 0 with a nonzero residual (every direction
/// is a maximizer; this is the Proposition-1 kink).
pub fn exact_attack_l2_linear(
    theta: ArrayView1<f64>,
    x: ArrayView1<f64>,
    y: f64,
    epsilon: f64,
) -> Result<Perturbation> {
    let d = theta.len();
    if epsilon == 0.0 {
        return Ok(Perturbation::zero(d));
    }
    let r = theta.dot(&x) - y;
    let nt = norm2(theta);
    if nt == 0.0 {
        return if r == 0.0 {
            Ok(Perturbation::zero(d))
        } else {
            Err(Error::AttackUndefined)
        };
    }
    let scale = epsilon * sgn(r) / nt;
    Ok(Perturbation {
        delta: theta.mapv(|t| t * scale),
    })
}

/// Smoothed L2 attack on a linear model; defined everywhere.
pub fn surrogate_attack_l2_linear(
    theta: ArrayView1<f64>,
    x: ArrayView1<f64>,
    y: f64,
    epsilon: f64,
    xi: f64,
) -> Perturbation {
    let d = theta.len();
    if epsilon == 0.0 {
        return Perturbation::zero(d);
    }
    let r = theta.dot(&x) - y;
    let nt = norm2(theta);
    let g = 2.0 * r.abs() * nt;
    let shrink = l2_shrink(g, xi);
    if shrink == 0.0 || nt == 0.0 {
        return Perturbation::zero(d);
    }
    let scale = shrink * epsilon * sgn(r) / nt;
    Perturbation {
        delta: theta.mapv(|t| t * scale),
    }
}

/// Exact Linf attack on a linear model: eps * sign(residual) * sign(theta_i)
/// per coordinate. Coordinates with theta_i = 0 contribute nothing and stay
/// zero; a zero residual means no attack.
pub fn exact_attack_linf_linear(
    theta: ArrayView1<f64>,
    x: ArrayView1<f64>,
    y: f64,
    epsilon: f64,
) -> Perturbation {
    let d = theta.len();
    if epsilon == 0.0 {
        return Perturbation::zero(d);
    }
    let s = sgn(theta.dot(&x) - y);
    Perturbation {
        delta: theta.mapv(|t| epsilon * s * sgn(t)),
    }
}

/// Smoothed Linf attack: the exact attack with each coordinate scaled by
/// g_i / (g_i + xi), g_i = |[dl/dx]_i| = 2 |residual| |theta_i|.
pub fn surrogate_attack_linf_linear(
    theta: ArrayView1<f64>,
    x: ArrayView1<f64>,
    y: f64,
    epsilon: f64,
    xi: f64,
) -> Perturbation {
    let d = theta.len();
    if epsilon == 0.0 {
        return Perturbation::zero(d);
    }
    let r = theta.dot(&x) - y;
    let s = sgn(r);
    let two_abs_r = 2.0 * r.abs();
    Perturbation {
        delta: theta.mapv(|t| epsilon * s * sgn(t) * linf_shrink(two_abs_r * t.abs(), xi)),
    }
}

/// Closed-form surrogate attack for a linear model under either norm,
/// dispatching on the attack spec. The approximation method is irrelevant here:
/// FGM and PGD coincide with the closed form on linear models.
pub fn linear_attack(
    theta: ArrayView1<f64>,
    x: ArrayView1<f64>,
    y: f64,
    spec: &AttackSpec,
) -> Perturbation {
    match spec.norm {
        Norm::L2 => surrogate_attack_l2_linear(theta, x, y, spec.epsilon, spec.xi),
        Norm::Linf => surrogate_attack_linf_linear(theta, x, y, spec.epsilon, spec.xi),
    }
}

/// One-step fast gradient attack with the surrogate shrink applied after the
/// geometric step. The direction comes from dl/dx at the clean input; a zero
/// input gradient yields a zero perturbation.
pub fn fgm_attack<M: DiffModel + ?Sized>(
    model: &M,
    x: ArrayView1<f64>,
    y: f64,
    spec: &AttackSpec,
) -> Perturbation {
    let d = x.len();
    if spec.epsilon == 0.0 {
        return Perturbation::zero(d);
    }
    let residual = model.predict(x) - y;
    let grad_f = model.input_gradient(x);
    // dl/dx = 2 residual grad_f
    let loss_grad = grad_f.mapv(|g| 2.0 * residual * g);
    match spec.norm {
        Norm::L2 => {
            let g = norm2(loss_grad.view());
            let shrink = l2_shrink(g, spec.xi);
            if g == 0.0 || shrink == 0.0 {
                return Perturbation::zero(d);
            }
            let scale = spec.epsilon * shrink / g;
            Perturbation {
                delta: loss_grad.mapv(|v| v * scale),
            }
        }
        Norm::Linf => Perturbation {
            delta: loss_grad.mapv(|v| spec.epsilon * sgn(v) * linf_shrink(v.abs(), spec.xi)),
        },
    }
}

/// k-step projected gradient ascent from delta = 0, step size 2 eps / k,
/// projected onto the attack spec's eps-ball, then the surrogate shrink from the
/// clean-input gradient.
pub fn pgd_attack<M: DiffModel + ?Sized>(
    model: &M,
    x: ArrayView1<f64>,
    y: f64,
    spec: &AttackSpec,
    k: u32,
) -> Perturbation {
    pgd_attack_from(model, x, y, spec, k, None)
}

/// PGD with an explicit starting perturbation (used by the attack-difference
/// probe, which starts from random points in the ball).
pub fn pgd_attack_from<M: DiffModel + ?Sized>(
    model: &M,
    x: ArrayView1<f64>,
    y: f64,
    spec: &AttackSpec,
    k: u32,
    start: Option<ArrayView1<f64>>,
) -> Perturbation {
    let d = x.len();
    if spec.epsilon == 0.0 || k == 0 {
        return Perturbation::zero(d);
    }
    let step = 2.0 * spec.epsilon / k as f64;
    let mut delta = match start {
        Some(s) => s.to_owned(),
        None => Array1::zeros(d),
    };
    project(&mut delta, spec.norm, spec.epsilon);
    let mut point = &x.to_owned() + &delta;
    for _ in 0..k {
        let residual = model.predict(point.view()) - y;
        let grad_f = model.input_gradient(point.view());
        match spec.norm {
            Norm::L2 => {
                let mut g = grad_f.mapv(|v| 2.0 * residual * v);
                let n = norm2(g.view());
                if n > 0.0 {
                    g.mapv_inplace(|v| v * (step / n));
                    delta += &g;
                }
            }
            Norm::Linf => {
                for i in 0..d {
                    delta[i] += step * sgn(2.0 * residual * grad_f[i]);
                }
            }
        }
        project(&mut delta, spec.norm, spec.epsilon);
        point = &x.to_owned() + &delta;
    }
    // Surrogate shrink from the clean-input gradient, as in the one-step case.
    if spec.xi > 0.0 {
        let residual = model.predict(x) - y;
        let clean = model.input_gradient(x).mapv(|g| 2.0 * residual * g);
        match spec.norm {
            Norm::L2 => {
                let g = norm2(clean.view());
                let shrink = l2_shrink(g, spec.xi);
                delta.mapv_inplace(|v| v * shrink);
            }
            Norm::Linf => {
                for i in 0..d {
                    delta[i] *= linf_shrink(clean[i].abs(), spec.xi);
                }
            }
        }
    }
    Perturbation { delta }
}

fn project(delta: &mut Array1<f64>, norm: Norm, epsilon: f64) {
    match norm {
        Norm::L2 => {
            let n = norm2(delta.view());
            if n > epsilon {
                let s = epsilon / n;
                delta.mapv_inplace(|v| v * s);
            }
        }
        Norm::Linf => {
            for v in delta.iter_mut() {
                *v = v.clamp(-epsilon, epsilon);
            }
        }
    }
}

/// Uniform draw from the eps-ball of the given norm.
pub fn random_in_ball(d: usize, norm: Norm, epsilon: f64, g: &mut GaussianStream) -> Array1<f64> {
    match norm {
        Norm::L2 => {
            let mut z = Array1::zeros(d);
            g.fill_standard_normal(z.as_slice_mut().unwrap());
            let n = norm2(z.view());
            if n == 0.0 {
                return z;
            }
            let radius = epsilon * g.uniform_open_closed().powf(1.0 / d as f64);
            z.mapv(|v| v * radius / n)
        }
        Norm::Linf => Array1::from_iter((0..d).map(|_| epsilon * g.uniform_symmetric())),
    }
}

/// Attack-difference probe: runs PGD twice from independent random starts in
/// the ball and reports ||delta_1 - delta_2||_2. Large values flag inputs
/// where the attack is nearly non-unique.
pub fn attack_difference<M: DiffModel + ?Sized>(
    model: &M,
    x: ArrayView1<f64>,
    y: f64,
    spec: &AttackSpec,
    k: u32,
    rng: &mut GaussianStream,
) -> f64 {
    let d = x.len();
    let s1 = random_in_ball(d, spec.norm, spec.epsilon, rng);
    let s2 = random_in_ball(d, spec.norm, spec.epsilon, rng);
    let d1 = pgd_attack_from(model, x, y, spec, k, Some(s1.view()));
    let d2 = pgd_attack_from(model, x, y, spec, k, Some(s2.view()));
    norm2((&d1.delta - &d2.delta).view())
}
