//! Two-layer networks f(x) = (1/sqrt(h)) sum_j phi(x' theta_j) a_j with fixed
//! outer weights a, plus the linear-model view both attacks and training share.
//!
//! The first-layer weights are the d x h matrix being trained; `a` never
//! changes. Activations are the three variants used throughout: a scaled
//! identity, the centered sigmoid phi(z) = 1/(1+e^-z) - 1/2 (phi(0) = 0,
//! phi'(0) = 1/4), and a scaled ReLU. The ReLU derivative at exactly zero is
//! the symmetric subgradient scale/2; with zero initialization every
//! preactivation starts at the kink, and this choice is what makes the
//! zero-init dynamics agree with the half-split limit from the first step on.

use crate::error::{Error, Result};
use crate::rng::GaussianStream;
use ndarray::{Array1, Array2, ArrayView1};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// phi(z) = scale * z.
    IdentityScaled { scale: f64 },
    /// phi(z) = 1/(1+e^-z) - 1/2.
    SigmoidCentered,
    /// phi(z) = scale * max(z, 0); derivative at 0 is scale/2.
    ReluScaled { scale: f64 },
}

impl Activation {
    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        match self {
            Activation::IdentityScaled { scale } => scale * z,
            Activation::SigmoidCentered => 1.0 / (1.0 + (-z).exp()) - 0.5,
            Activation::ReluScaled { scale } => {
                if z > 0.0 {
                    scale * z
                } else {
                    0.0
                }
            }
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::IdentityScaled { scale } => *scale,
            Activation::SigmoidCentered => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::ReluScaled { scale } => {
                if z > 0.0 {
                    *scale
                } else if z == 0.0 {
                    0.5 * scale
                } else {
                    0.0
                }
            }
        }
    }

    /// Slope used for the effective linear coefficient (phi'(0)); for ReLU
    /// this is the symmetric subgradient scale/2, which is also the slope of
    /// the linear map a balanced zero-initialized ReLU network computes.
    #[inline]
    pub fn slope_at_zero(&self) -> f64 {
        match self {
            Activation::IdentityScaled { scale } => *scale,
            Activation::SigmoidCentered => 0.25,
            Activation::ReluScaled { scale } => 0.5 * scale,
        }
    }

    pub fn is_relu(&self) -> bool {
        matches!(self, Activation::ReluScaled { .. })
    }
}

/// Anything attacks can differentiate through: a prediction and its input
/// gradient. The loss is always the squared error, so
/// dl/dx = 2 (f(x) - y) grad f(x).
pub trait DiffModel: Sync {
    fn predict(&self, x: ArrayView1<f64>) -> f64;
    fn input_gradient(&self, x: ArrayView1<f64>) -> Array1<f64>;
}

/// Borrowed linear model f(x) = theta' x.
#[derive(Debug, Clone, Copy)]
pub struct LinearModel<'a> {
    pub theta: ArrayView1<'a, f64>,
}

impl<'a> LinearModel<'a> {
    pub fn new(theta: ArrayView1<'a, f64>) -> Self {
        Self { theta }
    }
}

impl DiffModel for LinearModel<'_> {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        self.theta.dot(&x)
    }

    fn input_gradient(&self, _x: ArrayView1<f64>) -> Array1<f64> {
        self.theta.to_owned()
    }
}

/// Two-layer network with trainable first layer and fixed outer weights.
#[derive(Debug, Clone)]
pub struct TwoLayerNet {
    /// d x h first-layer weights, column j is theta_j.
    pub weights: Array2<f64>,
    /// Fixed outer weights, length h.
    pub outer: Array1<f64>,
    pub activation: Activation,
}

impl TwoLayerNet {
    pub fn new(weights: Array2<f64>, outer: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.ncols() != outer.len() {
            return Err(Error::DimensionMismatch(format!(
                "weights have {} columns, outer has {} entries",
                weights.ncols(),
                outer.len()
            )));
        }
        if activation.is_relu() {
            let (pos, neg) = outer_split_norms(&outer);
            if (pos - neg).abs() > 1e-9 * pos.max(neg).max(1e-300) {
                return Err(Error::InvalidArgument(format!(
                    "ReLU networks require balanced outer weights, got ||a+|| = {pos}, ||a-|| = {neg}"
                )));
            }
        }
        Ok(Self {
            weights,
            outer,
            activation,
        })
    }

    pub fn zero_init(d: usize, outer: Array1<f64>, activation: Activation) -> Result<Self> {
        let h = outer.len();
        Self::new(Array2::zeros((d, h)), outer, activation)
    }

    /// Vanishing initialization: theta_j ~ N(0, I_d / (d h^(1+delta))).
    pub fn vanishing_init(
        d: usize,
        outer: Array1<f64>,
        activation: Activation,
        delta: f64,
        seed: u64,
    ) -> Result<Self> {
        let h = outer.len();
        let sd = (1.0 / (d as f64 * (h as f64).powf(1.0 + delta))).sqrt();
        let mut g = GaussianStream::new(seed);
        let mut w = Array2::zeros((d, h));
        for j in 0..h {
            for i in 0..d {
                w[(i, j)] = sd * g.standard_normal();
            }
        }
        Self::new(w, outer, activation)
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.weights.ncols()
    }

    /// Effective linear coefficient (phi'(0)/sqrt(h)) * W a.
    pub fn effective_coefficient(&self) -> Array1<f64> {
        let scale = self.activation.slope_at_zero() / (self.hidden() as f64).sqrt();
        self.weights.dot(&self.outer).mapv(|v| v * scale)
    }

    /// Preactivations x' theta_j for all nodes.
    fn preactivations(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weights.t().dot(&x)
    }

    /// Gradient of the prediction w.r.t. the weights of node j is
    /// (a_j/sqrt(h)) phi'(z_j) x; this returns the per-node scalar factors
    /// (a_j/sqrt(h)) phi'(z_j) for the given input.
    pub fn node_factors(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let inv = 1.0 / (self.hidden() as f64).sqrt();
        let z = self.preactivations(x);
        let mut f = Array1::zeros(self.hidden());
        for j in 0..self.hidden() {
            f[j] = self.outer[j] * inv * self.activation.derivative(z[j]);
        }
        f
    }
}

impl DiffModel for TwoLayerNet {
    fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let z = self.preactivations(x);
        let inv = 1.0 / (self.hidden() as f64).sqrt();
        let mut s = 0.0;
        for j in 0..self.hidden() {
            s += self.outer[j] * self.activation.value(z[j]);
        }
        s * inv
    }

    fn input_gradient(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let factors = self.node_factors(x);
        self.weights.dot(&factors)
    }
}

fn outer_split_norms(a: &Array1<f64>) -> (f64, f64) {
    let mut pos = 0.0;
    let mut neg = 0.0;
    for &v in a.iter() {
        if v > 0.0 {
            pos += v * v;
        } else {
            neg += v * v;
        }
    }
    (pos.sqrt(), neg.sqrt())
}

/// Rescales the negative outer weights so that ||a+|| = ||a-||, the ReLU
/// balance condition.
pub fn balance_outer(a: &mut Array1<f64>) {
    let (pos, neg) = outer_split_norms(a);
    if neg == 0.0 || pos == 0.0 {
        return;
    }
    let scale = pos / neg;
    for v in a.iter_mut() {
        if *v < 0.0 {
            *v *= scale;
        }
    }
}

/// Outer weights a_j ~ Unif[-1, 1].
pub fn uniform_outer(h: usize, seed: u64) -> Array1<f64> {
    let mut g = GaussianStream::new(seed);
    Array1::from_iter((0..h).map(|_| g.uniform_symmetric()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn centered_sigmoid_conditions() {
        let a = Activation::SigmoidCentered;
        assert_eq!(a.value(0.0), 0.0);
        assert!((a.derivative(0.0) - 0.25).abs() < 1e-15);
        assert_eq!(a.slope_at_zero(), 0.25);
    }

    #[test]
    fn linear_activation_network_is_linear_model() {
        let w = array![[0.3, -0.1], [0.2, 0.4], [0.0, 1.0]];
        let a = array![0.5, -1.2];
        let net = TwoLayerNet::new(w, a, Activation::IdentityScaled { scale: 0.25 }).unwrap();
        let beta = net.effective_coefficient();
        let x = array![1.0, -2.0, 0.5];
        let fx = net.predict(x.view());
        assert!((fx - beta.dot(&x)).abs() < 1e-14);
        let g = net.input_gradient(x.view());
        for (gi, bi) in g.iter().zip(beta.iter()) {
            assert!((gi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn relu_requires_balanced_outer() {
        let w = Array2::zeros((2, 3));
        let a = array![1.0, 1.0, -0.5];
        assert!(TwoLayerNet::new(w.clone(), a.clone(), Activation::ReluScaled { scale: 1.0 }).is_err());
        let mut b = a;
        balance_outer(&mut b);
        assert!(TwoLayerNet::new(w, b, Activation::ReluScaled { scale: 1.0 }).is_ok());
    }

    #[test]
    fn balance_outer_equalizes_norms() {
        let mut a = uniform_outer(51, 4);
        balance_outer(&mut a);
        let (pos, neg) = outer_split_norms(&a);
        assert!((pos - neg).abs() < 1e-12 * pos);
    }

    #[test]
    fn vanishing_init_scale() {
        let a = uniform_outer(50, 9);
        let net =
            TwoLayerNet::vanishing_init(3, a, Activation::SigmoidCentered, 0.5, 21).unwrap();
        // sd = 1/sqrt(d h^1.5); column norms should be near sqrt(d) * sd.
        let sd = (1.0 / (3.0 * 50.0f64.powf(1.5))).sqrt();
        let mut total = 0.0;
        for j in 0..50 {
            let c = net.weights.column(j);
            total += c.dot(&c);
        }
        let observed = (total / (150.0)).sqrt();
        assert!((observed - sd).abs() < 0.3 * sd, "observed {observed}, expected {sd}");
    }
}
