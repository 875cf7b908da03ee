//! Min-norm interpolation and the interpolation-failure diagnostics.
//!
//! When d > n, gradient descent on the squared loss from zero initialization
//! converges to theta(y) = X' (X X')^-1 y, the minimum-L2-norm interpolator.
//! Adversarial training from zero initialization tracks the same trajectory,
//! so the (surrogate) training loss goes to zero while the population
//! adversarial risk settles near v^2, the null-model risk. The report here
//! normalizes both by v^2 and carries the first-hit stopping iteration
//! T = min{t : ||X theta_t - y|| / (v sqrt(n)) < 1/sqrt(log n)}.

use crate::attack::AttackSpec;
use crate::datagen::{Dataset, GenModel};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, norm2, symmetric_eigenvalues};
use crate::risk::{monte_carlo_risk, population_risk};
use crate::train::interpolation_threshold;
use ndarray::{Array1, Array2};

/// Normalized interpolation diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct InterpolationReport {
    pub theta_norm_sq_over_v2: f64,
    pub train_loss_over_v2: f64,
    pub pop_risk_over_v2: f64,
    pub stopping_t: Option<usize>,
}

/// The minimum-norm interpolator theta(y) = X' (X X')^-1 y.
///
/// Requires n <= d and a well-conditioned Gram matrix; the solve is a plain
/// Cholesky with no ridge jitter, since the construction must be the exact
/// min-norm map. Rejects instances whose Gram matrix has minimum eigenvalue
/// at or below 1e-10 d, reporting the condition number.
pub fn min_norm_interpolator(x: &Array2<f64>, y: &Array1<f64>) -> Result<Array1<f64>> {
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {n} rows, y has {} entries",
            y.len()
        )));
    }
    if n > d {
        return Err(Error::InvalidArgument(format!(
            "min-norm interpolation needs n <= d, got n = {n}, d = {d}"
        )));
    }
    let gram = x.dot(&x.t());
    let eigs = symmetric_eigenvalues(&gram);
    let min_eig = eigs.first().copied().unwrap_or(0.0);
    let max_eig = eigs.last().copied().unwrap_or(0.0);
    if min_eig <= 1e-10 * d as f64 {
        return Err(Error::SingularGram {
            min_eigenvalue: min_eig,
            condition: if min_eig > 0.0 { max_eig / min_eig } else { f64::INFINITY },
        });
    }
    let l = cholesky(&gram).map_err(|piv| Error::SingularGram {
        min_eigenvalue: piv,
        condition: f64::INFINITY,
    })?;
    let alpha = cholesky_solve(&l, y.view());
    Ok(x.t().dot(&alpha))
}

/// First-hit interpolation stopping predicate at a given iterate.
pub fn stopping_predicate(x: &Array2<f64>, y: &Array1<f64>, theta: &Array1<f64>, v: f64) -> bool {
    let n = x.nrows();
    let resid = x.dot(theta) - y;
    norm2(resid.view()) / (v * (n as f64).sqrt()) < interpolation_threshold(n)
}

/// Normalized interpolation diagnostics for a linear estimator.
///
/// The population risk uses the closed form at the trained theta (the
/// non-surrogate report); xi affects training only.
pub fn interpolation_report_linear(
    theta: &Array1<f64>,
    ds: &Dataset,
    model: &GenModel,
    spec: &AttackSpec,
    stopping_t: Option<usize>,
) -> Result<InterpolationReport> {
    let v2 = model.v_squared();
    let lm = crate::network::LinearModel::new(theta.view());
    let train = crate::risk::empirical_surrogate_loss(&lm, ds, spec)?;
    let pop = population_risk(theta.view(), model, spec.epsilon, spec.norm).value;
    Ok(InterpolationReport {
        theta_norm_sq_over_v2: theta.dot(theta) / v2,
        train_loss_over_v2: train / v2,
        pop_risk_over_v2: pop / v2,
        stopping_t,
    })
}

/// Network variant; the population risk comes from the Monte-Carlo oracle.
pub fn interpolation_report_net(
    net: &crate::network::TwoLayerNet,
    ds: &Dataset,
    model: &GenModel,
    spec: &AttackSpec,
    stopping_t: Option<usize>,
    n_mc: usize,
    mc_seed: u64,
) -> Result<InterpolationReport> {
    let v2 = model.v_squared();
    let train = crate::risk::empirical_surrogate_loss(net, ds, spec)?;
    let pop = monte_carlo_risk(net, model, spec, n_mc, mc_seed)?.value;
    let coef = net.effective_coefficient();
    Ok(InterpolationReport {
        theta_norm_sq_over_v2: coef.dot(&coef) / v2,
        train_loss_over_v2: train / v2,
        pop_risk_over_v2: pop / v2,
        stopping_t,
    })
}

/// Minimum eigenvalue of X X^T divided by d (the appendix sanity band puts
/// this in [0.5, 2] for n = 20 and large d).
pub fn gram_min_eig_over_d(x: &Array2<f64>) -> f64 {
    let gram = x.dot(&x.t());
    let eigs = symmetric_eigenvalues(&gram);
    eigs.first().copied().unwrap_or(0.0) / x.ncols() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_dataset, sparse_theta, CovarianceSpec, GenModel};
    use ndarray::array;

    #[test]
    fn rank_one_interpolator() {
        // n = 1, x = e1, y = 2 -> theta = 2 e1.
        let x = array![[1.0, 0.0, 0.0]];
        let y = array![2.0];
        let t = min_norm_interpolator(&x, &y).unwrap();
        assert_eq!(t, array![2.0, 0.0, 0.0]);
    }

    #[test]
    fn interpolates_and_is_min_norm() {
        let theta0 = sparse_theta(200, 5, 1.0).unwrap();
        let m = GenModel::new(theta0, CovarianceSpec::Identity, 1.0).unwrap();
        let ds = sample_dataset(&m, 20, 42).unwrap();
        let t = min_norm_interpolator(&ds.x, &ds.y).unwrap();
        let resid = ds.x.dot(&t) - &ds.y;
        let rel = norm2(resid.view()) / norm2(ds.y.view());
        assert!(rel < 1e-10, "relative residual {rel}");
        // Adding any null-space direction grows the norm.
        let mut g = crate::rng::GaussianStream::new(9);
        let mut z = Array1::zeros(200);
        g.fill_standard_normal(z.as_slice_mut().unwrap());
        let gram = ds.x.dot(&ds.x.t());
        let l = cholesky(&gram).unwrap();
        let xz = ds.x.dot(&z);
        let alpha = cholesky_solve(&l, xz.view());
        let z_null = &z - &ds.x.t().dot(&alpha);
        for scale in [0.1, 1.0] {
            let cand = &t + &z_null.mapv(|v| v * scale);
            assert!(norm2(cand.view()) > norm2(t.view()));
        }
    }

    #[test]
    fn norm_ratio_small_in_high_dim() {
        // ||theta(y)||^2 / v^2 <= 5 n/d on the rate instance.
        let theta0 = sparse_theta(1000, 10, 1.0).unwrap();
        let m = GenModel::new(theta0, CovarianceSpec::Identity, 1.0).unwrap();
        for seed in 0..5 {
            let ds = sample_dataset(&m, 20, seed).unwrap();
            let t = min_norm_interpolator(&ds.x, &ds.y).unwrap();
            let ratio = t.dot(&t) / m.v_squared();
            assert!(ratio <= 5.0 * 20.0 / 1000.0, "ratio {ratio} at seed {seed}");
        }
    }

    #[test]
    fn rejects_singular_gram() {
        // Duplicate rows make X X' singular.
        let x = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let y = array![1.0, 1.0];
        match min_norm_interpolator(&x, &y) {
            Err(Error::SingularGram { .. }) => {}
            other => panic!("expected SingularGram, got {other:?}"),
        }
        // n > d is rejected outright.
        let x = Array2::zeros((3, 2));
        let y = Array1::zeros(3);
        assert!(min_norm_interpolator(&x, &y).is_err());
    }

    #[test]
    fn matches_zero_init_gradient_descent_limit() {
        let theta0 = sparse_theta(300, 5, 1.0).unwrap();
        let m = GenModel::new(theta0, CovarianceSpec::Identity, 1.0).unwrap();
        let ds = sample_dataset(&m, 15, 3).unwrap();
        let exact = min_norm_interpolator(&ds.x, &ds.y).unwrap();
        // Plain GD on the MSE from zero init.
        let lam = crate::linalg::lambda_max_xtx(ds.x.view());
        let eta = 0.9 * ds.n() as f64 / (2.0 * lam);
        let mut theta = Array1::zeros(300);
        for _ in 0..10_000 {
            let r = ds.x.dot(&theta) - &ds.y;
            let g = ds.x.t().dot(&r).mapv(|v| v * 2.0 / ds.n() as f64);
            theta = &theta - &g.mapv(|v| v * eta);
        }
        let gap = norm2((&theta - &exact).view());
        assert!(gap < 1e-4, "gap {gap}");
    }

    #[test]
    fn stopping_predicate_cases() {
        let theta0 = sparse_theta(100, 5, 1.0).unwrap();
        let m = GenModel::new(theta0, CovarianceSpec::Identity, 1.0).unwrap();
        let ds = sample_dataset(&m, 10, 8).unwrap();
        let v = m.v_squared().sqrt();
        let t = min_norm_interpolator(&ds.x, &ds.y).unwrap();
        assert!(stopping_predicate(&ds.x, &ds.y, &t, v));
        // theta = 0 fails it: ||y||/(v sqrt(n)) is near 1 > 1/sqrt(log n).
        let zero = Array1::zeros(100);
        assert!(!stopping_predicate(&ds.x, &ds.y, &zero, v));
    }

    #[test]
    fn linf_training_shows_the_same_interpolation_failure() {
        // eps = 1/sqrt(d) under the Linf attack: the training loss still
        // collapses while the population risk stays near v^2.
        let theta0 = sparse_theta(1000, 10, 1.0).unwrap();
        let m = GenModel::new(theta0, CovarianceSpec::Identity, 1.0).unwrap();
        let ds = sample_dataset(&m, 20, 77).unwrap();
        let eps = 1.0 / 1000.0f64.sqrt();
        let spec = AttackSpec::surrogate(crate::attack::Norm::Linf, eps, 0.0005);
        let cfg = crate::train::TrainConfig {
            eta: crate::train::Eta::Fixed(0.001),
            max_iters: 2000,
            ..Default::default()
        };
        let traj = crate::train::adv_train_linear(&ds, None, &spec, &cfg).unwrap();
        let report = interpolation_report_linear(
            &traj.final_theta,
            &ds,
            &m,
            &spec,
            traj.stopping_t,
        )
        .unwrap();
        assert!(report.train_loss_over_v2 < 0.05, "train/v2 {}", report.train_loss_over_v2);
        // The Linf risk carries an L1-norm term that only vanishes with the
        // dimension; at (n, d) = (20, 1000) it still adds ~15-20% above v^2.
        assert!(
            report.pop_risk_over_v2 > 0.85 && report.pop_risk_over_v2 < 1.3,
            "pop/v2 {}",
            report.pop_risk_over_v2
        );
        assert!(report.stopping_t.is_some());
        assert!(report.train_loss_over_v2 <= report.pop_risk_over_v2);
    }

    #[test]
    fn gram_eigenvalue_order() {
        let theta0 = sparse_theta(1000, 10, 1.0).unwrap();
        let m = GenModel::new(theta0, CovarianceSpec::Identity, 1.0).unwrap();
        for seed in 0..5 {
            let ds = sample_dataset(&m, 20, 100 + seed).unwrap();
            let r = gram_min_eig_over_d(&ds.x);
            assert!(r > 0.5 && r < 2.0, "lambda_min/d = {r} at seed {seed}");
        }
    }
}
