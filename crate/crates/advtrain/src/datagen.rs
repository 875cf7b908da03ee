//! Generative models and Gaussian regression datasets.
//!
//! Data follow y = theta0' x + noise with x ~ N(0, Sigma) and independent
//! N(0, sigma^2) noise. A model carries its derived scale
//! v^2 = theta0' Sigma theta0 + sigma^2, which is also the adversarial risk
//! of the null model.
//!
//! Sampling order is pinned: rows of X first (row by row, each row as d
//! standard normals pushed through the covariance factor), then the n noise
//! draws. Identical (model, n, seed) therefore reproduce bit-identical data.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::GaussianStream;
use ndarray::{Array1, Array2, ArrayView1};

/// Covariance specification for the design distribution.
#[derive(Debug, Clone)]
pub enum CovarianceSpec {
    Identity,
    /// Diagonal entries (each >= 0).
    Diagonal(Array1<f64>),
    /// Block-diagonal with dense SPD blocks; cross-block entries are exactly zero.
    Blocks(Vec<Array2<f64>>),
    /// Dense SPD matrix.
    Dense(Array2<f64>),
    /// A lower-triangular Cholesky factor L with Sigma = L L^T, accepted
    /// directly so large-d sweeps skip the factorization.
    CholeskyFactor(Array2<f64>),
}

/// Internal sampling form of the covariance.
#[derive(Debug, Clone)]
enum CovFactor {
    Identity,
    /// sqrt of the diagonal.
    DiagonalSqrt(Array1<f64>),
    /// Lower factors per block.
    Blocks(Vec<Array2<f64>>),
    /// Dense lower factor.
    Dense(Array2<f64>),
}

/// Ground truth for data generation: (theta0, Sigma, sigma^2) plus the
/// derived v^2.
#[derive(Debug, Clone)]
pub struct GenModel {
    theta0: Array1<f64>,
    spec: CovarianceSpec,
    factor: CovFactor,
    noise_var: f64,
    v_sq: f64,
}

impl GenModel {
    /// Builds a model, checking the covariance is usable (SPD where a dense
    /// spec is given) and precomputing v^2.
    pub fn new(theta0: Array1<f64>, sigma: CovarianceSpec, noise_var: f64) -> Result<Self> {
        if noise_var < 0.0 || !noise_var.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_var must be finite and >= 0, got {noise_var}"
            )));
        }
        let d = theta0.len();
        if d == 0 {
            return Err(Error::InvalidArgument("theta0 must be non-empty".into()));
        }
        let factor = match &sigma {
            CovarianceSpec::Identity => CovFactor::Identity,
            CovarianceSpec::Diagonal(diag) => {
                if diag.len() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "diagonal has {} entries, theta0 has {}",
                        diag.len(),
                        d
                    )));
                }
                if let Some(&bad) = diag.iter().find(|v| **v < 0.0 || !v.is_finite()) {
                    return Err(Error::NotSpd { min_eigenvalue: bad });
                }
                CovFactor::DiagonalSqrt(diag.mapv(f64::sqrt))
            }
            CovarianceSpec::Blocks(blocks) => {
                let total: usize = blocks.iter().map(|b| b.nrows()).sum();
                if total != d {
                    return Err(Error::DimensionMismatch(format!(
                        "blocks cover {total} dims, theta0 has {d}"
                    )));
                }
                let mut factors = Vec::with_capacity(blocks.len());
                for b in blocks {
                    if b.nrows() != b.ncols() {
                        return Err(Error::DimensionMismatch("block is not square".into()));
                    }
                    factors.push(spd_factor(b)?);
                }
                CovFactor::Blocks(factors)
            }
            CovarianceSpec::Dense(m) => {
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance is {}x{}, theta0 has {}",
                        m.nrows(),
                        m.ncols(),
                        d
                    )));
                }
                CovFactor::Dense(spd_factor(m)?)
            }
            CovarianceSpec::CholeskyFactor(l) => {
                if l.nrows() != d || l.ncols() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "factor is {}x{}, theta0 has {}",
                        l.nrows(),
                        l.ncols(),
                        d
                    )));
                }
                if let Some(i) = (0..d).find(|&i| l[(i, i)] <= 0.0) {
                    return Err(Error::NotSpd {
                        min_eigenvalue: l[(i, i)],
                    });
                }
                CovFactor::Dense(l.clone())
            }
        };
        let mut model = Self {
            theta0,
            spec: sigma,
            factor,
            noise_var,
            v_sq: 0.0,
        };
        model.v_sq = model.sigma_quad_form(model.theta0.view()) + noise_var;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn theta0(&self) -> ArrayView1<'_, f64> {
        self.theta0.view()
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// The stored v^2 = theta0' Sigma theta0 + sigma^2.
    pub fn v_squared(&self) -> f64 {
        self.v_sq
    }

    pub fn covariance_spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    pub fn is_identity_cov(&self) -> bool {
        matches!(self.spec, CovarianceSpec::Identity)
    }

    /// v' Sigma v.
    pub fn sigma_quad_form(&self, v: ArrayView1<f64>) -> f64 {
        let sv = self.sigma_matvec(v);
        v.dot(&sv)
    }

    /// Sigma v.
    pub fn sigma_matvec(&self, v: ArrayView1<f64>) -> Array1<f64> {
        match &self.factor {
            CovFactor::Identity => v.to_owned(),
            CovFactor::DiagonalSqrt(s) => {
                let mut out = v.to_owned();
                out.zip_mut_with(s, |o, si| *o *= si * si);
                out
            }
            CovFactor::Blocks(blocks) => {
                let mut out = Array1::zeros(v.len());
                let mut offset = 0;
                for l in blocks {
                    let k = l.nrows();
                    let seg = v.slice(ndarray::s![offset..offset + k]);
                    let lt_v = l.t().dot(&seg);
                    let block_out = l.dot(&lt_v);
                    out.slice_mut(ndarray::s![offset..offset + k]).assign(&block_out);
                    offset += k;
                }
                out
            }
            CovFactor::Dense(l) => {
                let lt_v = l.t().dot(&v);
                l.dot(&lt_v)
            }
        }
    }

    /// Solves (Sigma + kappa I) out = Sigma theta0, the Proposition-2 curve.
    pub fn shifted_solve_curve(&self, kappa: f64) -> Result<Array1<f64>> {
        let d = self.dim();
        match &self.spec {
            CovarianceSpec::Identity => Ok(self.theta0.mapv(|t| t / (1.0 + kappa))),
            CovarianceSpec::Diagonal(diag) => {
                let mut out = Array1::zeros(d);
                for i in 0..d {
                    out[i] = diag[i] * self.theta0[i] / (diag[i] + kappa);
                }
                Ok(out)
            }
            CovarianceSpec::Blocks(blocks) => {
                let rhs = self.sigma_matvec(self.theta0.view());
                let mut out = Array1::zeros(d);
                let mut offset = 0;
                for b in blocks {
                    let k = b.nrows();
                    let mut shifted = b.clone();
                    for i in 0..k {
                        shifted[(i, i)] += kappa;
                    }
                    let l = linalg::cholesky(&shifted)
                        .map_err(|piv| Error::NotSpd { min_eigenvalue: piv })?;
                    let seg = rhs.slice(ndarray::s![offset..offset + k]).to_owned();
                    let sol = linalg::cholesky_solve(&l, seg.view());
                    out.slice_mut(ndarray::s![offset..offset + k]).assign(&sol);
                    offset += k;
                }
                Ok(out)
            }
            CovarianceSpec::Dense(m) => {
                let rhs = self.sigma_matvec(self.theta0.view());
                let mut shifted = m.clone();
                for i in 0..d {
                    shifted[(i, i)] += kappa;
                }
                let l = linalg::cholesky(&shifted)
                    .map_err(|piv| Error::NotSpd { min_eigenvalue: piv })?;
                Ok(linalg::cholesky_solve(&l, rhs.view()))
            }
            CovarianceSpec::CholeskyFactor(lf) => {
                let sigma = lf.dot(&lf.t());
                let rhs = sigma.dot(&self.theta0);
                let mut shifted = sigma;
                for i in 0..d {
                    shifted[(i, i)] += kappa;
                }
                let l = linalg::cholesky(&shifted)
                    .map_err(|piv| Error::NotSpd { min_eigenvalue: piv })?;
                Ok(linalg::cholesky_solve(&l, rhs.view()))
            }
        }
    }

    /// True when theta0 is (numerically) perpendicular to Sigma. Such models
    /// are legitimate inputs; reports flag them instead of rejecting.
    pub fn is_degenerate(&self) -> bool {
        let t = linalg::norm2(self.theta0.view());
        if t == 0.0 {
            return true;
        }
        self.sigma_quad_form(self.theta0.view()) < 1e-12 * t * t
    }

    /// One fresh draw (x, y) from the model; x coordinates first, then the
    /// noise, matching the dataset sampling order.
    pub fn sample_point(&self, g: &mut GaussianStream) -> (Array1<f64>, f64) {
        let mut z = Array1::zeros(self.dim());
        let x = self.sample_x_row(g, &mut z);
        let y = x.dot(&self.theta0) + self.noise_var.sqrt() * g.standard_normal();
        (x, y)
    }

    fn sample_x_row(&self, g: &mut GaussianStream, z: &mut Array1<f64>) -> Array1<f64> {
        g.fill_standard_normal(z.as_slice_mut().unwrap());
        match &self.factor {
            CovFactor::Identity => z.clone(),
            CovFactor::DiagonalSqrt(s) => {
                let mut out = z.clone();
                out.zip_mut_with(s, |o, si| *o *= si);
                out
            }
            CovFactor::Blocks(blocks) => {
                let mut out = Array1::zeros(z.len());
                let mut offset = 0;
                for l in blocks {
                    let k = l.nrows();
                    let seg = z.slice(ndarray::s![offset..offset + k]);
                    out.slice_mut(ndarray::s![offset..offset + k]).assign(&l.dot(&seg));
                    offset += k;
                }
                out
            }
            CovFactor::Dense(l) => l.dot(z),
        }
    }
}

fn spd_factor(m: &Array2<f64>) -> Result<Array2<f64>> {
    let sym_err = (0..m.nrows())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0f64, f64::max);
    if sym_err > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "covariance is not symmetric (max asymmetry {sym_err:.3e})"
        )));
    }
    linalg::cholesky(m).map_err(|_| {
        let eigs = linalg::symmetric_eigenvalues(m);
        Error::NotSpd {
            min_eigenvalue: eigs.first().copied().unwrap_or(f64::NAN),
        }
    })
}

/// A sampled regression dataset together with its generating seed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Sign-symmetrized copy: X -> [X; -X], y -> [y; -y]. The augmented set
    /// is exactly antithetic, which is what the ReLU/linear equivalence
    /// argument assumes of the design.
    pub fn symmetrized(&self) -> Dataset {
        let n = self.n();
        let d = self.dim();
        let mut x = Array2::zeros((2 * n, d));
        let mut y = Array1::zeros(2 * n);
        x.slice_mut(ndarray::s![..n, ..]).assign(&self.x);
        x.slice_mut(ndarray::s![n.., ..]).assign(&self.x.mapv(|v| -v));
        y.slice_mut(ndarray::s![..n]).assign(&self.y);
        y.slice_mut(ndarray::s![n..]).assign(&self.y.mapv(|v| -v));
        Dataset { x, y, seed: self.seed }
    }
}

/// theta with the first `s` entries set to `value` and the rest zero.
/// s = 0 yields the zero vector (null-model baselines are legitimate).
pub fn sparse_theta(d: usize, s: usize, value: f64) -> Result<Array1<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be >= 1".into()));
    }
    if s > d {
        return Err(Error::InvalidArgument(format!("s = {s} exceeds d = {d}")));
    }
    let mut t = Array1::zeros(d);
    t.slice_mut(ndarray::s![..s]).fill(value);
    Ok(t)
}

/// Draws X (n x d, rows iid N(0, Sigma)) and y = X theta0 + noise.
pub fn sample_dataset(model: &GenModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let d = model.dim();
    let mut g = GaussianStream::new(seed);
    let mut z = Array1::zeros(d);
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let row = model.sample_x_row(&mut g, &mut z);
        x.row_mut(i).assign(&row);
    }
    let sigma = model.noise_var().sqrt();
    let mut y = x.dot(&model.theta0);
    for i in 0..n {
        y[i] += sigma * g.standard_normal();
    }
    Ok(Dataset { x, y, seed })
}

/// Sample variance of y (n-1 denominator); the estimator of v^2 the
/// schedules rely on.
pub fn estimate_v_squared(ds: &Dataset) -> f64 {
    let n = ds.y.len();
    if n < 2 {
        return ds.y.iter().map(|v| v * v).sum();
    }
    let mean = ds.y.sum() / n as f64;
    ds.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ones(d: usize) -> Array1<f64> {
        Array1::from_elem(d, 1.0)
    }

    #[test]
    fn v_squared_fig1_setup() {
        // d = 10, Sigma = I, sigma^2 = 1 -> v^2 = 11.
        let m = GenModel::new(ones(10), CovarianceSpec::Identity, 1.0).unwrap();
        assert_eq!(m.v_squared(), 11.0);
    }

    #[test]
    fn v_squared_null_signal() {
        let m = GenModel::new(Array1::zeros(4), CovarianceSpec::Identity, 1.0).unwrap();
        assert_eq!(m.v_squared(), 1.0);
        assert!(m.is_degenerate());
    }

    #[test]
    fn non_spd_rejected_with_diagnostic() {
        let sig = array![[1.0, 2.0], [2.0, 1.0]];
        let err = GenModel::new(ones(2), CovarianceSpec::Dense(sig), 1.0).unwrap_err();
        match err {
            Error::NotSpd { min_eigenvalue } => {
                assert!((min_eigenvalue - (-1.0)).abs() < 1e-8, "min eig {min_eigenvalue}");
            }
            other => panic!("expected NotSpd, got {other:?}"),
        }
    }

    #[test]
    fn sparse_theta_cases() {
        let t = sparse_theta(1000, 10, 1.0).unwrap();
        assert_eq!(t.iter().filter(|v| **v != 0.0).count(), 10);
        assert_eq!(t.slice(ndarray::s![..10]).sum(), 10.0);
        assert_eq!(sparse_theta(5, 5, 2.0).unwrap(), Array1::from_elem(5, 2.0));
        assert_eq!(sparse_theta(3, 0, 1.0).unwrap(), Array1::zeros(3));
        assert!(sparse_theta(3, 4, 1.0).is_err());
    }

    #[test]
    fn noiseless_response_is_linear() {
        let m = GenModel::new(array![1.0, -2.0], CovarianceSpec::Identity, 0.0).unwrap();
        let ds = sample_dataset(&m, 50, 3).unwrap();
        let fit = ds.x.dot(&m.theta0());
        for (a, b) in ds.y.iter().zip(fit.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let m = GenModel::new(ones(6), CovarianceSpec::Identity, 1.0).unwrap();
        let a = sample_dataset(&m, 32, 99).unwrap();
        let b = sample_dataset(&m, 32, 99).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.seed, 99);
    }

    #[test]
    fn sample_covariance_close_to_identity() {
        // Law of large numbers: empirical covariance within 5% of I in
        // max-entry norm at n = 1e5.
        let d = 10;
        let m = GenModel::new(ones(d), CovarianceSpec::Identity, 1.0).unwrap();
        let ds = sample_dataset(&m, 100_000, 7).unwrap();
        let n = ds.n() as f64;
        let mut max_err = 0.0f64;
        for a in 0..d {
            for b in a..d {
                let mut s = 0.0;
                for i in 0..ds.n() {
                    s += ds.x[(i, a)] * ds.x[(i, b)];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                max_err = max_err.max((s / n - target).abs());
            }
        }
        assert!(max_err < 0.05, "max entry error {max_err}");
    }

    #[test]
    fn y_second_moment_estimates_v_squared() {
        // Sample mean of y^2 approximates v^2; this is the estimator the
        // schedule module uses (via the sample variance).
        let sig = CovarianceSpec::Diagonal(array![1.0, 2.0, 0.5]);
        let m = GenModel::new(array![1.0, -1.0, 2.0], sig, 0.7).unwrap();
        let ds = sample_dataset(&m, 100_000, 5).unwrap();
        let mean_y2 = ds.y.iter().map(|v| v * v).sum::<f64>() / ds.n() as f64;
        let rel = (mean_y2 - m.v_squared()).abs() / m.v_squared();
        assert!(rel < 0.05, "relative error {rel}");
        let vhat = estimate_v_squared(&ds);
        assert!((vhat - m.v_squared()).abs() / m.v_squared() < 0.05);
    }

    #[test]
    fn block_covariance_zero_cross_correlation() {
        let b1 = array![[1.0, 0.3], [0.3, 1.0]];
        let b2 = array![[0.8, -0.2], [-0.2, 0.6]];
        let m = GenModel::new(
            ones(4),
            CovarianceSpec::Blocks(vec![b1.clone(), b2.clone()]),
            0.0,
        )
        .unwrap();
        // Construction: Sigma maps block-2 vectors into block 2 only.
        let e2 = array![0.0, 0.0, 1.0, 0.0];
        let s = m.sigma_matvec(e2.view());
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], 0.0);
        // Empirical cross-block correlation small at n = 1e5.
        let ds = sample_dataset(&m, 100_000, 11).unwrap();
        let n = ds.n() as f64;
        for a in 0..2 {
            for b in 2..4 {
                let mut sab = 0.0;
                let (mut saa, mut sbb) = (0.0, 0.0);
                for i in 0..ds.n() {
                    sab += ds.x[(i, a)] * ds.x[(i, b)];
                    saa += ds.x[(i, a)] * ds.x[(i, a)];
                    sbb += ds.x[(i, b)] * ds.x[(i, b)];
                }
                let rho = (sab / n) / ((saa / n).sqrt() * (sbb / n).sqrt());
                assert!(rho.abs() < 0.05, "cross-block correlation {rho}");
            }
        }
    }

    #[test]
    fn cholesky_factor_spec_matches_dense() {
        // Supplying L directly must behave like the dense Sigma = L L^T.
        let l = array![[1.0, 0.0], [0.4, 0.9]];
        let sigma = l.dot(&l.t());
        let t0 = array![1.0, -0.5];
        let a = GenModel::new(t0.clone(), CovarianceSpec::CholeskyFactor(l), 0.3).unwrap();
        let b = GenModel::new(t0, CovarianceSpec::Dense(sigma), 0.3).unwrap();
        assert!((a.v_squared() - b.v_squared()).abs() < 1e-12);
        let da = sample_dataset(&a, 16, 5).unwrap();
        let db = sample_dataset(&b, 16, 5).unwrap();
        for (x, y) in da.x.iter().zip(db.x.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // Non-positive factor diagonals are rejected.
        let bad = array![[0.0, 0.0], [0.4, 0.9]];
        assert!(GenModel::new(
            array![1.0, 1.0],
            CovarianceSpec::CholeskyFactor(bad),
            0.0
        )
        .is_err());
    }

    #[test]
    fn symmetrized_dataset_is_antithetic() {
        let m = GenModel::new(ones(3), CovarianceSpec::Identity, 1.0).unwrap();
        let ds = sample_dataset(&m, 8, 1).unwrap().symmetrized();
        assert_eq!(ds.n(), 16);
        for i in 0..8 {
            for j in 0..3 {
                assert_eq!(ds.x[(i, j)], -ds.x[(i + 8, j)]);
            }
            assert_eq!(ds.y[i], -ds.y[i + 8]);
        }
    }
}
