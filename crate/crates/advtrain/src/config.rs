//! Experiment configuration: a single TOML document describing the model,
//! dataset, attack, and training loop. Presets are expressed in the same
//! schema, so `preset` and `custom` runs share one code path and configs can
//! be committed and diffed. Parse -> serialize -> parse is a fixed point.

use crate::attack::{Method, Norm};
use crate::datagen::{CovarianceSpec, GenModel};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Preset name, or "custom".
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub attack: AttackSection,
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub theta0: Theta0Spec,
    pub sigma: SigmaSpec,
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta0Spec {
    Dense { dense: Vec<f64> },
    Sparse { sparse: SparseTheta },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTheta {
    pub d: usize,
    pub s: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaName {
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Name(SigmaName),
    Diag { diag: Vec<f64> },
    /// Inline dense SPD blocks (row-major nested arrays).
    Blocks { blocks: Vec<Vec<Vec<f64>>> },
    /// Dense matrix loaded from a headerless CSV file; with `cholesky = true`
    /// the file holds a lower factor L and Sigma = L L^T.
    Matrix {
        matrix: PathBuf,
        #[serde(default)]
        cholesky: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: u32,
}

fn one() -> u32 {
    1
}

/// A scalar or a sweep list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sweep {
    Single(f64),
    List(Vec<f64>),
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Sweep::Single(v) => vec![*v],
            Sweep::List(v) => v.clone(),
        }
    }
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep::Single(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub norm: Norm,
    pub epsilon: Sweep,
    #[serde(default)]
    pub xi: Sweep,
    #[serde(default = "default_method")]
    pub method: Method,
}

fn default_method() -> Method {
    Method::Fgm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Auto(AutoWord),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoWord {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    Zero,
    /// Ordinary least squares on the replication's own data.
    Ols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Name(InitName),
    Vanishing { vanishing: VanishingInit },
    Explicit { explicit: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanishingInit {
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopName {
    Fixed,
    Highdim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StopSpec {
    Name(StopName),
    GradNorm { grad_norm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub eta: EtaSpec,
    pub max_iters: usize,
    #[serde(default)]
    pub lambda_l1: Sweep,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default = "default_stop")]
    pub stop: StopSpec,
    #[serde(default)]
    pub snapshot_every: usize,
    /// Theorem-schedule constant L; used by presets that derive (xi, eta, T)
    /// from the data instead of taking them from this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_l: Option<f64>,
}

fn default_init() -> InitSpec {
    InitSpec::Name(InitName::Zero)
}

fn default_stop() -> StopSpec {
    StopSpec::Name(StopName::Fixed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActivationSpec {
    Name(ActivationName),
    Identity { identity: f64 },
    Relu { relu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub h: usize,
    pub activation: ActivationSpec,
    /// Seed for the Unif[-1,1] outer weights.
    pub outer_seed: u64,
    /// Rescale negative outer weights so ||a+|| = ||a-|| (required for ReLU).
    #[serde(default)]
    pub balance: bool,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub mc_every: usize,
}

fn default_mc_samples() -> usize {
    10_000
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config {
        path: e
            .span()
            .map(|s| format!("bytes {}..{}", s.start, s.end))
            .unwrap_or_else(|| "<document>".into()),
        message: e.message().to_string(),
    })
}

pub fn serialize_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config {
        path: "<serialize>".into(),
        message: e.to_string(),
    })
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_config(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.n == 0 {
            return Err(Error::Config {
                path: "dataset.n".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.dataset.replications == 0 {
            return Err(Error::Config {
                path: "dataset.replications".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.model.noise_var < 0.0 {
            return Err(Error::Config {
                path: "model.noise_var".into(),
                message: "must be >= 0".into(),
            });
        }
        for (i, e) in self.attack.epsilon.values().iter().enumerate() {
            if *e < 0.0 || !e.is_finite() {
                return Err(Error::Config {
                    path: format!("attack.epsilon[{i}]"),
                    message: format!("must be finite and >= 0, got {e}"),
                });
            }
        }
        for (i, x) in self.attack.xi.values().iter().enumerate() {
            if *x < 0.0 || !x.is_finite() {
                return Err(Error::Config {
                    path: format!("attack.xi[{i}]"),
                    message: format!("must be finite and >= 0, got {x}"),
                });
            }
        }
        for (i, l) in self.train.lambda_l1.values().iter().enumerate() {
            if *l < 0.0 || !l.is_finite() {
                return Err(Error::Config {
                    path: format!("train.lambda_l1[{i}]"),
                    message: format!("must be finite and >= 0, got {l}"),
                });
            }
        }
        if let EtaSpec::Fixed(e) = self.train.eta {
            if e <= 0.0 || !e.is_finite() {
                return Err(Error::Config {
                    path: "train.eta".into(),
                    message: format!("must be positive, got {e}"),
                });
            }
        }
        if self.train.max_iters == 0 {
            return Err(Error::Config {
                path: "train.max_iters".into(),
                message: "must be >= 1".into(),
            });
        }
        if let Some(net) = &self.network {
            if net.h == 0 {
                return Err(Error::Config {
                    path: "network.h".into(),
                    message: "must be >= 1".into(),
                });
            }
            if matches!(self.attack.method, Method::Exact) {
                return Err(Error::Config {
                    path: "attack.method".into(),
                    message: "exact attacks are unavailable for networks; use fgm or pgd".into(),
                });
            }
            if let ActivationSpec::Relu { .. } = net.activation {
                if !net.balance {
                    return Err(Error::Config {
                        path: "network.balance".into(),
                        message: "relu networks need balanced outer weights (set balance = true)"
                            .into(),
                    });
                }
            }
        }
        self.theta0()?;
        Ok(())
    }

    pub fn theta0(&self) -> Result<Array1<f64>> {
        match &self.model.theta0 {
            Theta0Spec::Dense { dense } => Ok(Array1::from_vec(dense.clone())),
            Theta0Spec::Sparse { sparse } => {
                crate::datagen::sparse_theta(sparse.d, sparse.s, sparse.value).map_err(|e| {
                    Error::Config {
                        path: "model.theta0.sparse".into(),
                        message: e.to_string(),
                    }
                })
            }
        }
    }

    /// Builds the generating model, loading matrix files relative to `base`.
    pub fn build_model(&self, base: &Path) -> Result<GenModel> {
        let theta0 = self.theta0()?;
        let cov = match &self.model.sigma {
            SigmaSpec::Name(SigmaName::Identity) => CovarianceSpec::Identity,
            SigmaSpec::Diag { diag } => CovarianceSpec::Diagonal(Array1::from_vec(diag.clone())),
            SigmaSpec::Blocks { blocks } => {
                let mut bs = Vec::with_capacity(blocks.len());
                for (bi, b) in blocks.iter().enumerate() {
                    bs.push(matrix_from_rows(b).map_err(|m| Error::Config {
                        path: format!("model.sigma.blocks[{bi}]"),
                        message: m,
                    })?);
                }
                CovarianceSpec::Blocks(bs)
            }
            SigmaSpec::Matrix { matrix, cholesky } => {
                let path = if matrix.is_absolute() {
                    matrix.clone()
                } else {
                    base.join(matrix)
                };
                let m = read_matrix_csv(&path)?;
                if *cholesky {
                    CovarianceSpec::CholeskyFactor(m)
                } else {
                    CovarianceSpec::Dense(m)
                }
            }
        };
        GenModel::new(theta0, cov, self.model.noise_var)
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> std::result::Result<Array2<f64>, String> {
    let r = rows.len();
    if r == 0 {
        return Err("empty matrix".into());
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err("ragged rows".into());
    }
    let mut m = Array2::zeros((r, c));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Headerless numeric CSV -> dense matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Config {
                path: path.display().to_string(),
                message: format!("bad number: {e}"),
            })?;
        rows.push(row);
    }
    matrix_from_rows(&rows).map_err(|m| Error::Config {
        path: path.display().to_string(),
        message: m,
    })
}

/// Applies `--set key=value` overrides (dotted paths into the TOML tree)
/// before parsing.
pub fn apply_overrides(text: &str, overrides: &[(String, String)]) -> Result<String> {
    let mut doc: toml::Value = toml::from_str(text).map_err(|e| Error::Config {
        path: "<document>".into(),
        message: e.to_string(),
    })?;
    for (key, raw) in overrides {
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|t| t.get("v").cloned())
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        let parts: Vec<&str> = key.split('.').collect();
        set_path(&mut doc, &parts, value, key)?;
    }
    toml::to_string_pretty(&doc).map_err(|e| Error::Config {
        path: "<serialize>".into(),
        message: e.to_string(),
    })
}

fn set_path(
    node: &mut toml::Value,
    parts: &[&str],
    value: toml::Value,
    full_key: &str,
) -> Result<()> {
    let table = node.as_table_mut().ok_or_else(|| Error::Config {
        path: full_key.to_string(),
        message: "path passes through a non-table value".into(),
    })?;
    if parts.len() == 1 {
        table.insert(parts[0].to_string(), value);
        return Ok(());
    }
    let child = table
        .entry(parts[0].to_string())
        .or_insert(toml::Value::Table(Default::default()));
    set_path(child, &parts[1..], value, full_key)
}
