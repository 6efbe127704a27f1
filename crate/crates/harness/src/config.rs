//! Declarative experiment description, `--set` overrides and the config hash.

use std::path::{Path, PathBuf};

use lmaps_core::operators::{KernelSpec, MaskSpec, MatrixSource, Surrogate};
use lmaps_core::{Family, GaussianMixture, NoiseSchedule, OperatorConfig, OperatorSpec, RhoPolicy, ScheduleKind, SolverConfig};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Default sample count for solvers that do not set their own.
    pub n_samples: usize,
    /// Independent (ground truth, measurement) pairs.
    #[serde(default = "one")]
    pub instances: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_trajectories: bool,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_quantile")]
    pub threshold_quantile: f64,
    #[serde(default = "default_threshold_draws")]
    pub threshold_draws: usize,
    #[serde(default = "default_psnr_max")]
    pub psnr_max: f64,
    pub prior: PriorConfig,
    pub schedule: ScheduleConfig,
    pub operator: OperatorEntry,
    pub ground_truth: GroundTruth,
    pub solvers: Vec<SolverEntry>,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_quantile() -> f64 {
    0.05
}

fn default_threshold_draws() -> usize {
    lmaps_core::metrics::THRESHOLD_DRAWS
}

fn default_psnr_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorConfig {
    /// Explicit components. Give `variances` for isotropic components or
    /// `covariances` for full matrices (row-major nested arrays).
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variances: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariances: Option<Vec<Vec<Vec<f64>>>>,
    },
    /// `side x side` images: one component per constant grey level, all
    /// sharing a squared-exponential pixel covariance plus a nugget.
    SmoothImage {
        side: usize,
        levels: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        variance: f64,
        length_scale: f64,
        nugget: f64,
    },
}

impl PriorConfig {
    pub fn build(&self) -> Result<GaussianMixture, HarnessError> {
        match self {
            PriorConfig::Mixture {
                weights,
                means,
                variances,
                covariances,
            } => {
                let means: Vec<DVector<f64>> = means.iter().map(|m| DVector::from_vec(m.clone())).collect();
                match (variances, covariances) {
                    (Some(v), None) => Ok(GaussianMixture::isotropic(weights.clone(), means, v)?),
                    (None, Some(c)) => {
                        let covs = c
                            .iter()
                            .map(|rows| matrix_from_rows(rows))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok(GaussianMixture::new(weights.clone(), means, covs)?)
                    }
                    _ => Err(HarnessError::Config(
                        "prior: give exactly one of `variances` or `covariances`".into(),
                    )),
                }
            }
            PriorConfig::SmoothImage {
                side,
                levels,
                weights,
                variance,
                length_scale,
                nugget,
            } => {
                if *side == 0 || levels.is_empty() || !(*length_scale > 0.0) {
                    return Err(HarnessError::Config(
                        "smooth-image prior needs side >= 1, at least one level and length_scale > 0".into(),
                    ));
                }
                let d = side * side;
                let cov = DMatrix::from_fn(d, d, |i, j| {
                    let (r1, c1) = ((i / side) as f64, (i % side) as f64);
                    let (r2, c2) = ((j / side) as f64, (j % side) as f64);
                    let d2 = (r1 - r2).powi(2) + (c1 - c2).powi(2);
                    variance * (-d2 / (2.0 * length_scale * length_scale)).exp() + if i == j { *nugget } else { 0.0 }
                });
                let k = levels.len();
                let weights = weights.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
                let means = levels.iter().map(|&l| DVector::from_element(d, l)).collect();
                Ok(GaussianMixture::new(weights, means, vec![cov; k])?)
            }
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, HarnessError> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(HarnessError::Config("matrix rows must be non-empty and equally long".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: String,
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl ScheduleConfig {
    pub fn build(&self, steps: usize) -> Result<NoiseSchedule, HarnessError> {
        let kind: ScheduleKind = self.kind.parse()?;
        Ok(NoiseSchedule::build(kind, steps, self.sigma_min, self.sigma_max)?)
    }
}

/// Flat operator table; `type` selects which of the optional fields apply.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OperatorEntry {
    #[serde(rename = "type")]
    pub kind: String,
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r#box: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<String>,
}

impl OperatorEntry {
    pub fn to_config(&self, dim: usize) -> Result<OperatorConfig, HarnessError> {
        let need = |field: &str| HarnessError::Config(format!("operator {}: missing `{field}`", self.kind));
        let surrogate = |default: Surrogate| -> Result<Surrogate, HarnessError> {
            match &self.surrogate {
                Some(s) => Ok(s.parse()?),
                None => Ok(default),
            }
        };
        let matrix_source = || -> Result<MatrixSource, HarnessError> {
            match (&self.matrix, self.rows) {
                (Some(rows), None) => Ok(MatrixSource::Explicit(matrix_from_rows(rows)?)),
                (None, Some(rows)) => Ok(MatrixSource::Random {
                    rows,
                    seed: self.seed.unwrap_or(0),
                }),
                _ => Err(HarnessError::Config(format!(
                    "operator {}: give exactly one of `matrix` or `rows`",
                    self.kind
                ))),
            }
        };
        let spec = match self.kind.as_str() {
            "identity" => OperatorSpec::Identity,
            "dense-linear" => OperatorSpec::DenseLinear(matrix_source()?),
            "magnitude" => OperatorSpec::Magnitude(matrix_source()?),
            "mask" => match (&self.indices, self.keep_fraction, self.r#box) {
                (Some(idx), None, None) => OperatorSpec::Mask(MaskSpec::Indices(idx.clone())),
                (None, Some(keep_fraction), None) => OperatorSpec::Mask(MaskSpec::Random {
                    keep_fraction,
                    seed: self.seed.unwrap_or(0),
                }),
                (None, None, Some([top, left, height, width])) => OperatorSpec::Mask(MaskSpec::Box {
                    top,
                    left,
                    height,
                    width,
                }),
                _ => {
                    return Err(HarnessError::Config(
                        "operator mask: give exactly one of `indices`, `keep_fraction` or `box`".into(),
                    ))
                }
            },
            "conv-blur" => match (&self.taps, &self.kernel, self.sigma) {
                (Some(t), None, None) => OperatorSpec::ConvBlur(KernelSpec::Taps(t.clone())),
                (None, Some(k), None) => OperatorSpec::ConvBlur(KernelSpec::Taps2d(matrix_from_rows(k)?)),
                (None, None, Some(sigma)) => OperatorSpec::ConvBlur(KernelSpec::Gaussian {
                    sigma,
                    radius: self.radius.ok_or_else(|| need("radius"))?,
                }),
                _ => {
                    return Err(HarnessError::Config(
                        "operator conv-blur: give exactly one of `taps`, `kernel` or `sigma`".into(),
                    ))
                }
            },
            "downsample" => OperatorSpec::Downsample {
                factor: self.factor.ok_or_else(|| need("factor"))?,
                image: self.image.unwrap_or(false),
            },
            "quantize" => OperatorSpec::Quantize {
                n_bits: self.bits.ok_or_else(|| need("bits"))?,
                surrogate: surrogate(Surrogate::Identity)?,
            },
            "clip" => OperatorSpec::Clip {
                gain: self.gain.unwrap_or(1.0),
                surrogate: surrogate(Surrogate::Pipeline)?,
            },
            "toy-jpeg" => OperatorSpec::ToyJpeg {
                quality: self.quality.ok_or_else(|| need("quality"))?,
                surrogate: surrogate(Surrogate::Pipeline)?,
            },
            other => return Err(HarnessError::Config(format!("unknown operator type {other:?}"))),
        };
        Ok(OperatorConfig {
            dim,
            spec,
            noise_std: self.noise_std,
            name: self.name.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GroundTruth {
    /// One prior draw per instance from a stream keyed by `seed`.
    Prior { seed: u64 },
    /// A fixed vector read from a CSV file, relative to the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RhoSetting {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    pub family: String,
    /// Column label; defaults to the family name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    /// Diffusion steps; defaults to `schedule.steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub langevin_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub langevin_step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multistart_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_inner_loss: Option<bool>,
}

impl SolverEntry {
    pub fn family(&self) -> Result<Family, HarnessError> {
        Ok(self.family.parse()?)
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.family.clone())
    }

    pub fn solver_config(&self, schedule_steps: usize) -> Result<SolverConfig, HarnessError> {
        let family = self.family()?;
        let mut cfg = SolverConfig::new(family);
        cfg.steps = self.steps.unwrap_or(schedule_steps);
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        take!(inner_steps, learning_rate, k1, k2, guidance_scale, langevin_steps, langevin_step_size, multistart_count);
        cfg.inner_tol = self.inner_tol;
        cfg.record_inner_loss = self.record_inner_loss.unwrap_or(false);
        cfg.rho = match &self.rho {
            None => None,
            Some(RhoSetting::Value(v)) => Some(RhoPolicy::Constant(*v)),
            Some(RhoSetting::Named(s)) => Some(s.parse()?),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parsed configuration together with the directory relative paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| HarnessError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Ok(LoadedConfig {
            config: from_table(table)?,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn from_table(table: Table) -> Result<ExperimentConfig, HarnessError> {
    let cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.solvers.is_empty() {
            return Err(HarnessError::Config("no solvers configured".into()));
        }
        if self.solvers.iter().all(|s| s.n_samples.unwrap_or(self.n_samples) == 0) {
            return Err(HarnessError::Config("every solver has n_samples = 0; nothing to run".into()));
        }
        if self.instances == 0 {
            return Err(HarnessError::Config("instances must be >= 1".into()));
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) || self.threshold_draws == 0 {
            return Err(HarnessError::Config("threshold_quantile must lie in (0, 1) with draws >= 1".into()));
        }
        let mut labels: Vec<String> = self.solvers.iter().map(SolverEntry::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config("solver labels must be unique".into()));
        }
        for s in &self.solvers {
            s.solver_config(self.schedule.steps)?;
        }
        if matches!(self.ground_truth, GroundTruth::File { .. }) && self.instances != 1 {
            return Err(HarnessError::Config("a ground-truth file defines exactly one instance".into()));
        }
        Ok(())
    }

    /// Canonical text of everything that affects the numbers.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 0;
        toml::to_string(&c).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}

/// Sets `dotted.path = value`. Inside `solvers`, the next segment selects a
/// solver by index, label or family; without a selector the field is set
/// on every solver.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), HarnessError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {assignment:?} is not path=value")))?;
    set_path(table, path.trim(), parse_value(raw.trim()))
}

pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<(), HarnessError> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(HarnessError::Config(format!("bad parameter path {path:?}")));
    }
    set_in(table, &segments, value, path)
}

fn set_in(table: &mut Table, segments: &[&str], value: Value, full: &str) -> Result<(), HarnessError> {
    let unknown = || HarnessError::Config(format!("unknown parameter path {full:?}"));
    match segments {
        [] => Err(unknown()),
        [last] => {
            table.insert(last.to_string(), value);
            Ok(())
        }
        ["solvers", rest @ ..] => {
            let solvers = table.get_mut("solvers").and_then(Value::as_array_mut).ok_or_else(unknown)?;
            let matches = |i: usize, t: &Table| {
                let field = |k: &str| t.get(k).and_then(Value::as_str);
                rest[0] == i.to_string() || field("label") == Some(rest[0]) || (field("label").is_none() && field("family") == Some(rest[0]))
            };
            let selected: Vec<usize> = solvers
                .iter()
                .enumerate()
                .filter(|(i, s)| s.as_table().is_some_and(|t| matches(*i, t)))
                .map(|(i, _)| i)
                .collect();
            let (targets, tail) = if selected.is_empty() {
                ((0..solvers.len()).collect(), rest)
            } else {
                (selected, &rest[1..])
            };
            if tail.is_empty() {
                return Err(unknown());
            }
            for i in targets {
                let t = solvers[i].as_table_mut().ok_or_else(unknown)?;
                set_in(t, tail, value.clone(), full)?;
            }
            Ok(())
        }
        [head, rest @ ..] => {
            let child = table
                .entry(head.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(unknown)?;
            set_in(child, rest, value, full)
        }
    }
}
