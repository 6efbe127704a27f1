//! One-parameter sweeps producing a long-format table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::config::{apply_override, from_table, parse_value, set_path, LoadedConfig};
use crate::error::HarnessError;
use crate::runner::execute;
use crate::store::{summarise, SummaryEntry};

pub struct SweepPoint {
    pub value: String,
    pub summary: Vec<SummaryEntry>,
}

pub struct Sweep {
    pub param: String,
    pub points: Vec<SweepPoint>,
    pub hash: String,
    /// Set when a point aborted; earlier points are kept.
    pub failure: Option<HarnessError>,
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config_hash={}\nparam,value,solver,metric,mean,std,n\n", self.hash);
        for p in &self.points {
            for e in &p.summary {
                writeln!(out, "{},{},{},{},{},{},{}", self.param, p.value, e.solver, e.metric, e.mean, e.std, e.n).unwrap();
            }
        }
        out
    }

    pub fn mean(&self, value: &str, solver: &str, metric: &str) -> Option<f64> {
        let p = self.points.iter().find(|p| p.value == value)?;
        p.summary.iter().find(|e| e.solver == solver && e.metric == metric).map(|e| e.mean)
    }
}

/// Runs the experiment once per value of `param`. Every value must be
/// numeric and the path must name a field the schema accepts.
pub fn run_sweep(config_path: &Path, overrides: &[String], param: &str, values: &[String]) -> Result<Sweep, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let text = std::fs::read_to_string(config_path).map_err(|e| HarnessError::Config(format!("{}: {e}", config_path.display())))?;
    let mut base: Table = text
        .parse()
        .map_err(|e: toml::de::Error| HarnessError::Config(format!("{}: {e}", config_path.display())))?;
    for o in overrides {
        apply_override(&mut base, o)?;
    }
    let parsed: Vec<Value> = values.iter().map(|v| parse_value(v)).collect();
    if let Some(bad) = values.iter().zip(&parsed).find(|(_, p)| !matches!(p, Value::Integer(_) | Value::Float(_))) {
        return Err(HarnessError::Config(format!("sweep value {:?} is not numeric", bad.0)));
    }
    let mut configs = Vec::with_capacity(values.len());
    for value in &parsed {
        let mut t = base.clone();
        set_path(&mut t, param, value.clone())?;
        let cfg = from_table(t).map_err(|e| match e {
            HarnessError::Config(msg) if msg.contains("unknown field") => {
                HarnessError::Config(format!("unknown parameter path {param:?}: {msg}"))
            }
            other => other,
        })?;
        configs.push(cfg);
    }
    let mut hasher = Sha256::new();
    for c in &configs {
        hasher.update(c.canonical().as_bytes());
    }
    hasher.update(param.as_bytes());
    let hash = hex::encode(hasher.finalize());

    let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut points = Vec::with_capacity(configs.len());
    let mut failure = None;
    for (config, value) in configs.into_iter().zip(values) {
        let loaded = LoadedConfig {
            config,
            base_dir: base_dir.clone(),
        };
        let outcome = execute(&loaded)?;
        points.push(SweepPoint {
            value: value.clone(),
            summary: summarise(&outcome),
        });
        if let Some(f) = outcome.failure {
            failure = Some(f);
            break;
        }
    }
    Ok(Sweep {
        param: param.to_string(),
        points,
        hash,
        failure,
    })
}

pub fn sweep_path(output_dir: &Path, sweep: &Sweep) -> PathBuf {
    output_dir.join(format!("sweep_{}.csv", &sweep.hash[..12]))
}
