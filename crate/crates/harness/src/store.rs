//! On-disk layout of one experiment under `<output_dir>/<hash12>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use lmaps_core::metrics::mean_and_std;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::runner::{solver_metric_means, Outcome};
use crate::svg;

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"LMAPSTRJ";

pub fn run_dir(cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    base.join(cfg.short_hash())
}

/// Writes the resolved configuration before anything runs.
pub fn write_snapshot(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join("config.toml");
    let text = format!("# config_hash = \"{}\"\n{}", cfg.hash(), cfg.canonical());
    fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryEntry {
    pub solver: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsFile {
    pub config_hash: String,
    pub name: String,
    pub instances: usize,
    pub complete: bool,
    pub summary: Vec<SummaryEntry>,
}

impl MetricsFile {
    pub fn get(&self, solver: &str, metric: &str) -> Option<&SummaryEntry> {
        self.summary.iter().find(|e| e.solver == solver && e.metric == metric)
    }
}

fn header(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

/// Writes every numeric output and, for 2-D problems, the scatter plot.
pub fn write_outcome(outcome: &Outcome, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let hash = &outcome.hash;
    let d = outcome.problem.prior.dim();

    for (i, inst) in outcome.problem.instances.iter().enumerate() {
        let text = format!("{}{}", header(hash), inst.y.to_csv());
        fs::write(dir.join(format!("measurement_{i}.csv")), text)?;
    }

    let coords: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let mut truth = header(hash);
    writeln!(truth, "instance,{}", coords.join(",")).unwrap();
    for (i, inst) in outcome.problem.instances.iter().enumerate() {
        writeln!(truth, "{i},{}", join(inst.x_true.iter())).unwrap();
    }
    fs::write(dir.join("ground_truth.csv"), truth)?;

    let mut samples = header(hash);
    writeln!(samples, "solver,instance,sample,seed,{}", coords.join(",")).unwrap();
    for b in &outcome.batches {
        for (i, runs) in b.runs.iter().enumerate() {
            for (s, r) in runs.iter().enumerate() {
                writeln!(samples, "{},{i},{s},{},{}", b.label, r.seed, join(r.x0_hat.values.iter())).unwrap();
            }
        }
    }
    let samples_path = dir.join("samples.csv");
    fs::write(&samples_path, &samples)?;

    write_metrics(outcome, dir)?;

    for b in &outcome.batches {
        let trajs: Vec<_> = b.runs.iter().flatten().filter_map(|r| r.trajectory.as_ref()).collect();
        if trajs.is_empty() {
            continue;
        }
        let snaps = trajs[0].len();
        let mut bytes = Vec::with_capacity(32 + trajs.len() * snaps * d * 8);
        bytes.extend_from_slice(TRAJECTORY_MAGIC);
        for v in [d as u64, snaps as u64, trajs.len() as u64] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for t in &trajs {
            for state in t.iter() {
                for v in state.values.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let mut f = fs::File::create(dir.join(format!("trajectories_{}.bin", b.label)))?;
        f.write_all(&bytes)?;
    }

    if d == 2 {
        let stored = fs::read_to_string(&samples_path)?;
        let plot = svg::scatter(&outcome.problem.prior, &outcome.problem.threshold, &stored, hash)?;
        fs::write(dir.join("scatter.svg"), plot)?;
    }
    Ok(())
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn write_metrics(outcome: &Outcome, dir: &Path) -> Result<(), HarnessError> {
    let hash = &outcome.hash;
    let k = outcome.problem.prior.len();
    let extra: BTreeSet<String> = outcome
        .batches
        .iter()
        .flat_map(|b| b.runs.iter().flatten())
        .flat_map(|r| r.metrics.keys().cloned())
        .collect();

    let mut csv = header(hash);
    let modes: Vec<String> = (0..k).map(|j| format!("mode_{j}_fraction")).collect();
    let extra_cols: Vec<String> = extra.iter().cloned().collect();
    writeln!(
        csv,
        "solver,instance,n_samples,psnr_db,misfit,low_density_fraction,prior_logdensity_mean,measurement_psnr_db{}{}",
        prefixed(&extra_cols),
        prefixed(&modes)
    )
    .unwrap();

    let order: BTreeMap<&str, usize> = outcome.batches.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
    for (i, rows) in outcome.reports.iter().enumerate() {
        let inst = &outcome.problem.instances[i];
        for row in rows {
            let batch = &outcome.batches[order[row.solver.as_str()]];
            let means = solver_metric_means(&batch.runs[i]);
            let measurement = inst.measurement_psnr.map(|p| p.to_string()).unwrap_or_default();
            let extras: Vec<String> = extra.iter().map(|m| means.get(m).map(|v| v.to_string()).unwrap_or_default()).collect();
            writeln!(
                csv,
                "{},{i},{},{},{},{},{},{}{}{}",
                row.solver,
                row.n_samples,
                row.psnr_db,
                row.misfit,
                row.low_density_fraction,
                row.prior_logdensity_mean,
                measurement,
                prefixed(&extras),
                prefixed(&row.mode_histogram.iter().map(|v| v.to_string()).collect::<Vec<_>>())
            )
            .unwrap();
        }
    }
    fs::write(dir.join("metrics.csv"), csv)?;

    let file = MetricsFile {
        config_hash: hash.clone(),
        name: outcome.config.name.clone(),
        instances: outcome.problem.instances.len(),
        complete: outcome.failure.is_none(),
        summary: summarise(outcome),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::write(dir.join("metrics.json"), json + "\n")?;
    Ok(())
}

/// Mean and spread over instances of every reported quantity, plus the
/// raw measurement PSNR when it is defined.
pub fn summarise(outcome: &Outcome) -> Vec<SummaryEntry> {
    let mut series: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    let order: BTreeMap<&str, usize> = outcome.batches.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
    for (i, rows) in outcome.reports.iter().enumerate() {
        let inst = &outcome.problem.instances[i];
        for row in rows {
            let slot = order[row.solver.as_str()];
            let means = solver_metric_means(&outcome.batches[slot].runs[i]);
            let mut push = |m: &str, v: f64| series.entry((slot, m.to_string())).or_default().push(v);
            push("psnr_db", row.psnr_db);
            push("misfit", row.misfit);
            push("low_density_fraction", row.low_density_fraction);
            push("prior_logdensity_mean", row.prior_logdensity_mean);
            if let Some(p) = inst.measurement_psnr {
                push("psnr_gain_db", row.psnr_db - p);
            }
            for (m, v) in &means {
                push(m, *v);
            }
            for (j, v) in row.mode_histogram.iter().enumerate() {
                push(&format!("mode_{j}_fraction"), *v);
            }
        }
    }
    let mut summary: Vec<SummaryEntry> = series
        .into_iter()
        .map(|((slot, metric), values)| {
            let (mean, std) = mean_and_std(&values);
            SummaryEntry {
                solver: outcome.batches[slot].label.clone(),
                metric,
                mean,
                std,
                n: values.len(),
            }
        })
        .collect();
    let baseline: Vec<f64> = outcome.problem.instances.iter().filter_map(|i| i.measurement_psnr).collect();
    if !baseline.is_empty() {
        let (mean, std) = mean_and_std(&baseline);
        summary.push(SummaryEntry {
            solver: "measurement".into(),
            metric: "psnr_db".into(),
            mean,
            std,
            n: baseline.len(),
        });
    }
    summary
}

fn prefixed(cols: &[String]) -> String {
    cols.iter().map(|c| format!(",{c}")).collect()
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile, HarnessError> {
    let path = if path.is_dir() { path.join("metrics.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Header and flat `f64` payload of a trajectory file.
pub fn read_trajectories(path: &Path) -> Result<(usize, usize, usize, Vec<f64>), HarnessError> {
    let bytes = fs::read(path)?;
    let bad = || HarnessError::Config(format!("{}: not a trajectory file", path.display()));
    if bytes.len() < 32 || &bytes[..8] != TRAJECTORY_MAGIC {
        return Err(bad());
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap()) as usize;
    let (d, snaps, count) = (word(1), word(2), word(3));
    let payload = &bytes[32..];
    if payload.len() != d * snaps * count * 8 {
        return Err(bad());
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((d, snaps, count, values))
}

/// Fixed-width rendering of the summary for the terminal.
pub fn format_summary(file: &MetricsFile) -> String {
    let metrics = ["psnr_db", "misfit", "low_density_fraction", "prior_logdensity_mean"];
    let mut solvers: Vec<&str> = Vec::new();
    for e in &file.summary {
        if !solvers.contains(&e.solver.as_str()) {
            solvers.push(&e.solver);
        }
    }
    let mut out = format!("{} [{}] instances={}\n", file.name, &file.config_hash[..12.min(file.config_hash.len())], file.instances);
    write!(out, "{:<18}", "solver").unwrap();
    for m in metrics {
        write!(out, "{m:>24}").unwrap();
    }
    out.push('\n');
    for s in solvers {
        write!(out, "{s:<18}").unwrap();
        for m in metrics {
            match file.get(s, m) {
                Some(e) if e.n > 1 => write!(out, "{:>24}", format!("{:.4} ± {:.4}", e.mean, e.std)).unwrap(),
                Some(e) => write!(out, "{:>24.4}", e.mean).unwrap(),
                None => write!(out, "{:>24}", "-").unwrap(),
            }
        }
        out.push('\n');
    }
    if !file.complete {
        out.push_str("(incomplete: a solver aborted)\n");
    }
    out
}
