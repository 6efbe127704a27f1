//! Executes an experiment: builds the problem, runs every solver batch in
//! parallel with per-sample random streams, and scores the results.

use std::collections::BTreeMap;

use lmaps_core::metrics::{compare_solvers, psnr, DensityThreshold, MetricReport};
use lmaps_core::operators::read_vector_lines;
use lmaps_core::rng::{derive_seed, stream};
use lmaps_core::solvers::run;
use lmaps_core::{build_operator, Family, ForwardOperator, GaussianMixture, Measurement, RunResult};
use nalgebra::DVector;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, GroundTruth, LoadedConfig};
use crate::error::HarnessError;

const MEASUREMENT_STREAM: u64 = 1;
const THRESHOLD_STREAM: u64 = 2;
const SOLVER_STREAM: u64 = 3;
const SNAPSHOTS: usize = 50;

pub struct Problem {
    pub prior: GaussianMixture,
    pub operator: ForwardOperator,
    pub instances: Vec<Instance>,
    pub threshold: DensityThreshold,
}

pub struct Instance {
    pub x_true: DVector<f64>,
    pub y: Measurement,
    /// PSNR of the raw measurement against the truth, when they share a
    /// space.
    pub measurement_psnr: Option<f64>,
}

pub struct SolverBatch {
    pub label: String,
    pub family: Family,
    pub steps: usize,
    /// `runs[instance][sample]`; shorter than requested after a failure.
    pub runs: Vec<Vec<RunResult>>,
}

pub struct Outcome {
    pub config: ExperimentConfig,
    pub hash: String,
    pub problem: Problem,
    pub batches: Vec<SolverBatch>,
    /// `reports[instance]` holds one row per solver with samples.
    pub reports: Vec<Vec<MetricReport>>,
    pub failure: Option<HarnessError>,
}

/// Stable per-solver stream key derived from its label.
pub fn solver_key(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn build_problem(loaded: &LoadedConfig) -> Result<Problem, HarnessError> {
    let cfg = &loaded.config;
    let prior = cfg.prior.build()?;
    let d = prior.dim();
    let operator = build_operator(&cfg.operator.to_config(d)?)?;
    let truths: Vec<DVector<f64>> = match &cfg.ground_truth {
        GroundTruth::Prior { seed } => (0..cfg.instances)
            .map(|i| prior.sample(&mut stream(*seed, &[i as u64])))
            .collect(),
        GroundTruth::File { path } => {
            let path = loaded.resolve(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| HarnessError::Config(format!("ground truth {}: {e}", path.display())))?;
            vec![read_vector_lines(text.lines())?]
        }
    };
    let mut instances = Vec::with_capacity(truths.len());
    for (i, x_true) in truths.into_iter().enumerate() {
        if x_true.len() != d {
            return Err(HarnessError::Dimension(format!(
                "ground truth has {} entries, prior dimension is {d}",
                x_true.len()
            )));
        }
        let seed = derive_seed(cfg.seed, &[MEASUREMENT_STREAM, i as u64]);
        let mut y = operator.measure(&x_true, &mut lmaps_core::rng::seeded(seed))?;
        y.seed = Some(seed);
        let measurement_psnr = if y.dim() == d {
            Some(psnr(&y.values, &x_true, cfg.psnr_max)?)
        } else {
            None
        };
        instances.push(Instance {
            x_true,
            y,
            measurement_psnr,
        });
    }
    let threshold = DensityThreshold::estimate(
        &prior,
        cfg.threshold_quantile,
        cfg.threshold_draws,
        derive_seed(cfg.seed, &[THRESHOLD_STREAM]),
    )?;
    Ok(Problem {
        prior,
        operator,
        instances,
        threshold,
    })
}

/// Runs every solver batch. A solver failure stops the experiment but the
/// results gathered so far are kept and scored.
pub fn execute(loaded: &LoadedConfig) -> Result<Outcome, HarnessError> {
    let cfg = loaded.config.clone();
    let hash = cfg.hash();
    let problem = build_problem(loaded)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;

    let mut batches = Vec::new();
    let mut failure = None;
    for entry in &cfg.solvers {
        let label = entry.label();
        let family = entry.family()?;
        let mut scfg = entry.solver_config(cfg.schedule.steps)?;
        let sched = cfg.schedule.build(scfg.steps)?;
        if cfg.emit_trajectories && family.uses_schedule() {
            scfg.trajectory_stride = Some(scfg.steps.div_ceil(SNAPSHOTS));
        }
        let n = entry.n_samples.unwrap_or(cfg.n_samples);
        let key = solver_key(&label);
        let jobs: Vec<(usize, usize)> = (0..problem.instances.len())
            .flat_map(|i| (0..n).map(move |s| (i, s)))
            .collect();
        let results: Vec<Result<RunResult, lmaps_core::Error>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(i, s)| {
                    let seed = derive_seed(cfg.seed, &[SOLVER_STREAM, key, i as u64, s as u64]);
                    let inst = &problem.instances[i];
                    let mut c = scfg.clone();
                    c.seed = seed;
                    let mut r = run(
                        &problem.prior,
                        &sched,
                        Some(&problem.operator),
                        Some(&inst.y),
                        &c,
                        &mut lmaps_core::rng::seeded(seed),
                    )?;
                    r.config_hash = hash.clone();
                    Ok(r)
                })
                .collect()
        });
        let mut runs: Vec<Vec<RunResult>> = vec![Vec::new(); problem.instances.len()];
        for ((i, _), r) in jobs.iter().zip(results) {
            match r {
                Ok(r) => runs[*i].push(r),
                Err(e) => {
                    if failure.is_none() {
                        failure = Some(HarnessError::Solver {
                            solver: label.clone(),
                            source: e,
                        });
                    }
                }
            }
        }
        batches.push(SolverBatch {
            label,
            family,
            steps: scfg.steps,
            runs,
        });
        if failure.is_some() {
            break;
        }
    }

    let mut reports = Vec::with_capacity(problem.instances.len());
    for (i, inst) in problem.instances.iter().enumerate() {
        let table: Vec<(String, Vec<RunResult>)> = batches
            .iter()
            .filter(|b| !b.runs[i].is_empty())
            .map(|b| (b.label.clone(), b.runs[i].clone()))
            .collect();
        reports.push(compare_solvers(
            &table,
            &problem.prior,
            &inst.x_true,
            &problem.operator,
            &inst.y,
            &problem.threshold,
            cfg.psnr_max,
        )?);
    }
    Ok(Outcome {
        config: cfg,
        hash,
        problem,
        batches,
        reports,
        failure,
    })
}

/// Per-run solver diagnostics averaged over the samples of one instance.
pub fn solver_metric_means(runs: &[RunResult]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in runs {
        for (k, v) in &r.metrics {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
