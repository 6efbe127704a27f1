use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lmaps_harness::store::{read_metrics, read_trajectories};

const SMALL: &str = r#"
name = "small"
seed = 3
n_samples = 40

[prior]
kind = "mixture"
weights = [0.5, 0.5]
means = [[-1.0, 0.0], [1.0, 0.0]]
variances = [0.05, 0.05]

[schedule]
kind = "cosine"
steps = 30
sigma_min = 0.002
sigma_max = 80.0

[operator]
type = "mask"
indices = [1]
noise_std = 0.1

[ground_truth]
policy = "prior"
seed = 1

[[solvers]]
family = "lmaps"
inner_steps = 10
learning_rate = 0.005

[[solvers]]
family = "dps"
"#;

fn lmaps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmaps")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_into(config: &Path, out: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let mut args = vec!["run", config.to_str().unwrap(), "--output-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = lmaps(&args);
    let dir = fs::read_dir(out).ok().and_then(|mut d| d.next()).map(|e| e.unwrap().path()).unwrap_or_default();
    (o, dir)
}

#[test]
fn run_writes_a_self_describing_store() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let (out, dir) = run_into(&cfg, &tmp.path().join("runs"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let hash = fs::read_to_string(dir.join("config.toml")).unwrap();
    let hash = hash.lines().next().unwrap().split('"').nth(1).unwrap().to_string();
    assert!(hash.starts_with(dir.file_name().unwrap().to_str().unwrap()));
    for f in ["samples.csv", "metrics.csv", "ground_truth.csv", "measurement_0.csv"] {
        let text = fs::read_to_string(dir.join(f)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_hash={hash}"), "{f}");
    }
    let samples = fs::read_to_string(dir.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().nth(1).unwrap(), "solver,instance,sample,seed,x0,x1");
    assert_eq!(samples.lines().count(), 2 + 80);
    let metrics = read_metrics(&dir).unwrap();
    assert_eq!(metrics.config_hash, hash);
    assert!(metrics.complete);
    let svg = fs::read_to_string(dir.join("scatter.svg")).unwrap();
    for layer in ["prior-contours", "solver-lmaps", "solver-dps"] {
        assert!(svg.contains(&format!("id=\"{layer}\"")), "{layer}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lmaps") && stdout.contains("dps"));

    let show = lmaps(&["show", dir.to_str().unwrap()]);
    assert!(show.status.success());
    assert!(String::from_utf8_lossy(&show.stdout).contains("low_density_fraction"));
}

#[test]
fn reruns_are_byte_identical_and_worker_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let (_, a) = run_into(&cfg, &tmp.path().join("a"), &["--workers", "1"]);
    let (_, b) = run_into(&cfg, &tmp.path().join("b"), &["--workers", "4"]);
    for f in ["samples.csv", "metrics.csv", "metrics.json", "scatter.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (_, c) = run_into(&cfg, &tmp.path().join("c"), &["--set", "seed=4"]);
    assert_ne!(a.file_name(), c.file_name());
    assert_ne!(fs::read(a.join("samples.csv")).unwrap(), fs::read(c.join("samples.csv")).unwrap());
}

#[test]
fn configuration_problems_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cases = [
        SMALL.replace("n_samples = 40", "n_samples = 0"),
        SMALL.replace("[prior]", "[prior\n"),
        SMALL.replace("learning_rate = 0.005", "learnin_rate = 0.005"),
        SMALL.replace("family = \"dps\"", "family = \"nope\""),
        SMALL.replace("kind = \"cosine\"", "kind = \"spiral\""),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.toml"), text);
        let (o, _) = run_into(&cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let (o, _) = run_into(&tmp.path().join("missing.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(lmaps(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn dimension_mismatch_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("truth.csv"), "index,value\n0,0.1\n1,0.2\n2,0.3\n").unwrap();
    let text = SMALL.replace("policy = \"prior\"\nseed = 1", "policy = \"file\"\npath = \"truth.csv\"");
    let cfg = write_config(tmp.path(), "dims.toml", &text);
    let (o, _) = run_into(&cfg, &tmp.path().join("runs"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let text = SMALL.replace("type = \"mask\"\nindices = [1]", "type = \"dense-linear\"\nmatrix = [[1.0, 0.0, 2.0]]");
    let cfg = write_config(tmp.path(), "matrix.toml", &text);
    let (o, _) = run_into(&cfg, &tmp.path().join("runs"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn divergence_exits_with_4_and_keeps_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}guidance_scale = 1e9\n");
    let cfg = write_config(tmp.path(), "div.toml", &text);
    let (o, dir) = run_into(&cfg, &tmp.path().join("runs"), &[]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dps"));
    let metrics = read_metrics(&dir).unwrap();
    assert!(!metrics.complete);
    assert!(metrics.get("lmaps", "psnr_db").is_some());
    let samples = fs::read_to_string(dir.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().filter(|l| l.starts_with("lmaps,")).count(), 40);
}

#[test]
fn trajectories_are_stored_when_requested() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "traj.toml", SMALL);
    let (o, dir) = run_into(&cfg, &tmp.path().join("runs"), &["--set", "emit_trajectories=true", "--set", "schedule.steps=120"]);
    assert!(o.status.success());
    let (d, snaps, count, values) = read_trajectories(&dir.join("trajectories_lmaps.bin")).unwrap();
    assert_eq!((d, count), (2, 40));
    assert_eq!(snaps, 120 / 3 + 1);
    let samples = fs::read_to_string(dir.join("samples.csv")).unwrap();
    let first: Vec<f64> = samples.lines().nth(2).unwrap().split(',').skip(4).map(|v| v.parse().unwrap()).collect();
    assert_eq!(&values[(snaps - 1) * d..snaps * d], first.as_slice());
    let (_, plain) = run_into(&cfg, &tmp.path().join("plain"), &["--set", "schedule.steps=120"]);
    assert!(!plain.join("trajectories_lmaps.bin").exists());
}

#[test]
fn sweep_emits_one_block_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", &SMALL.replace("n_samples = 40", "n_samples = 5"));
    let out = tmp.path().join("sweeps");
    let o = lmaps(&["sweep", cfg.to_str().unwrap(), "solvers.inner_steps", "10", "20", "100", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let file = fs::read_dir(&out).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(file).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "param,value,solver,metric,mean,std,n");
    for solver in ["lmaps", "dps"] {
        let rows: Vec<&str> = text.lines().filter(|l| l.contains(&format!(",{solver},psnr_db,"))).collect();
        assert_eq!(rows.len(), 3, "{solver}");
    }
    for bad in [vec!["solvers.inner_steps"], vec!["solvers.bogus", "1"], vec!["schedule.kind", "cosine"]] {
        let mut args = vec!["sweep", cfg.to_str().unwrap()];
        args.extend(bad.iter().copied());
        assert_eq!(lmaps(&args).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn verify_reports_every_check() {
    let o = lmaps(&["verify"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 6);
    assert!(!text.contains("FAIL "));
}
