use std::path::{Path, PathBuf};

use lmaps_harness::config::{apply_override, from_table, LoadedConfig};
use lmaps_harness::runner::build_problem;
use lmaps_harness::HarnessError;
use toml::Table;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn reference(name: &str) -> LoadedConfig {
    LoadedConfig::load(&configs_dir().join(format!("{name}.toml")), &[]).unwrap()
}

#[test]
fn reference_configs_are_consistent() {
    for name in ["toy2d", "lin-deblur-16", "quantize-2bit", "toyjpeg-qf5"] {
        let loaded = reference(name);
        assert_eq!(loaded.config.name, name);
        let mut quick = loaded.clone();
        quick.config.threshold_draws = 100;
        let problem = build_problem(&quick).unwrap();
        assert_eq!(problem.operator.input_dim(), problem.prior.dim());
        assert_eq!(problem.instances.len(), loaded.config.instances);
    }
    assert_eq!(reference("toy2d").config.solvers.len(), 4);
}

#[test]
fn reference_lmaps_rows_carry_the_tabulated_hyper_parameters() {
    let row = |name: &str| {
        let cfg = reference(name).config;
        let s = cfg.solvers.iter().find(|s| s.family == "lmaps").unwrap().solver_config(cfg.schedule.steps).unwrap();
        (s.steps, s.inner_steps, s.learning_rate, s.k1, s.k2, cfg.operator.noise_std)
    };
    assert_eq!(row("lin-deblur-16"), (200, 100, 0.01, 0.22, 100.0, 0.05));
    assert_eq!(row("quantize-2bit"), (200, 20, 0.2, 0.5, 5.0, 0.05));
    assert_eq!(row("toyjpeg-qf5"), (200, 100, 0.2, 0.5, 5.0, 0.05));
}

fn toy_table() -> Table {
    std::fs::read_to_string(configs_dir().join("toy2d.toml")).unwrap().parse().unwrap()
}

#[test]
fn overrides_reach_the_selected_solvers() {
    let mut t = toy_table();
    apply_override(&mut t, "solvers.lmaps.k2=7").unwrap();
    apply_override(&mut t, "solvers.1.langevin_steps=3").unwrap();
    apply_override(&mut t, "solvers.n_samples=5").unwrap();
    apply_override(&mut t, "schedule.steps=40").unwrap();
    let cfg = from_table(t).unwrap();
    assert_eq!(cfg.solvers[2].k2, Some(7.0));
    assert_eq!(cfg.solvers[1].langevin_steps, Some(3));
    assert!(cfg.solvers.iter().all(|s| s.n_samples == Some(5)));
    assert_eq!(cfg.schedule.steps, 40);
}

#[test]
fn bad_overrides_are_config_errors() {
    for bad in ["solvers.lmaps.no_such=1", "schedule.bogus=2", "prior", "n_samples=-1", "solvers=3"] {
        let mut t = toy_table();
        let err = apply_override(&mut t, bad).and_then(|_| from_table(t).map(|_| ()));
        assert!(matches!(err, Err(HarnessError::Config(_))), "{bad}");
    }
}

#[test]
fn hash_ignores_where_and_how_fast_results_are_written() {
    let a = reference("toy2d").config;
    let mut b = a.clone();
    b.output_dir = PathBuf::from("/elsewhere");
    b.workers = 3;
    assert_eq!(a.hash(), b.hash());
    let mut c = a.clone();
    c.seed += 1;
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.short_hash().len(), 12);
}

#[test]
fn nothing_to_run_is_rejected() {
    let mut t = toy_table();
    apply_override(&mut t, "n_samples=0").unwrap();
    assert!(matches!(from_table(t), Err(HarnessError::Config(_))));
    let mut t = toy_table();
    apply_override(&mut t, "n_samples=0").unwrap();
    apply_override(&mut t, "solvers.dps.n_samples=2").unwrap();
    assert!(from_table(t).is_ok());
}
