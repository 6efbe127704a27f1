use std::path::Path;

use lmaps_harness::sweep::run_sweep;

#[test]
fn more_diffusion_steps_do_not_hurt_on_the_deblur_toy() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lin-deblur-16.toml");
    let values: Vec<String> = ["20", "100", "200"].iter().map(|s| s.to_string()).collect();
    let sweep = run_sweep(&cfg, &[], "schedule.steps", &values).unwrap();
    assert!(sweep.failure.is_none());
    let psnr: Vec<f64> = values.iter().map(|v| sweep.mean(v, "lmaps", "psnr_db").unwrap()).collect();
    println!("psnr over steps 20/100/200: {psnr:?}");
    assert!(psnr.windows(2).all(|w| w[1] >= w[0]), "{psnr:?}");
    assert_eq!(sweep.to_csv().lines().filter(|l| l.contains(",lmaps,psnr_db,")).count(), 3);
}
