use aircomm::autoencoder::gray_qam;
use aircomm::harness::{
    run_experiment, run_training, ExperimentConfig, SweepSpec, SystemId, TrainingSpec,
    MANIFEST_FILE,
};
use std::path::Path;

fn small_sweep(snr_db: Vec<f64>, coded: bool) -> SweepSpec {
    SweepSpec {
        snr_db,
        bit_budget: 20_000,
        max_bits: Some(20_000),
        target_ber: 1e-3,
        coded,
        ..SweepSpec::default()
    }
}

fn baseline(out: &Path, sweep: SweepSpec) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(SystemId::QamBaseline);
    cfg.seed = 5;
    cfg.out_dir = out.to_path_buf();
    cfg.sweep = sweep;
    cfg
}

fn tiny_training() -> TrainingSpec {
    TrainingSpec {
        pretrain_steps: 20,
        sim_steps: 20,
        rl_cycles: 2,
        rl_rx_steps_per_cycle: 1,
        finetune_symbols: 2_000,
        finetune_steps: 10,
        batch_codewords: 1,
        ..TrainingSpec::default()
    }
}

#[test]
fn reruns_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&baseline(a.path(), small_sweep(vec![4.0, 6.0], true))).unwrap();
    let rb = run_experiment(&baseline(b.path(), small_sweep(vec![4.0, 6.0], true))).unwrap();
    assert_eq!(ra.report, rb.report);
    assert_eq!(ra.manifest.artifacts, rb.manifest.artifacts);
    let ber = |d: &Path| std::fs::read(d.join("ber.csv")).unwrap();
    assert_eq!(ber(a.path()), ber(b.path()));
    assert!(ra.manifest.stale(a.path()).unwrap().is_empty());
    let text = std::fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(text, ra.manifest.render());
}

#[test]
fn noiseless_link_decodes_without_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&baseline(
        dir.path(),
        small_sweep(vec![f64::INFINITY], true),
    ))
    .unwrap();
    let p = &out.report.points[0];
    assert_eq!(p.bit_errors, 0);
    assert!(p.bits >= 20_000);
    assert_eq!(p.wilson_low, 0.0);
}

#[test]
fn coding_lowers_the_error_rate() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let coded = run_experiment(&baseline(a.path(), small_sweep(vec![7.0], true))).unwrap();
    let uncoded = run_experiment(&baseline(b.path(), small_sweep(vec![7.0], false))).unwrap();
    let (c, u) = (&coded.report.points[0], &uncoded.report.points[0]);
    assert!(u.bit_errors > 0);
    assert!(c.clearly_below(u), "coded {} uncoded {}", c.ber(), u.ber());
}

#[test]
fn uncoded_ber_falls_with_snr() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&baseline(
        dir.path(),
        small_sweep(vec![4.0, 8.0, 12.0], false),
    ))
    .unwrap();
    let bers: Vec<f64> = out.report.points.iter().map(|p| p.ber()).collect();
    assert!(bers.windows(2).all(|w| w[1] < w[0]), "{bers:?}");
    for p in &out.report.points {
        assert!(p.wilson_low <= p.ber() && p.ber() <= p.wilson_high);
    }
}

#[test]
fn baseline_exports_the_gray_table() {
    let dir = tempfile::tempdir().unwrap();
    let (prepared, manifest) =
        run_training(&baseline(dir.path(), small_sweep(vec![6.0], true))).unwrap();
    assert_eq!(prepared.counters.tx_weight_deployments, 0);
    let text = std::fs::read_to_string(dir.path().join("constellation.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("label_hex,re,im"));
    for (label, (line, want)) in lines.zip(gray_qam(4).unwrap()).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(usize::from_str_radix(cols[0], 16).unwrap(), label);
        let (re, im): (f64, f64) = (cols[1].parse().unwrap(), cols[2].parse().unwrap());
        assert!(
            (re - want.re).abs() < 1e-6 && (im - want.im).abs() < 1e-6,
            "label {label}"
        );
    }
    assert!(manifest
        .artifacts
        .iter()
        .any(|(p, _)| p.ends_with("constellation.csv")));
}

#[test]
fn checkpoint_reload_reproduces_the_sweep() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = baseline(a.path(), small_sweep(vec![6.0], true));
    cfg.system = SystemId::QamNnRx;
    cfg.training = tiny_training();
    let trained = run_experiment(&cfg).unwrap();
    let mut reload = cfg.clone();
    reload.out_dir = b.path().to_path_buf();
    reload.training.checkpoint = Some(a.path().join("checkpoint"));
    let loaded = run_experiment(&reload).unwrap();
    assert_eq!(trained.tx_fingerprint, loaded.tx_fingerprint);
    assert_eq!(trained.report.points, loaded.report.points);
}

#[test]
fn poorly_matched_sim_ae_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = baseline(dir.path(), small_sweep(vec![6.0], false));
    cfg.system = SystemId::SimAe;
    cfg.training = tiny_training();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.counters.tx_weight_deployments, 1);
    assert_eq!(out.report.points.len(), 1);
    assert!(dir.path().join("trace_sim.csv").is_file());
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    let out = dir.path().join("out");
    std::fs::write(
        &path,
        format!(
            "system = \"qam_baseline\"\nseed = 3\nout_dir = {:?}\n[sweep]\nsnr_db = [6.0]\nbit_budget = 10000\nmax_bits = 10000\ntarget_ber = 1e-3\ncoded = false\n",
            out.display().to_string()
        ),
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let outcome = run_experiment(&cfg).unwrap();
    assert!(out.join("ber.csv").is_file());
    assert!(outcome.report.points[0].bits >= 10_000);
}
