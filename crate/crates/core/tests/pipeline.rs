use lessvfl_core::config::{ExperimentConfig, Method};
use lessvfl_core::data::{save_csv, synth_generate, SyntheticSpec};
use lessvfl_core::experiment::{read_report, run_experiment, write_reports};
use lessvfl_core::protocol::Phase;

fn csv_config(path: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        r#"
        seed = 3
        methods = ["vfl_original", "vfl_spurious", "less_vfl"]

        [data.csv]
        path = "{}"
        label_column = "y"

        [data]
        spurious_ratio = 0.5

        [partition.scheme.even_contiguous]
        parties = 2

        [model]
        loss = "squared_error"

        [training]
        epochs = 6
        batch_size = 64

        [less_vfl]
        pretrain_epochs = 2
        stage2_epochs = 3
        stage3_epochs = 3
        party_lambda = 0.05
        server_lambda = 0.01
        "#,
        path.display()
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

#[test]
fn csv_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::regression(1, 6, 0);
    spec.samples = 300;
    let (ds, _) = synth_generate(&spec, 11).unwrap();
    let csv = dir.path().join("data.csv");
    save_csv(&ds, &csv).unwrap();

    let cfg = csv_config(&csv);
    let records = run_experiment(&cfg).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert!(r.error.is_none(), "{:?}: {:?}", r.method, r.error);
        // Six original columns plus three injected noise columns.
        let expected = if r.method == Method::VflOriginal { 6 } else { 9 };
        assert_eq!(r.spurious_flags.len(), expected);
        assert_eq!(r.columns.len(), 2);
        assert!(r.series.iter().all(|p| p.test_loss.is_finite()));
    }

    let less = records.iter().find(|r| r.method == Method::LessVfl).unwrap();
    let phases: Vec<Phase> = less.series.iter().map(|p| p.phase).collect();
    for ph in [Phase::Pretrain, Phase::Stage2Upload, Phase::Stage3, Phase::PostFs] {
        assert!(phases.contains(&ph), "missing {ph:?}");
    }
    let mb: Vec<f64> = less.series.iter().map(|p| p.cumulative_mb).collect();
    assert!(mb.windows(2).all(|w| w[0] <= w[1]));

    let out = dir.path().join("runs");
    write_reports(&out, &records).unwrap();
    let back = read_report(&out.join("less_vfl").join("report.json")).unwrap();
    assert_eq!(&back, less);
    let series = std::fs::read_to_string(out.join("less_vfl").join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), less.series.len() + 1);
}

#[test]
fn seed_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SyntheticSpec::regression(1, 4, 0);
    spec.samples = 200;
    let (ds, _) = synth_generate(&spec, 1).unwrap();
    let csv = dir.path().join("data.csv");
    save_csv(&ds, &csv).unwrap();
    let mut cfg = csv_config(&csv);
    cfg.methods = vec![Method::VflSpurious];
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    cfg.seed = 4;
    let c = run_experiment(&cfg).unwrap();
    assert_eq!(a[0].series, b[0].series);
    assert_ne!(a[0].series, c[0].series);
}
