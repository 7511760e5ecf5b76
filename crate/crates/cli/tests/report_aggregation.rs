use bayesdice_cli::config::ExperimentConfig;
use bayesdice_cli::experiment::{write_coverage_csv, write_selection_csv};
use bayesdice_cli::report::summarize_reader;
use bayesdice_cli::{run_coverage, run_selection, Method};

#[test]
fn coverage_summary_matches_direct_counts() {
    let mut cfg = ExperimentConfig::bandit_coverage(0.9, 100, 6);
    cfg.methods = vec![Method::WisT, Method::WisBernstein];
    let rows = run_coverage(&cfg).unwrap();
    let mut buf = Vec::new();
    write_coverage_csv(&rows, &mut buf).unwrap();
    let summary = summarize_reader(buf.as_slice()).unwrap();
    assert_eq!(summary.groups.len(), 2 * cfg.confidence_levels.len());
    for g in &summary.groups {
        let mine: Vec<_> =
            rows.iter().filter(|r| r.method.name() == g.key[0] && r.confidence.to_string() == g.key[3]).collect();
        assert_eq!(g.trials, 6);
        let covered = mine.iter().filter(|r| r.covered).count() as f64 / 6.0;
        assert!((g.primary - covered).abs() < 1e-15);
        let mut logs: Vec<f64> = mine.iter().map(|r| (r.hi - r.lo).ln()).collect();
        logs.sort_by(f64::total_cmp);
        assert!((g.secondary - (logs[2] + logs[3]) / 2.0).abs() < 1e-9);
    }
}

#[test]
fn selection_summary_is_mean_and_standard_error() {
    let mut cfg = ExperimentConfig::bandit_selection(100, 5);
    cfg.methods = vec![Method::MeanRank, Method::Oracle];
    cfg.bayesdice.steps = 300;
    cfg.num_draws = 500;
    let rows = run_selection(&cfg).unwrap();
    let mut buf = Vec::new();
    write_selection_csv(&rows, &mut buf).unwrap();
    let summary = summarize_reader(buf.as_slice()).unwrap();
    assert_eq!(summary.groups.len(), 2);
    for g in &summary.groups {
        let v: Vec<f64> = rows.iter().filter(|r| r.method.name() == g.key[0]).map(|r| r.value).collect();
        let mean = v.iter().sum::<f64>() / 5.0;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((g.primary - mean).abs() < 1e-12);
        assert!((g.secondary - sd / 5f64.sqrt()).abs() < 1e-12);
    }
}
