use std::path::Path;

use polsense::harness::{
    estimate, read_diagnostics, read_metrics, read_responses, read_trace, run_experiment,
    run_on_series, scan_nontrackable, summarize_run, sweep, Estimator, EstimatorSelection,
    ExperimentConfig, NoiseAxis, ScanThresholds,
};
use polsense::simulator::{generate_scenario, read_scenario, MeasurementSeries};
use polsense::ChannelParams;

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn every_artifact_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::reference(11);
    cfg.snr_db = Some(25.0);
    cfg.output_dir = Some(tmp.path().to_path_buf());
    let out = run_experiment(&cfg).unwrap();
    let dir = tmp.path();

    assert_eq!(
        files_in(dir),
        [
            "config.json",
            "est_isa.csv",
            "est_learn.csv",
            "health.json",
            "isa_diagnostics.csv",
            "metrics.csv",
            "residual.csv",
            "response.csv",
            "scenario.csv",
            "truth.csv",
        ]
    );

    let written: ExperimentConfig = ExperimentConfig::from_json_file(&dir.join("config.json")).unwrap();
    assert_eq!(written, out.config);
    assert!(written.scenario.noise.sigma2_z > 0.0);

    let scenario = read_scenario(&dir.join("scenario.csv")).unwrap();
    assert_eq!(scenario, out.series);

    let grid = out.series.grid();
    assert_eq!(read_trace(&dir.join("truth.csv"), 1.0).unwrap(), out.series.ground_truth());
    assert_eq!(read_responses(&dir.join("response.csv"), grid).unwrap(), out.series.measurements());
    for est in &out.estimates {
        let path = dir.join(format!("est_{}.csv", est.estimator));
        assert_eq!(read_trace(&path, 1.0).unwrap(), est.estimates);
    }
    let isa = out.get(Estimator::Isa).unwrap().0;
    assert_eq!(
        read_diagnostics(&dir.join("isa_diagnostics.csv")).unwrap(),
        *isa.peel_diagnostics.as_ref().unwrap()
    );

    let metrics = read_metrics(&dir.join("metrics.csv"), &dir.join("residual.csv")).unwrap();
    assert_eq!(metrics.len(), out.estimates.len());
    for ((name, report, losses), (est, expected)) in metrics.iter().zip(out.estimates.iter().zip(&out.metrics)) {
        assert_eq!(*name, est.estimator);
        assert_eq!(report, expected);
        assert_eq!(losses, &est.final_losses);
    }
}

#[test]
fn csv_headers_are_fixed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::reference(12);
    cfg.estimator = EstimatorSelection::Isa;
    cfg.output_dir = Some(tmp.path().to_path_buf());
    run_experiment(&cfg).unwrap();
    let header = |name: &str| {
        std::fs::read_to_string(tmp.path().join(name))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header("truth.csv"), "k,n,gamma,phi,psi,abs_cos_phi");
    assert_eq!(header("est_isa.csv"), "k,n,gamma,phi,psi,abs_cos_phi");
    assert_eq!(
        header("response.csv"),
        "k,i,h11_re,h11_im,h12_re,h12_im,h21_re,h21_im,h22_re,h22_im"
    );
    assert_eq!(header("metrics.csv"), "estimator,n,tracking_error,window_variation,verdict,margin");
}

#[test]
fn estimators_see_only_measurements() {
    let cfg = ExperimentConfig::reference(13);
    let series = generate_scenario(&cfg.scenario).unwrap();
    let bogus_truth = vec![ChannelParams::zeros(5, 1.0); series.len()];
    let blinded = MeasurementSeries::new(
        series.grid().clone(),
        series.measurements().to_vec(),
        bogus_truth,
    )
    .unwrap();

    let honest = run_on_series(&cfg, series).unwrap();
    let swapped = run_on_series(&cfg, blinded).unwrap();
    assert_eq!(honest.estimates, swapped.estimates);
    // Only the evaluation differs.
    assert_ne!(honest.metrics, swapped.metrics);

    for e in [Estimator::Isa, Estimator::Learn] {
        let direct = estimate(e, honest.series.measurements(), 5, 1.0, &cfg.optimizer).unwrap();
        assert_eq!(Some(&direct), honest.estimates.iter().find(|x| x.estimator == e));
    }
}

#[test]
fn noiseless_isa_tracks_exactly() {
    let mut cfg = ExperimentConfig::reference(14);
    cfg.estimator = EstimatorSelection::Isa;
    let out = run_experiment(&cfg).unwrap();
    assert!(!out.health.degenerate);
    let m = &out.metrics[0];
    assert!(m.tracking_error.iter().all(|e| *e <= 1e-6), "{:?}", m.tracking_error);
    assert_eq!(m.verdict, Some(2));
}

#[test]
fn noiseless_reference_both_estimators_localize_section_two() {
    let out = run_experiment(&ExperimentConfig::reference(15)).unwrap();
    for m in &out.metrics {
        assert_eq!(m.verdict, Some(2));
        assert!(m.margin > 0.0);
    }
}

#[test]
fn noise_degrades_isa_but_not_the_learner() {
    let clean = run_experiment(&ExperimentConfig::reference(15)).unwrap();
    let mut cfg = ExperimentConfig::reference(15);
    cfg.snr_db = Some(20.0);
    let noisy = run_experiment(&cfg).unwrap();

    let (_, learn) = noisy.get(Estimator::Learn).unwrap();
    assert_eq!(learn.verdict, Some(2));
    let (_, isa_clean) = clean.get(Estimator::Isa).unwrap();
    let (_, isa_noisy) = noisy.get(Estimator::Isa).unwrap();
    assert!(
        isa_noisy.verdict != Some(2) || isa_noisy.margin < isa_clean.margin,
        "ISA margin {} (noisy) vs {} (clean)",
        isa_noisy.margin,
        isa_clean.margin
    );
}

#[test]
fn single_seed_sweep_matches_run_experiment() {
    let template = ExperimentConfig::reference(16);
    let report = sweep(&template, &NoiseAxis::Sigma2(vec![0.002]), &[16]).unwrap();
    let mut cfg = template.clone();
    cfg.scenario.noise.sigma2_z = 0.002;
    let single = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs, summarize_run(&single, 0.002));
    for (agg, run) in report.aggregate.iter().zip(&report.runs) {
        assert_eq!(agg.runs, 1);
        assert_eq!(agg.successes, usize::from(run.success));
        assert_eq!(agg.median_tracking_error, run.mean_tracking_error);
    }
}

#[test]
fn sweep_writes_aggregate_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut template = ExperimentConfig::reference(0);
    template.estimator = EstimatorSelection::Isa;
    template.output_dir = Some(tmp.path().to_path_buf());
    let report = sweep(&template, &NoiseAxis::SnrDb(vec![30.0, 10.0]), &[1, 2, 3]).unwrap();
    assert_eq!(report.runs.len(), 6);
    assert_eq!(report.aggregate.len(), 2);
    let text = std::fs::read_to_string(tmp.path().join("sweep_aggregate.csv")).unwrap();
    assert!(text.starts_with(
        "noise_axis,noise_value,estimator,runs,degenerate,successes,success_rate,median_tracking_error"
    ));
    assert!(tmp.path().join("sweep_runs.csv").exists());
}

#[test]
fn noiseless_sweep_localizes_on_generic_seeds() {
    let seeds: Vec<u64> = (100..120).collect();
    let report = sweep(&ExperimentConfig::reference(0), &NoiseAxis::Sigma2(vec![0.0]), &seeds).unwrap();
    for agg in &report.aggregate {
        assert!(agg.success_rate >= 0.95, "{agg:?}");
    }
}

#[test]
fn isa_success_falls_with_noise() {
    let mut template = ExperimentConfig::reference(0);
    template.estimator = EstimatorSelection::Isa;
    let seeds: Vec<u64> = (200..230).collect();
    let report = sweep(&template, &NoiseAxis::SnrDb(vec![40.0, 25.0, 15.0, 5.0]), &seeds).unwrap();
    let rates: Vec<f64> = report.aggregate.iter().map(|a| a.success_rate).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    assert!(rates[3] < rates[0], "{rates:?}");
}

#[test]
fn scenario_mismatch_is_rejected() {
    let series = generate_scenario(&ExperimentConfig::reference(1).scenario).unwrap();
    let mut cfg = ExperimentConfig::reference(1);
    cfg.scenario.horizon = 40;
    cfg.scenario.perturbation = polsense::simulator::PerturbationProfile::quiet(5, 40);
    cfg.metric_window = [15, 35];
    assert!(run_on_series(&cfg, series).is_err());
}

#[test]
fn curated_nontrackable_seeds_are_flagged() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/nontrackable_seeds.csv"))
        .unwrap();
    let seeds: Vec<u64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!seeds.is_empty());
    let rows = scan_nontrackable(&ExperimentConfig::reference(0), &seeds, ScanThresholds::default()).unwrap();
    assert!(rows.iter().all(|r| r.nontrackable), "{rows:?}");
}

#[test]
fn reduced_model_runs_end_to_end() {
    let mut cfg = ExperimentConfig::reference(17);
    cfg.estimator = EstimatorSelection::Learn;
    cfg.optimizer.model_sections = Some(3);
    cfg.optimizer.track_iterations = 20;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.estimates[0].estimates[0].len(), 3);
    assert!(out.metrics[0].tracking_error.is_empty());
    assert!(out.metrics[0].verdict.is_none_or(|v| (1..=3).contains(&v)));
}

#[test]
fn abs_cos_traces_are_bounded() {
    let mut cfg = ExperimentConfig::reference(18);
    cfg.snr_db = Some(5.0);
    let out = run_experiment(&cfg).unwrap();
    for est in &out.estimates {
        for trace in est.abs_cos_traces() {
            assert!(trace.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
