mod common;

use polsense::learner::{fit, loss, loss_gradient, track, OptimizerConfig};
use polsense::simulator::{generate_scenario, ScenarioConfig};
use polsense::{channel_response, ChannelParams};

use common::reference_loss;

#[test]
fn loss_matches_reference_cascade() {
    let series = generate_scenario(&ScenarioConfig::reference(51).with_snr_db(20.0).unwrap()).unwrap();
    let m = &series.measurements()[7];
    let guess = &series.ground_truth()[3];
    let ours = loss(guess, m).unwrap();
    let oracle = reference_loss(guess, m.grid().omegas(), m.matrices());
    assert!((ours - oracle).abs() <= 1e-12 * oracle);
}

#[test]
fn loss_moving_average_is_non_increasing_on_trackable_seeds() {
    let cfg = OptimizerConfig::default();
    let window = 20;
    // seeds whose k = 0 fit converges (relative response error <= 1e-3)
    for seed in [4u64, 5, 8] {
        let series = generate_scenario(&ScenarioConfig::reference(seed)).unwrap();
        let m = &series.measurements()[0];
        let res = fit(m, &ChannelParams::zeros(5, 1.0), &cfg).unwrap();
        assert!(res.final_loss / m.energy() <= 1e-3, "seed {seed}");
        let avg: Vec<f64> = res
            .losses
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        let worst_rise = avg
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst_rise <= 1e-9, "seed {seed}: moving average rose by {worst_rise:e}");
    }
}

#[test]
fn tracking_keeps_the_residual_small() {
    let series = generate_scenario(&ScenarioConfig::reference(8)).unwrap();
    let res = track(series.measurements(), &OptimizerConfig::default(), 5, 1.0).unwrap();
    for (est, m) in res.estimates.iter().zip(series.measurements()) {
        let fitted = channel_response(est, series.grid());
        let rel = polsense::response_distance(m, &fitted).unwrap() / m.energy();
        assert!(rel <= 1e-3, "{rel}");
    }
}

#[test]
fn gradient_descent_direction_lowers_the_loss() {
    let series = generate_scenario(&ScenarioConfig::reference(52)).unwrap();
    let m = &series.measurements()[0];
    let x = ChannelParams::zeros(5, 1.0).to_vec();
    let start = ChannelParams::from_vec(&x, 1.0);
    let g = loss_gradient(&start, m).unwrap();
    let step: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - 1e-4 * b).collect();
    assert!(loss(&ChannelParams::from_vec(&step, 1.0), m).unwrap() < loss(&start, m).unwrap());
}
