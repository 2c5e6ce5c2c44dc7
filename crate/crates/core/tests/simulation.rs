mod common;

use polsense::simulator::{
    evolve, generate_scenario, substream, write_scenario, PerturbationProfile, ScenarioConfig,
};
use polsense::ChannelParams;

use common::{cascade, frob_sq};

#[test]
fn noiseless_measurements_match_reference_cascade() {
    let series = generate_scenario(&ScenarioConfig::reference(31)).unwrap();
    for (theta, h) in series.ground_truth().iter().zip(series.measurements()) {
        for (m, &w) in h.matrices().iter().zip(series.grid().omegas()) {
            assert!(frob_sq(&m.m, &cascade(&theta.sections, w, 1.0)) < 1e-26);
        }
    }
}

#[test]
fn walk_is_a_martingale_with_independent_increments() {
    let (n, k) = (2, 3);
    let mut profile = PerturbationProfile::quiet(n, k);
    for kk in 1..=k {
        profile.sigma2[0][kk] = 0.2;
        profile.rho2[1][kk] = 0.2;
    }
    let draws = 100_000;
    let mut rng = substream(41, 0);
    let (mut mean1, mut mean2, mut cross, mut var1) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let start = ChannelParams::zeros(n, 1.0);
        let a = evolve(&start, &profile, 1, &mut rng);
        let b = evolve(&a, &profile, 2, &mut rng);
        let d1 = a.sections[0].phi;
        let d2 = b.sections[0].phi - a.sections[0].phi;
        mean1 += d1;
        mean2 += d2;
        cross += d1 * d2;
        var1 += d1 * d1;
        // sections/angles with zero variance never move
        assert_eq!(b.sections[1].phi, 0.0);
        assert_eq!(b.sections[0].psi, 0.0);
    }
    let nf = draws as f64;
    let sd = (0.2f64 / nf).sqrt();
    assert!((mean1 / nf).abs() < 5.0 * sd);
    assert!((mean2 / nf).abs() < 5.0 * sd);
    // correlation of consecutive increments
    assert!((cross / nf / (var1 / nf)).abs() <= 0.02);
}

#[test]
fn noise_streams_do_not_touch_the_trajectory() {
    let clean = generate_scenario(&ScenarioConfig::reference(42)).unwrap();
    let noisy = generate_scenario(&ScenarioConfig::reference(42).with_snr_db(10.0).unwrap()).unwrap();
    assert_eq!(clean.ground_truth(), noisy.ground_truth());
    assert_ne!(clean.measurements(), noisy.measurements());
}

#[test]
fn noise_is_uncorrelated_across_time_steps() {
    let mut cfg = ScenarioConfig::reference(43);
    cfg.perturbation = PerturbationProfile::quiet(5, 2000);
    cfg.horizon = 2000;
    cfg.noise.sigma2_z = 1.0;
    let series = generate_scenario(&cfg).unwrap();
    let clean = &polsense::channel_response(&series.ground_truth()[0], series.grid());
    let z: Vec<_> = series
        .measurements()
        .iter()
        .map(|m| m.matrices()[0].a11() - clean.matrices()[0].a11())
        .collect();
    let lag1: polsense::C64 = z.windows(2).map(|w| w[1] * w[0].conj()).sum();
    let power: f64 = z.iter().map(|x| x.norm_sqr()).sum();
    assert!(lag1.norm() / power < 0.1);
}

#[test]
fn generation_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig::reference(44).with_snr_db(15.0).unwrap();
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    write_scenario(&a, &generate_scenario(&cfg).unwrap()).unwrap();
    write_scenario(&b, &generate_scenario(&cfg).unwrap()).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}
