use std::f64::consts::PI;

use aircomm::ofdm::{convolve_stream, estimate_snr_evm, Ofdm, OfdmConfig};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cn(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    Complex64::new(s * a, s * b)
}

fn random_data(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| cn(rng, 1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn roundtrip_and_parseval(seed in any::<u64>(), symbols in 1usize..6) {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_data(&mut rng, 50 * symbols);
        let t = ofdm.modulate(&x).unwrap();
        let back = ofdm.demodulate(&t).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).norm() < 1e-9);
        }
        let body_energy: f64 = t
            .chunks(72)
            .flat_map(|s| s[8..].iter())
            .map(|v| v.norm_sqr())
            .sum();
        let data_energy: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        prop_assert!((body_energy - data_energy).abs() < 1e-9 * data_energy.max(1.0));
    }

    #[test]
    fn zero_forcing_is_idempotent_and_keeps_magnitudes(seed in any::<u64>(), rot in -PI..PI) {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_data(&mut rng, 50);
        let mut t = ofdm.modulate(&x).unwrap();
        for v in &mut t {
            *v *= Complex64::from_polar(1.0, rot);
        }
        let before = ofdm.demodulate(&t).unwrap();
        ofdm.zero_force_phase(&mut t).unwrap();
        let once = t.clone();
        let after = ofdm.demodulate(&t).unwrap();
        prop_assert!(after[0].arg().abs() < 1e-9);
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a.norm() - b.norm()).abs() < 1e-9);
        }
        for k in 1..50 {
            let d0 = (before[k] * before[0].conj()).arg();
            let d1 = (after[k] * after[0].conj()).arg();
            let diff = (d0 - d1 + PI).rem_euclid(2.0 * PI) - PI;
            prop_assert!(diff.abs() < 1e-9);
        }
        ofdm.zero_force_phase(&mut t).unwrap();
        for (a, b) in once.iter().zip(&t) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn circular_convolution_theorem() {
    let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..1000 {
        let taps_len = 1 + trial % 8;
        let taps: Vec<Complex64> = (0..taps_len).map(|_| cn(&mut rng, 1.0)).collect();
        let x = random_data(&mut rng, 150);
        let y = ofdm
            .demodulate(&convolve_stream(&ofdm.modulate(&x).unwrap(), &taps))
            .unwrap();
        let h = ofdm.tap_response(&taps);
        for (i, (yk, xk)) in y.iter().zip(&x).enumerate() {
            let err = (yk - h[i % 50] * xk).norm();
            assert!(err < 1e-6, "trial {trial}, symbol {i}: {err}");
        }
    }
}

#[test]
fn delay_gives_phase_ramp() {
    let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
    let cfg = ofdm.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_data(&mut rng, 100);
    for d in 0..=8 {
        let mut taps = vec![Complex64::default(); d + 1];
        taps[d] = Complex64::new(1.0, 0.0);
        let y = ofdm
            .demodulate(&convolve_stream(&ofdm.modulate(&x).unwrap(), &taps))
            .unwrap();
        for (i, (yk, xk)) in y.iter().zip(&x).enumerate() {
            let k = cfg.signed_bin(i % 50) as f64;
            let ramp = Complex64::from_polar(1.0, -2.0 * PI * k * d as f64 / 64.0);
            assert!((yk - ramp * xk).norm() < 1e-9);
        }
    }
}

#[test]
fn evm_snr_recovers_injected_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 50 * 400;
    let x: Vec<Complex64> = (0..n)
        .map(|_| Complex64::from_polar(1.0, rng.random_range(-PI..PI)))
        .collect();
    let xh: Vec<Complex64> = x.iter().map(|v| v + cn(&mut rng, 0.1)).collect();
    let bins: Vec<usize> = (0..n).map(|i| i % 50).collect();
    let snr = estimate_snr_evm(&x, &xh, &bins, 50).unwrap();
    let pooled = estimate_snr_evm(&x, &xh, &vec![0; n], 1).unwrap()[0];
    assert!((pooled - 10.0).abs() < 0.5, "{pooled}");
    let mean = snr.iter().sum::<f64>() / 50.0;
    assert!((mean - 10.0).abs() < 0.5, "{mean}");
}
