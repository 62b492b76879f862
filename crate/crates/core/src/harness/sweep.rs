//! Monte-Carlo BER sweeps over the link with iterative demapping and decoding.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SweepSpec;
use crate::autoencoder::Transmitter;
use crate::error::{Error, Result};
use crate::ldpc::{hard_decisions, idd_loop, BpDecoder, Encoder, ParityCheck, SoftDemapper};
use crate::link::{Link, CALIBRATION_SYMBOLS};

/// Normal quantile of the two-sided 95% Wilson interval.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Codewords sent per channel use; keeps OFDM padding small.
const CODEWORDS_PER_BURST: usize = 25;

/// Wilson score interval `(low, high)` for `errors` out of `trials`.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let radius = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if errors == 0 {
        0.0
    } else {
        (centre - radius).max(0.0)
    };
    let high = if errors >= trials {
        1.0
    } else {
        (centre + radius).min(1.0)
    };
    (low, high)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    /// Information bits compared (all bits when uncoded).
    pub bits: u64,
    pub bit_errors: u64,
    pub codewords: u64,
    pub codeword_errors: u64,
    /// Mean IDD iterations run per codeword.
    pub mean_iterations: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits as f64
        }
    }

    /// Half-width of the Wilson interval.
    pub fn radius(&self) -> f64 {
        (self.wilson_high - self.wilson_low) / 2.0
    }

    /// True when the two intervals do not overlap and this point is lower.
    pub fn clearly_below(&self, other: &BerPoint) -> bool {
        self.wilson_high < other.wilson_low
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BerReport {
    pub system: String,
    pub points: Vec<BerPoint>,
}

impl BerReport {
    /// CSV with columns
    /// `snr_db,bits,bit_errors,ber,wilson_low,wilson_high,radius,codewords,codeword_errors,mean_iterations`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "snr_db,bits,bit_errors,ber,wilson_low,wilson_high,radius,codewords,codeword_errors,mean_iterations"
        )?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{},{},{:.4}",
                p.snr_db,
                p.bits,
                p.bit_errors,
                p.ber(),
                p.wilson_low,
                p.wilson_high,
                p.radius(),
                p.codewords,
                p.codeword_errors,
                p.mean_iterations
            )?;
        }
        Ok(())
    }

    pub fn point(&self, snr_db: f64) -> Option<&BerPoint> {
        self.points.iter().find(|p| p.snr_db == snr_db)
    }
}

/// BER of `tx` and `demapper` over `link` at each SNR of `spec`.
///
/// Each point calibrates the per-bin EVM SNR on a burst of the deployed
/// constellation, then sends codewords until both the bit budget and the
/// codeword-error target are met, or the bit cap is reached. SNR point `i`
/// draws from stream `i` of `seed`, so systems evaluated with the same seed
/// see the same information bits.
pub fn ber_sweep<D>(
    system: &str,
    tx: &Transmitter<f32>,
    demapper: &D,
    link: &Link,
    code: &ParityCheck,
    spec: &SweepSpec,
    seed: u64,
) -> Result<BerReport>
where
    D: SoftDemapper + Sync + ?Sized,
{
    spec.validate()?;
    let m = demapper.bits_per_symbol();
    if tx.bits_per_symbol() != m {
        return Err(Error::InvalidArgument(format!(
            "transmitter sends {} bits per symbol, demapper expects {m}",
            tx.bits_per_symbol()
        )));
    }
    if !code.n().is_multiple_of(m) {
        return Err(Error::InvalidArgument(format!(
            "codeword length {} is not a multiple of {m}",
            code.n()
        )));
    }
    let points = tx.points_by_label()?;
    let encoder = Encoder::new(code);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<BerPoint>>>> =
        Mutex::new((0..spec.snr_db.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..spec.threads.min(spec.snr_db.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= spec.snr_db.len() {
                    break;
                }
                let snr = spec.snr_db[i];
                let snr_opt = snr.is_finite().then_some(snr);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let point = sweep_point(
                    &link.with_snr(snr_opt),
                    &points,
                    tx,
                    demapper,
                    code,
                    &encoder,
                    spec,
                    snr,
                    &mut rng,
                );
                results.lock().expect("sweep worker panicked")[i] = Some(point);
            });
        }
    });
    let points = results
        .into_inner()
        .expect("sweep worker panicked")
        .into_iter()
        .map(|r| r.expect("every SNR point is evaluated"))
        .collect::<Result<Vec<_>>>()?;
    Ok(BerReport {
        system: system.to_string(),
        points,
    })
}

#[allow(clippy::too_many_arguments)]
fn sweep_point<D: SoftDemapper + ?Sized>(
    link: &Link,
    points: &[Complex64],
    tx: &Transmitter<f32>,
    demapper: &D,
    code: &ParityCheck,
    encoder: &Encoder,
    spec: &SweepSpec,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BerPoint> {
    let m = demapper.bits_per_symbol();
    let n = code.n();
    let per_bin = link.calibrate(points, CALIBRATION_SYMBOLS, rng)?;
    let mut decoder = BpDecoder::new(code);
    let info_len = if spec.coded { encoder.k() } else { n };
    let (mut bits, mut bit_errors, mut codewords, mut cw_errors, mut iterations) =
        (0u64, 0u64, 0u64, 0u64, 0u64);
    let cap = spec.bit_cap();
    let done = |bits: u64, cw_errors: u64| {
        bits >= cap || (bits >= spec.bit_budget && cw_errors >= spec.min_codeword_errors)
    };
    let mut llr = vec![0.0; n];
    let zero_prior = vec![0.0; n];
    while !done(bits, cw_errors) {
        let mut infos = Vec::with_capacity(CODEWORDS_PER_BURST);
        let mut sent = Vec::with_capacity(CODEWORDS_PER_BURST * n);
        for _ in 0..CODEWORDS_PER_BURST {
            let info: Vec<u8> = (0..info_len).map(|_| rng.random_range(0..2u8)).collect();
            if spec.coded {
                sent.extend(encoder.encode(&info)?);
            } else {
                sent.extend_from_slice(&info);
            }
            infos.push(info);
        }
        let x = tx.map_bits(&sent)?;
        let y = link.transmit(&x, points, rng)?;
        let snr = link.per_symbol_snr(&per_bin, y.len());
        let symbols = n / m;
        for (c, info) in infos.iter().enumerate() {
            if done(bits, cw_errors) {
                break;
            }
            let r = c * symbols..(c + 1) * symbols;
            let decided = if spec.coded {
                let out = idd_loop(
                    &y[r.clone()],
                    &snr[r],
                    demapper,
                    code,
                    &mut decoder,
                    spec.n_idd,
                    spec.bp_iters,
                )?;
                iterations += out.iterations as u64;
                encoder.extract_info(&out.hard_decisions())
            } else {
                demapper.demap(&y[r.clone()], &snr[r], &zero_prior, &mut llr)?;
                iterations += 1;
                hard_decisions(&llr)
            };
            let errors = decided.iter().zip(info).filter(|(a, b)| a != b).count() as u64;
            bits += info.len() as u64;
            bit_errors += errors;
            codewords += 1;
            cw_errors += u64::from(errors > 0);
        }
    }
    let (wilson_low, wilson_high) = wilson_interval(bit_errors, bits, WILSON_Z);
    Ok(BerPoint {
        snr_db,
        bits,
        bit_errors,
        codewords,
        codeword_errors: cw_errors,
        mean_iterations: iterations as f64 / codewords.max(1) as f64,
        wilson_low,
        wilson_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_brackets_the_estimate() {
        let (lo, hi) = wilson_interval(10, 1000, WILSON_Z);
        assert!(lo < 0.01 && hi > 0.01);
        // reference values from an independent Wilson implementation
        assert!((lo - 0.0054408).abs() < 1e-6, "{lo}");
        assert!((hi - 0.0183095).abs() < 1e-6, "{hi}");
        let (lo, hi) = wilson_interval(0, 1000, WILSON_Z);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.0038268).abs() < 1e-6, "{hi}");
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let report = BerReport {
            system: "x".into(),
            points: vec![BerPoint {
                snr_db: 3.0,
                bits: 100,
                bit_errors: 5,
                codewords: 1,
                codeword_errors: 1,
                mean_iterations: 4.0,
                wilson_low: 0.02,
                wilson_high: 0.11,
            }],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("3,100,5,5.000000e-2,"));
    }
}
