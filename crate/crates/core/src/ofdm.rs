//! OFDM channel interface: grid mapping, unitary IFFT/FFT with cyclic prefix,
//! per-bin MMSE equalisation, EVM-based SNR estimation and phase zero-forcing.
//!
//! Used bins are `-25..=-1, 1..=25` in ascending frequency order; the grid is
//! filled row-major, one OFDM symbol after another.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Estimated SNR when the error vector is exactly zero.
pub const SNR_CAP_DB: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OfdmConfig {
    pub n_fft: usize,
    pub cp_len: usize,
    /// FFT bin indices (`0..n_fft`) of the used subcarriers, in grid order.
    pub used_bins: Vec<usize>,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        let n_fft = 64;
        let used_bins = (-25i32..=25)
            .filter(|&k| k != 0)
            .map(|k| k.rem_euclid(n_fft as i32) as usize)
            .collect();
        Self {
            n_fft,
            cp_len: n_fft / 8,
            used_bins,
        }
    }
}

impl OfdmConfig {
    /// Samples per OFDM symbol including the prefix.
    pub fn symbol_len(&self) -> usize {
        self.n_fft + self.cp_len
    }

    pub fn n_used(&self) -> usize {
        self.used_bins.len()
    }

    /// Signed frequency index of a used bin.
    pub fn signed_bin(&self, used: usize) -> i64 {
        let b = self.used_bins[used] as i64;
        if b >= (self.n_fft / 2) as i64 {
            b - self.n_fft as i64
        } else {
            b
        }
    }

    /// OFDM symbols needed to carry `symbols` data symbols.
    pub fn symbols_for(&self, symbols: usize) -> usize {
        symbols.div_ceil(self.n_used())
    }
}

/// Modulator/demodulator with cached FFT plans.
#[derive(Clone)]
pub struct Ofdm {
    cfg: OfdmConfig,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Ofdm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ofdm").field("cfg", &self.cfg).finish()
    }
}

impl Ofdm {
    pub fn new(cfg: OfdmConfig) -> Result<Self> {
        if cfg.used_bins.iter().any(|&b| b >= cfg.n_fft) || cfg.cp_len > cfg.n_fft {
            return Err(Error::InvalidArgument(format!(
                "inconsistent OFDM config {cfg:?}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft: planner.plan_fft_forward(cfg.n_fft),
            ifft: planner.plan_fft_inverse(cfg.n_fft),
            cfg,
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Maps `n_used` symbols per OFDM symbol onto the used bins, applies a
    /// unitary IFFT and prepends the cyclic prefix.
    pub fn modulate(&self, data: &[Complex64]) -> Result<Vec<Complex64>> {
        let (nu, nf, cp) = (self.cfg.n_used(), self.cfg.n_fft, self.cfg.cp_len);
        if !data.len().is_multiple_of(nu) {
            return Err(Error::InvalidArgument(format!(
                "{} data symbols is not a multiple of {nu}",
                data.len()
            )));
        }
        let scale = 1.0 / (nf as f64).sqrt();
        let mut out = Vec::with_capacity(data.len() / nu * self.cfg.symbol_len());
        let mut buf = vec![Complex64::default(); nf];
        for sym in data.chunks_exact(nu) {
            buf.fill(Complex64::default());
            for (&b, &x) in self.cfg.used_bins.iter().zip(sym) {
                buf[b] = x;
            }
            self.ifft.process(&mut buf);
            out.extend(buf[nf - cp..].iter().map(|v| v * scale));
            out.extend(buf.iter().map(|v| v * scale));
        }
        Ok(out)
    }

    /// Strips the prefix, applies a unitary FFT and returns the used bins.
    pub fn demodulate(&self, time: &[Complex64]) -> Result<Vec<Complex64>> {
        let bins = self.demodulate_all_bins(time)?;
        let nf = self.cfg.n_fft;
        Ok(bins
            .chunks_exact(nf)
            .flat_map(|s| self.cfg.used_bins.iter().map(move |&b| s[b]))
            .collect())
    }

    /// Like [`Ofdm::demodulate`] but returns all `n_fft` bins per symbol.
    pub fn demodulate_all_bins(&self, time: &[Complex64]) -> Result<Vec<Complex64>> {
        let (nf, cp, sl) = (self.cfg.n_fft, self.cfg.cp_len, self.cfg.symbol_len());
        if !time.len().is_multiple_of(sl) {
            return Err(Error::InvalidArgument(format!(
                "{} samples is not a multiple of the symbol length {sl}",
                time.len()
            )));
        }
        let scale = 1.0 / (nf as f64).sqrt();
        let mut out = Vec::with_capacity(time.len() / sl * nf);
        for sym in time.chunks_exact(sl) {
            let mut buf: Vec<Complex64> = sym[cp..].iter().map(|v| v * scale).collect();
            self.fft.process(&mut buf);
            out.extend(buf);
        }
        Ok(out)
    }

    /// Rotates one time-domain OFDM symbol so that its first used bin has
    /// zero phase. Returns the removed phase. A first bin below 1e-12 of the
    /// symbol's RMS amplitude counts as empty.
    pub fn zero_force_phase(&self, symbol: &mut [Complex64]) -> Result<f64> {
        let sl = self.cfg.symbol_len();
        if symbol.len() != sl {
            return Err(Error::Length {
                what: "OFDM symbol",
                expected: sl,
                got: symbol.len(),
            });
        }
        let first = self.first_used_bin(symbol);
        let energy: f64 = symbol.iter().map(|v| v.norm_sqr()).sum();
        if first.norm() <= 1e-12 * energy.sqrt() || first.norm() == 0.0 {
            return Err(Error::InvalidArgument(
                "first used subcarrier has zero magnitude".into(),
            ));
        }
        let phase = first.arg();
        let rot = Complex64::from_polar(1.0, -phase);
        for v in symbol.iter_mut() {
            *v *= rot;
        }
        Ok(phase)
    }

    /// Value of the first used bin of one time-domain symbol (single DFT term).
    fn first_used_bin(&self, symbol: &[Complex64]) -> Complex64 {
        let (nf, cp) = (self.cfg.n_fft, self.cfg.cp_len);
        let b = self.cfg.used_bins[0] as f64;
        let scale = 1.0 / (nf as f64).sqrt();
        symbol[cp..]
            .iter()
            .enumerate()
            .map(|(t, &v)| v * Complex64::from_polar(scale, -2.0 * PI * b * t as f64 / nf as f64))
            .sum()
    }

    /// Per-used-bin frequency response of a tap vector (DFT at the used bins).
    pub fn tap_response(&self, taps: &[Complex64]) -> Vec<Complex64> {
        let nf = self.cfg.n_fft as f64;
        self.cfg
            .used_bins
            .iter()
            .map(|&b| {
                taps.iter()
                    .enumerate()
                    .map(|(d, &h)| {
                        h * Complex64::from_polar(1.0, -2.0 * PI * b as f64 * d as f64 / nf)
                    })
                    .sum()
            })
            .collect()
    }
}

/// Per-bin statistics of `y_k / x_k` over paired OFDM symbols.
///
/// Phases are circular means; `std_phase` is the circular standard
/// deviation `sqrt(-2 ln R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseStats {
    pub mean_mag: Vec<f64>,
    pub std_mag: Vec<f64>,
    pub mean_phase: Vec<f64>,
    pub std_phase: Vec<f64>,
    pub samples: Vec<usize>,
    /// Bin samples skipped because `|x_k|` fell below the floor.
    pub skipped: usize,
}

/// Wraps an angle difference into `(-pi, pi]`.
pub fn wrap_phase(d: f64) -> f64 {
    let w = (d + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

impl ResponseStats {
    /// Largest relative magnitude error and largest absolute phase error
    /// (radians) of `self` against `reference`, over all bins.
    pub fn max_errors(&self, reference: &ResponseStats) -> (f64, f64) {
        let mag = self
            .mean_mag
            .iter()
            .zip(&reference.mean_mag)
            .map(|(a, r)| (a - r).abs() / r.abs().max(1e-12))
            .fold(0.0, f64::max);
        let phase = self
            .mean_phase
            .iter()
            .zip(&reference.mean_phase)
            .map(|(a, r)| wrap_phase(a - r).abs())
            .fold(0.0, f64::max);
        (mag, phase)
    }

    /// CSV with columns `bin,mean_mag,std_mag,mean_phase,std_phase,samples`.
    pub fn write_csv<W: std::io::Write>(&self, cfg: &OfdmConfig, mut w: W) -> Result<()> {
        writeln!(w, "bin,mean_mag,std_mag,mean_phase,std_phase,samples")?;
        for k in 0..self.mean_mag.len() {
            writeln!(
                w,
                "{},{:.9},{:.9},{:.9},{:.9},{}",
                cfg.signed_bin(k),
                self.mean_mag[k],
                self.std_mag[k],
                self.mean_phase[k],
                self.std_phase[k],
                self.samples[k]
            )?;
        }
        Ok(())
    }
}

impl Ofdm {
    /// Response statistics from paired time-domain streams of whole symbols.
    pub fn response_stats(
        &self,
        x_time: &[Complex64],
        y_time: &[Complex64],
        floor: f64,
    ) -> Result<ResponseStats> {
        if x_time.len() != y_time.len() {
            return Err(Error::InvalidArgument(format!(
                "paired streams differ in length: {} vs {}",
                x_time.len(),
                y_time.len()
            )));
        }
        let xf = self.demodulate(x_time)?;
        let yf = self.demodulate(y_time)?;
        let nu = self.cfg.n_used();
        let mut sum = vec![0.0; nu];
        let mut sum_sq = vec![0.0; nu];
        let mut phasor = vec![Complex64::default(); nu];
        let mut samples = vec![0usize; nu];
        let mut skipped = 0;
        for (i, (x, y)) in xf.iter().zip(&yf).enumerate() {
            let k = i % nu;
            if x.norm() < floor {
                skipped += 1;
                continue;
            }
            let r = y / x;
            let mag = r.norm();
            sum[k] += mag;
            sum_sq[k] += mag * mag;
            if mag > 0.0 {
                phasor[k] += r / mag;
            }
            samples[k] += 1;
        }
        let mut out = ResponseStats {
            mean_mag: vec![0.0; nu],
            std_mag: vec![0.0; nu],
            mean_phase: vec![0.0; nu],
            std_phase: vec![0.0; nu],
            samples,
            skipped,
        };
        for k in 0..nu {
            let n = out.samples[k] as f64;
            if n == 0.0 {
                continue;
            }
            let mean = sum[k] / n;
            out.mean_mag[k] = mean;
            out.std_mag[k] = (sum_sq[k] / n - mean * mean).max(0.0).sqrt();
            out.mean_phase[k] = phasor[k].arg();
            let r = (phasor[k].norm() / n).clamp(1e-300, 1.0);
            out.std_phase[k] = (-2.0 * r.ln()).sqrt();
        }
        Ok(out)
    }
}

/// `conj(h) y / (|h|^2 + noise_var)`.
pub fn mmse_equalize(y: Complex64, h: Complex64, noise_var: f64) -> Result<Complex64> {
    if noise_var < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "negative noise variance {noise_var}"
        )));
    }
    let den = h.norm_sqr() + noise_var;
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "MMSE equalisation undefined for h = 0 with zero noise".into(),
        ));
    }
    Ok(h.conj() * y / den)
}

/// Per-bin SNR (linear): `mean |x|^2 / mean |x - x_hat|^2` over the symbols
/// of each bin. `bin_of[i]` assigns symbol `i` to a bin in `0..n_bins`.
pub fn estimate_snr_evm(
    sent: &[Complex64],
    equalized: &[Complex64],
    bin_of: &[usize],
    n_bins: usize,
) -> Result<Vec<f64>> {
    if sent.len() != equalized.len() || sent.len() != bin_of.len() {
        return Err(Error::InvalidArgument(format!(
            "lengths differ: sent {}, equalized {}, bins {}",
            sent.len(),
            equalized.len(),
            bin_of.len()
        )));
    }
    let mut sig = vec![0.0; n_bins];
    let mut err = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for ((x, xh), &b) in sent.iter().zip(equalized).zip(bin_of) {
        if b >= n_bins {
            return Err(Error::InvalidArgument(format!(
                "bin {b} out of range {n_bins}"
            )));
        }
        sig[b] += x.norm_sqr();
        err[b] += (x - xh).norm_sqr();
        count[b] += 1;
    }
    if let Some(b) = count.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("bin {b} has no symbols")));
    }
    let cap = 10f64.powf(SNR_CAP_DB / 10.0);
    Ok(sig
        .iter()
        .zip(&err)
        .map(|(&s, &e)| if e == 0.0 { cap } else { (s / e).min(cap) })
        .collect())
}

/// Row-major placement of data symbols on the used-bin grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFrame {
    /// `n_symbols * n_used` bin values.
    pub data: Vec<Complex64>,
    pub n_symbols: usize,
    /// Number of payload symbols; the rest is padding.
    pub payload: usize,
}

impl GridFrame {
    /// Used-bin index (grid column) of payload symbol `i`.
    pub fn bin_of(&self, i: usize, n_used: usize) -> usize {
        i % n_used
    }
}

/// Places `x` on consecutive OFDM symbols, padding the tail with `fill`.
pub fn map_to_grid(cfg: &OfdmConfig, x: &[Complex64], fill: Complex64) -> GridFrame {
    let n_symbols = cfg.symbols_for(x.len());
    let mut data = x.to_vec();
    data.resize(n_symbols * cfg.n_used(), fill);
    GridFrame {
        data,
        n_symbols,
        payload: x.len(),
    }
}

/// Inverse of [`map_to_grid`].
pub fn unmap_from_grid(frame: &GridFrame) -> Vec<Complex64> {
    frame.data[..frame.payload].to_vec()
}

/// Least-squares per-bin channel estimate from one known symbol.
pub fn ls_channel_estimate(
    pilot_sent: &[Complex64],
    pilot_received: &[Complex64],
) -> Result<Vec<Complex64>> {
    if pilot_sent.len() != pilot_received.len() {
        return Err(Error::InvalidArgument("pilot lengths differ".into()));
    }
    pilot_sent
        .iter()
        .zip(pilot_received)
        .map(|(x, y)| {
            if x.norm_sqr() == 0.0 {
                Err(Error::InvalidArgument("pilot has a zero bin".into()))
            } else {
                Ok(y / x)
            }
        })
        .collect()
}

/// Circular convolution of each OFDM symbol body with `taps` is what a
/// linear channel produces once the prefix covers the channel memory. This
/// applies a linear convolution to a stream with zero initial state.
pub fn convolve_stream(stream: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); stream.len()];
    for (t, o) in out.iter_mut().enumerate() {
        for (d, &h) in taps.iter().enumerate().take(t + 1) {
            *o += h * stream[t - d];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_of_identity_and_two_taps() {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        let x: Vec<Complex64> = (0..500)
            .map(|i| Complex64::from_polar(1.0, i as f64 * 0.7))
            .collect();
        let t = ofdm.modulate(&x).unwrap();
        let id = ofdm.response_stats(&t, &t, 1e-9).unwrap();
        assert!(id.mean_mag.iter().all(|m| (m - 1.0).abs() < 1e-6));
        assert!(id.mean_phase.iter().all(|p| p.abs() < 1e-6));
        let taps = [c(0.8, 0.0), c(0.0, 0.6)];
        let y = convolve_stream(&t, &taps);
        let st = ofdm.response_stats(&t, &y, 1e-9).unwrap();
        for (k, h) in ofdm.tap_response(&taps).iter().enumerate() {
            assert!((st.mean_mag[k] - h.norm()).abs() < 1e-3);
            assert!(wrap_phase(st.mean_phase[k] - h.arg()).abs() < 1e-3);
        }
        assert_eq!(st.max_errors(&st), (0.0, 0.0));
        let mut zero = t.clone();
        zero.iter_mut().for_each(|v| *v = Complex64::default());
        assert_eq!(ofdm.response_stats(&zero, &t, 1e-9).unwrap().skipped, 500);
    }

    #[test]
    fn wrap_phase_range() {
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(0.3) - 0.3).abs() < 1e-15);
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn layout() {
        let cfg = OfdmConfig::default();
        assert_eq!(cfg.symbol_len(), 72);
        assert_eq!(cfg.n_used(), 50);
        assert_eq!(cfg.signed_bin(0), -25);
        assert_eq!(cfg.signed_bin(49), 25);
        assert!(!cfg.used_bins.contains(&0));
    }

    #[test]
    fn zero_in_zero_out() {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        let t = ofdm.modulate(&[Complex64::default(); 100]).unwrap();
        assert_eq!(t.len(), 144);
        assert!(t.iter().all(|v| v.norm() == 0.0));
        assert!(ofdm.demodulate(&t).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_bin_has_constant_modulus() {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        let mut x = vec![Complex64::default(); 50];
        x[7] = c(1.0, 0.0);
        let t = ofdm.modulate(&x).unwrap();
        for v in &t {
            assert!((v.norm() - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_lengths() {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        assert!(ofdm.modulate(&[Complex64::default(); 49]).is_err());
        assert!(ofdm.demodulate(&[Complex64::default(); 71]).is_err());
    }

    #[test]
    fn mmse_examples() {
        let y = mmse_equalize(c(0.3, 0.4), c(1.0, 0.0), 0.0).unwrap();
        assert!((y - c(0.3, 0.4)).norm() < 1e-15);
        let y = mmse_equalize(c(1.0, 0.0), c(1.0, 0.0), 1.0).unwrap();
        assert!((y - c(0.5, 0.0)).norm() < 1e-15);
        let y = mmse_equalize(c(0.0, 2.0), c(0.0, 2.0), 0.0).unwrap();
        assert!((y - c(1.0, 0.0)).norm() < 1e-15);
        assert!(mmse_equalize(c(1.0, 0.0), c(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn snr_evm_edge_cases() {
        let x = vec![c(1.0, 0.0), c(0.0, -1.0), c(-1.0, 0.0), c(0.0, 1.0)];
        let bins = [0, 1, 0, 1];
        let snr = estimate_snr_evm(&x, &x, &bins, 2).unwrap();
        assert!(snr.iter().all(|&s| (s - 1e4).abs() < 1e-9));
        let zero = vec![Complex64::default(); 4];
        let snr = estimate_snr_evm(&x, &zero, &bins, 2).unwrap();
        assert!(snr.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        assert!(estimate_snr_evm(&x, &x, &bins, 3).is_err());
    }

    #[test]
    fn grid_for_one_codeword() {
        let cfg = OfdmConfig::default();
        let x: Vec<Complex64> = (0..324).map(|i| c(i as f64, 0.0)).collect();
        let g = map_to_grid(&cfg, &x, Complex64::default());
        assert_eq!(g.n_symbols, 7);
        assert_eq!(g.data.len() - g.payload, 26);
        assert_eq!(unmap_from_grid(&g), x);
        assert_eq!(
            map_to_grid(&cfg, &x[..50], Complex64::default()).n_symbols,
            1
        );
    }

    #[test]
    fn zero_force_rejects_empty_first_bin() {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        let mut x = vec![Complex64::default(); 50];
        x[3] = c(1.0, 0.0);
        let mut t = ofdm.modulate(&x).unwrap();
        assert!(ofdm.zero_force_phase(&mut t).is_err());
    }
}
