//! Over-the-channel link used for evaluation and for training on the real
//! channel: OFDM framing, a [`ChannelModel`], genie MMSE equalisation from the
//! true per-frame taps, and per-bin EVM SNR estimation.

use num_complex::Complex64;
use rand::Rng;

use crate::channels::{ChannelKind, ChannelModel};
use crate::error::{Error, Result};
use crate::ofdm::{estimate_snr_evm, mmse_equalize, Ofdm, OfdmConfig};

/// OFDM symbols in a default SNR calibration burst.
pub const CALIBRATION_SYMBOLS: usize = 200;

#[derive(Clone, Debug)]
pub struct Link {
    ofdm: Ofdm,
    channel: ChannelModel,
}

impl Link {
    pub fn new(cfg: OfdmConfig, channel: ChannelModel) -> Result<Self> {
        channel.validate(&cfg)?;
        Ok(Self {
            ofdm: Ofdm::new(cfg)?,
            channel,
        })
    }

    pub fn ofdm(&self) -> &Ofdm {
        &self.ofdm
    }

    pub fn channel(&self) -> &ChannelModel {
        &self.channel
    }

    /// Same link at another SNR (`None` disables noise).
    pub fn with_snr(&self, snr_db: Option<f64>) -> Self {
        let mut channel = self.channel.clone();
        channel.snr_db = snr_db;
        Self {
            ofdm: self.ofdm.clone(),
            channel,
        }
    }

    /// Per-bin linear response when it is the same for every frame, in
    /// used-bin order.
    pub fn static_response(&self) -> Option<Vec<Complex64>> {
        match &self.channel.kind {
            ChannelKind::Awgn => Some(vec![Complex64::new(1.0, 0.0); self.ofdm.config().n_used()]),
            ChannelKind::StaticMultipath { taps } => Some(self.ofdm.tap_response(taps)),
            ChannelKind::TdlRandom { .. } => None,
        }
    }

    /// Sends `x` on consecutive OFDM symbols and returns the MMSE-equalised
    /// symbols. The last OFDM symbol is padded with random points of `fill`.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        x: &[Complex64],
        fill: &[Complex64],
        rng: &mut R,
    ) -> Result<Vec<Complex64>> {
        let cfg = self.ofdm.config();
        let nu = cfg.n_used();
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let padded_len = cfg.symbols_for(x.len()) * nu;
        let mut data = x.to_vec();
        if padded_len > x.len() {
            if fill.is_empty() {
                return Err(Error::InvalidArgument(
                    "padding needs a non-empty fill constellation".into(),
                ));
            }
            data.extend((x.len()..padded_len).map(|_| fill[rng.random_range(0..fill.len())]));
        }
        let time = self.ofdm.modulate(&data)?;
        let out = self.channel.apply(&time, cfg.symbol_len(), rng)?;
        let rx = self.ofdm.demodulate(&out.y)?;
        let mut eq = Vec::with_capacity(x.len());
        for (frame, (sym, state)) in rx.chunks_exact(nu).zip(&out.frames).enumerate() {
            let h = self.ofdm.tap_response(&state.taps);
            for (k, (&y, &hk)) in sym.iter().zip(&h).enumerate() {
                if frame * nu + k < x.len() {
                    eq.push(mmse_equalize(y, hk, out.noise_var)?);
                }
            }
        }
        Ok(eq)
    }

    /// Per-bin post-equalisation SNR in dB, estimated from a burst of
    /// `n_symbols` OFDM symbols of uniformly drawn `points`.
    pub fn calibrate<R: Rng + ?Sized>(
        &self,
        points: &[Complex64],
        n_symbols: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let nu = self.ofdm.config().n_used();
        if points.is_empty() || n_symbols == 0 {
            return Err(Error::InvalidArgument(
                "calibration needs points and symbols".into(),
            ));
        }
        let sent: Vec<Complex64> = (0..n_symbols * nu)
            .map(|_| points[rng.random_range(0..points.len())])
            .collect();
        let eq = self.transmit(&sent, points, rng)?;
        let bins: Vec<usize> = (0..sent.len()).map(|i| i % nu).collect();
        Ok(estimate_snr_evm(&sent, &eq, &bins, nu)?
            .into_iter()
            .map(|s| 10.0 * s.log10())
            .collect())
    }

    /// Expands per-bin SNRs to the symbols of a stream starting on bin 0.
    pub fn per_symbol_snr(&self, per_bin: &[f64], n: usize) -> Vec<f64> {
        (0..n).map(|i| per_bin[i % per_bin.len()]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::gray_qam;
    use crate::channels::Impairment;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_multipath_is_equalised_exactly() {
        let channel = ChannelModel {
            kind: ChannelKind::static_from_seed(3, 4),
            snr_db: None,
            impairments: Vec::new(),
        };
        let link = Link::new(OfdmConfig::default(), channel).unwrap();
        let pts = gray_qam(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Complex64> = (0..173).map(|i| pts[i % 16]).collect();
        let y = link.transmit(&x, &pts, &mut rng).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn calibration_tracks_awgn_snr() {
        let link = Link::new(OfdmConfig::default(), ChannelModel::awgn(15.0)).unwrap();
        let pts = gray_qam(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let snr = link.calibrate(&pts, 2000, &mut rng).unwrap();
        // noise is scaled to the time-domain power, 50/64 of the bin power
        let want = 15.0 + 10.0 * (64.0f64 / 50.0).log10();
        let mean = snr.iter().sum::<f64>() / snr.len() as f64;
        assert!((mean - want).abs() < 0.1, "{mean} vs {want}");
    }

    #[test]
    fn clipping_shrinks_equalised_points() {
        let channel = ChannelModel {
            kind: ChannelKind::Awgn,
            snr_db: None,
            impairments: vec![Impairment::Clip { amplitude: 1.0 }],
        };
        let link = Link::new(OfdmConfig::default(), channel).unwrap();
        let pts = gray_qam(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Complex64> = (0..50 * 400)
            .map(|_| pts[rng.random_range(0..16)])
            .collect();
        let y = link.transmit(&x, &pts, &mut rng).unwrap();
        let gain = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b * a.conj()).re)
            .sum::<f64>()
            / x.len() as f64;
        assert!(gain > 0.7 && gain < 0.95, "{gain}");
    }
}
