//! Frequency-response reports, constellation export and run manifests.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autoencoder::Transmitter;
use crate::channels::ChannelDataset;
use crate::error::{Error, Result};
use crate::ofdm::{Ofdm, ResponseStats};
use crate::wgan::Generator;

/// Magnitude below which a transmitted bin is skipped in response reports.
pub const RESPONSE_FLOOR: f64 = 1e-9;

/// Where the received side of a frequency-response report comes from.
pub enum ResponseSource<'a> {
    /// Recorded `(x, y)` pairs.
    Dataset(&'a ChannelDataset),
    /// Generator outputs conditioned on the recorded `x`.
    Generator {
        generator: &'a Generator<f32>,
        conditions: &'a ChannelDataset,
    },
}

/// Per-bin statistics of `y_k / x_k` over the first `n_symbols` OFDM
/// symbols of the source.
pub fn freq_response_report<R: Rng + ?Sized>(
    source: ResponseSource<'_>,
    ofdm: &Ofdm,
    n_symbols: usize,
    rng: &mut R,
) -> Result<ResponseStats> {
    let dataset = match source {
        ResponseSource::Dataset(d) => d,
        ResponseSource::Generator { conditions, .. } => conditions,
    };
    if n_symbols == 0 || n_symbols > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "report needs 1..={} symbols, got {n_symbols}",
            dataset.len()
        )));
    }
    let widen = |s: &[num_complex::Complex32]| {
        s.iter()
            .map(|v| Complex64::new(v.re as f64, v.im as f64))
            .collect::<Vec<_>>()
    };
    let x: Vec<Complex64> = (0..n_symbols).flat_map(|i| widen(dataset.x(i))).collect();
    let y = match source {
        ResponseSource::Dataset(_) => (0..n_symbols).flat_map(|i| widen(dataset.y(i))).collect(),
        ResponseSource::Generator { generator, .. } => {
            generator.generate(&x, dataset.symbol_len, rng)?
        }
    };
    ofdm.response_stats(&x, &y, RESPONSE_FLOOR)
}

/// Constellation table as CSV (`label_hex,re,im`).
pub fn export_constellation<W: Write>(tx: &Transmitter<f32>, w: W) -> Result<()> {
    tx.write_constellation_csv(w)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Plain-text record of a run: `key = value` lines, then one
/// `sha256  path` line per artifact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub fields: Vec<(String, String)>,
    /// Paths relative to the output directory with their content hashes.
    pub artifacts: Vec<(PathBuf, String)>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl Manifest {
    pub fn field(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    /// Writes `bytes` to `dir/name` and lists it.
    pub fn write_artifact(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.artifacts
            .push((PathBuf::from(name), sha256_hex(bytes)));
        Ok(())
    }

    /// Lists an existing file under `dir`.
    pub fn add_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let bytes = std::fs::read(dir.join(name))?;
        self.artifacts
            .push((PathBuf::from(name), sha256_hex(&bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push('\n');
        for (p, h) in &self.artifacts {
            let _ = writeln!(s, "{h}  {}", p.display());
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.render())?;
        Ok(path)
    }

    /// Artifacts whose current content no longer matches the listed hash.
    pub fn stale(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (p, h) in &self.artifacts {
            match std::fs::read(dir.join(p)) {
                Ok(bytes) if &sha256_hex(&bytes) == h => {}
                Ok(_) => out.push(p.clone()),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => out.push(p.clone()),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::gray_qam;
    use crate::channels::{record_dataset, ChannelKind, ChannelModel};
    use crate::ofdm::OfdmConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn report_for(kind: ChannelKind) -> ResponseStats {
        let ofdm = Ofdm::new(OfdmConfig::default()).unwrap();
        let channel = ChannelModel {
            kind,
            snr_db: None,
            impairments: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds =
            record_dataset(&gray_qam(4).unwrap(), &channel, &ofdm, 50, false, &mut rng).unwrap();
        freq_response_report(ResponseSource::Dataset(&ds), &ofdm, 50, &mut rng).unwrap()
    }

    #[test]
    fn identity_channel_is_flat() {
        let r = report_for(ChannelKind::Awgn);
        for k in 0..50 {
            assert!((r.mean_mag[k] - 1.0).abs() < 1e-6);
            assert!(r.mean_phase[k].abs() < 1e-6);
        }
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn known_taps_give_their_dft() {
        let taps = vec![Complex64::new(0.8, 0.0), Complex64::new(0.0, 0.6)];
        let r = report_for(ChannelKind::StaticMultipath { taps: taps.clone() });
        let cfg = OfdmConfig::default();
        for (k, &bin) in cfg.used_bins.iter().enumerate() {
            let w = -2.0 * std::f64::consts::PI * bin as f64 / cfg.n_fft as f64;
            let h = taps[0] + taps[1] * Complex64::from_polar(1.0, w);
            assert!((r.mean_mag[k] - h.norm()).abs() < 1e-3, "bin {k}");
            assert!(
                crate::ofdm::wrap_phase(r.mean_phase[k] - h.arg()).abs() < 1e-3,
                "bin {k}"
            );
        }
    }

    #[test]
    fn manifest_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::default();
        m.field("seed", 3);
        m.write_artifact(dir.path(), "a.csv", b"x,y\n").unwrap();
        assert!(m.stale(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.csv"), b"changed").unwrap();
        assert_eq!(m.stale(dir.path()).unwrap(), vec![PathBuf::from("a.csv")]);
        let text = m.render();
        assert!(text.starts_with("seed = 3\n"));
        assert!(text.contains("  a.csv"));
    }

    #[test]
    fn hex_encoding() {
        assert_eq!(hex(&[0x00, 0xab, 0x10]), "00ab10");
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
