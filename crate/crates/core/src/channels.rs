//! Simulated channels: AWGN, static and random tapped-delay-line multipath,
//! hardware impairments, and the one-shot dataset recorder.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ofdm::{Ofdm, OfdmConfig};

/// Taps of the random tapped-delay-line channel.
pub const TDL_TAPS: usize = 5;

pub(crate) fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    Complex64::new(s * a, s * b)
}

/// I.i.d. complex Gaussian taps scaled to unit total power.
pub fn random_unit_taps<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Complex64> {
    let taps: Vec<Complex64> = (0..n).map(|_| complex_normal(rng, 1.0)).collect();
    normalize_taps(&taps)
}

pub fn normalize_taps(taps: &[Complex64]) -> Vec<Complex64> {
    let p: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
    taps.iter().map(|t| t / p.sqrt()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelKind {
    Awgn,
    /// Fixed taps for the whole experiment.
    StaticMultipath {
        taps: Vec<Complex64>,
    },
    /// Fresh unit-power taps per frame.
    TdlRandom {
        n_taps: usize,
    },
}

impl ChannelKind {
    /// Static multipath with `n_taps` unit-power taps drawn from `seed`.
    pub fn static_from_seed(seed: u64, n_taps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::StaticMultipath {
            taps: random_unit_taps(&mut rng, n_taps),
        }
    }
}

/// Carrier frequency offset in cycles per sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Cfo {
    Fixed(f64),
    /// Drawn uniformly from `[-max, max]` per frame.
    UniformPerFrame(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Impairment {
    Cfo(Cfo),
    /// Magnitude limited to `amplitude`, phase preserved.
    Clip {
        amplitude: f64,
    },
    /// Mid-rise uniform quantiser per I/Q component over `[-full_scale, full_scale]`.
    Quantize {
        bits: u32,
        full_scale: f64,
    },
}

impl Impairment {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            Impairment::Cfo(Cfo::Fixed(e)) if !e.is_finite() => bad(format!("CFO {e}")),
            Impairment::Cfo(Cfo::UniformPerFrame(m)) if !(m.is_finite() && *m >= 0.0) => {
                bad(format!("CFO range {m}"))
            }
            Impairment::Clip { amplitude } if !(*amplitude > 0.0) => {
                bad(format!("clip amplitude {amplitude}"))
            }
            Impairment::Quantize { bits, full_scale }
                if *bits == 0 || *bits > 24 || !(*full_scale > 0.0) =>
            {
                bad(format!("quantizer {bits} bits over {full_scale}"))
            }
            _ => Ok(()),
        }
    }
}

/// Applies one impairment in place. `cfo` is the offset already resolved
/// for this frame.
pub fn impair(spec: &Impairment, x: &mut [Complex64], cfo: f64) -> Result<()> {
    spec.validate()?;
    match spec {
        Impairment::Cfo(_) => {
            for (n, v) in x.iter_mut().enumerate() {
                *v *= Complex64::from_polar(1.0, 2.0 * PI * cfo * n as f64);
            }
        }
        Impairment::Clip { amplitude } => {
            for v in x.iter_mut() {
                let r = v.norm();
                if r > *amplitude {
                    *v *= amplitude / r;
                }
            }
        }
        Impairment::Quantize { bits, full_scale } => {
            let levels = (1u64 << bits) as f64;
            let step = 2.0 * full_scale / levels;
            let top = full_scale - step / 2.0;
            let q = |c: f64| (step * ((c / step).floor() + 0.5)).clamp(-top, top);
            for v in x.iter_mut() {
                *v = Complex64::new(q(v.re), q(v.im));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    /// Applied in order after the multipath filter.
    pub impairments: Vec<Impairment>,
}

/// Per-frame channel state, as a genie receiver would know it.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameState {
    pub taps: Vec<Complex64>,
    pub cfo: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelOutput {
    pub y: Vec<Complex64>,
    pub frames: Vec<FrameState>,
    /// Complex noise variance per sample (0 when noiseless).
    pub noise_var: f64,
}

impl ChannelModel {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Awgn,
            snr_db: Some(snr_db),
            impairments: Vec::new(),
        }
    }

    /// True when the output phase changes from frame to frame independently
    /// of the input (random taps or CFO), so recordings need phase zero-forcing.
    pub fn has_random_phase(&self) -> bool {
        matches!(self.kind, ChannelKind::TdlRandom { .. })
            || self
                .impairments
                .iter()
                .any(|i| matches!(i, Impairment::Cfo(_)))
    }

    pub fn validate(&self, cfg: &OfdmConfig) -> Result<()> {
        for imp in &self.impairments {
            imp.validate()?;
        }
        let memory = match &self.kind {
            ChannelKind::Awgn => 0,
            ChannelKind::StaticMultipath { taps } => taps.len().saturating_sub(1),
            ChannelKind::TdlRandom { n_taps } => n_taps.saturating_sub(1),
        };
        if memory > cfg.cp_len {
            return Err(Error::InvalidArgument(format!(
                "channel memory {memory} exceeds the cyclic prefix {}",
                cfg.cp_len
            )));
        }
        Ok(())
    }

    /// Passes a stream made of frames of `frame_len` samples through the
    /// channel. Taps and CFO are drawn per frame and each frame is filtered
    /// from zero state; noise is scaled to the mean power of the impaired
    /// stream.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        x: &[Complex64],
        frame_len: usize,
        rng: &mut R,
    ) -> Result<ChannelOutput> {
        if frame_len == 0 || !x.len().is_multiple_of(frame_len) {
            return Err(Error::InvalidArgument(format!(
                "stream of {} samples is not a whole number of {frame_len}-sample frames",
                x.len()
            )));
        }
        for imp in &self.impairments {
            imp.validate()?;
        }
        let mut y = Vec::with_capacity(x.len());
        let mut frames = Vec::with_capacity(x.len() / frame_len);
        for frame in x.chunks_exact(frame_len) {
            let taps = match &self.kind {
                ChannelKind::Awgn => vec![Complex64::new(1.0, 0.0)],
                ChannelKind::StaticMultipath { taps } => taps.clone(),
                ChannelKind::TdlRandom { n_taps } => random_unit_taps(rng, *n_taps),
            };
            let mut out = crate::ofdm::convolve_stream(frame, &taps);
            let mut cfo = 0.0;
            for imp in &self.impairments {
                let offset = match imp {
                    Impairment::Cfo(Cfo::Fixed(e)) => *e,
                    Impairment::Cfo(Cfo::UniformPerFrame(m)) if *m > 0.0 => {
                        rng.random_range(-*m..=*m)
                    }
                    _ => 0.0,
                };
                cfo += offset;
                impair(imp, &mut out, offset)?;
            }
            y.extend(out);
            frames.push(FrameState { taps, cfo });
        }
        let noise_var = match self.snr_db {
            None => 0.0,
            Some(snr) => {
                let p = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len().max(1) as f64;
                p / 10f64.powf(snr / 10.0)
            }
        };
        if noise_var > 0.0 {
            for v in y.iter_mut() {
                *v += complex_normal(rng, noise_var);
            }
        }
        Ok(ChannelOutput {
            y,
            frames,
            noise_var,
        })
    }

    pub fn describe(&self) -> String {
        let kind = match &self.kind {
            ChannelKind::Awgn => "awgn".to_string(),
            ChannelKind::StaticMultipath { taps } => format!(
                "static_multipath[{}]",
                taps.iter()
                    .map(|t| format!("{:.6}{:+.6}j", t.re, t.im))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            ChannelKind::TdlRandom { n_taps } => format!("tdl_random[{n_taps}]"),
        };
        let snr = self.snr_db.map_or("inf".to_string(), |s| format!("{s}"));
        format!("{kind};snr_db={snr};impairments={:?}", self.impairments)
    }
}

/// SHA-256 of a constellation table stored as little-endian float32 pairs.
pub fn constellation_fingerprint(points: &[Complex64]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in points {
        h.update((p.re as f32).to_le_bytes());
        h.update((p.im as f32).to_le_bytes());
    }
    h.finalize().into()
}

const DATASET_MAGIC: &[u8; 4] = b"AIRD";
const DATASET_VERSION: u32 = 1;

/// Paired time-domain records `(x, y)` of one OFDM symbol each.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDataset {
    pub symbol_len: usize,
    pub description: String,
    /// Transmitter-weights fingerprint shared by every record.
    pub fingerprint: [u8; 32],
    x: Vec<Complex32>,
    y: Vec<Complex32>,
}

impl ChannelDataset {
    pub fn new(symbol_len: usize, description: String, fingerprint: [u8; 32]) -> Self {
        Self {
            symbol_len,
            description,
            fingerprint,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.symbol_len.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Appends a record; refuses records from another transmitter.
    pub fn push(&mut self, x: &[Complex64], y: &[Complex64], fingerprint: &[u8; 32]) -> Result<()> {
        if fingerprint != &self.fingerprint {
            return Err(Error::Dataset(
                "record from a different transmitter fingerprint".into(),
            ));
        }
        if x.len() != self.symbol_len || y.len() != self.symbol_len {
            return Err(Error::Length {
                what: "dataset record",
                expected: self.symbol_len,
                got: x.len().max(y.len()),
            });
        }
        self.x
            .extend(x.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)));
        self.y
            .extend(y.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)));
        Ok(())
    }

    pub fn x(&self, i: usize) -> &[Complex32] {
        &self.x[i * self.symbol_len..(i + 1) * self.symbol_len]
    }

    pub fn y(&self, i: usize) -> &[Complex32] {
        &self.y[i * self.symbol_len..(i + 1) * self.symbol_len]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.symbol_len as u32).to_le_bytes())?;
        let desc = self.description.as_bytes();
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc)?;
        w.write_all(&self.fingerprint)?;
        let mut buf = Vec::with_capacity(self.symbol_len * 16);
        for i in 0..self.len() {
            buf.clear();
            for v in self.x(i).iter().chain(self.y(i)) {
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let trunc = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Dataset("truncated dataset file".into())
            } else {
                Error::Io(e)
            }
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Dataset(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(trunc)?;
        let version = u32::from_le_bytes(b4);
        if version != DATASET_VERSION {
            return Err(Error::Dataset(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b8).map_err(trunc)?;
        let n = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b4).map_err(trunc)?;
        let symbol_len = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(trunc)?;
        let desc_len = u32::from_le_bytes(b4) as usize;
        if desc_len > 1 << 20 {
            return Err(Error::Dataset("implausible description length".into()));
        }
        let mut desc = vec![0u8; desc_len];
        r.read_exact(&mut desc).map_err(trunc)?;
        let description = String::from_utf8(desc)
            .map_err(|_| Error::Dataset("description is not UTF-8".into()))?;
        let mut fingerprint = [0u8; 32];
        r.read_exact(&mut fingerprint).map_err(trunc)?;
        let mut ds = Self::new(symbol_len, description, fingerprint);
        let mut buf = vec![0u8; symbol_len * 16];
        let parse = |bytes: &[u8]| -> Vec<Complex32> {
            bytes
                .chunks_exact(8)
                .map(|c| {
                    Complex32::new(
                        f32::from_le_bytes(c[..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..].try_into().unwrap()),
                    )
                })
                .collect()
        };
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(trunc)?;
            ds.x.extend(parse(&buf[..symbol_len * 8]));
            ds.y.extend(parse(&buf[symbol_len * 8..]));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Dataset(
                "trailing bytes after the last record".into(),
            ));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Records `n_symbols` OFDM symbols of uniformly random constellation points
/// through `channel`, one frame per OFDM symbol. With `zero_force` both `x`
/// and `y` are rotated so that their own first used bin has zero phase.
pub fn record_dataset<R: Rng + ?Sized>(
    constellation: &[Complex64],
    channel: &ChannelModel,
    ofdm: &Ofdm,
    n_symbols: usize,
    zero_force: bool,
    rng: &mut R,
) -> Result<ChannelDataset> {
    let cfg = ofdm.config();
    channel.validate(cfg)?;
    let fingerprint = constellation_fingerprint(constellation);
    let mut ds = ChannelDataset::new(cfg.symbol_len(), channel.describe(), fingerprint);
    const CHUNK: usize = 1024;
    let mut done = 0;
    while done < n_symbols {
        let count = CHUNK.min(n_symbols - done);
        let data: Vec<Complex64> = (0..count * cfg.n_used())
            .map(|_| constellation[rng.random_range(0..constellation.len())])
            .collect();
        let x = ofdm.modulate(&data)?;
        let out = channel.apply(&x, cfg.symbol_len(), rng)?;
        for (xs, ys) in x
            .chunks_exact(cfg.symbol_len())
            .zip(out.y.chunks_exact(cfg.symbol_len()))
        {
            let (mut xs, mut ys) = (xs.to_vec(), ys.to_vec());
            if zero_force {
                ofdm.zero_force_phase(&mut xs)?;
                ofdm.zero_force_phase(&mut ys)?;
            }
            ds.push(&xs, &ys, &fingerprint)?;
        }
        done += count;
    }
    Ok(ds)
}
