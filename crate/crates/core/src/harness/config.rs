//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::{normalize_taps, Cfo, ChannelKind, ChannelModel, Impairment, TDL_TAPS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    /// Gray 16-QAM with the exact AWGN demapper.
    QamBaseline,
    /// Gray 16-QAM with a neural demapper trained on the link.
    QamNnRx,
    /// Autoencoder trained on the random TDL model and deployed unchanged.
    SimAe,
    /// Autoencoder trained on the link with score-function transmitter updates.
    RlAe,
    /// Autoencoder trained through a WGAN channel model recorded once.
    WganAe,
}

impl SystemId {
    pub const ALL: [SystemId; 5] = [
        SystemId::QamBaseline,
        SystemId::QamNnRx,
        SystemId::SimAe,
        SystemId::RlAe,
        SystemId::WganAe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemId::QamBaseline => "qam_baseline",
            SystemId::QamNnRx => "qam_nn_rx",
            SystemId::SimAe => "sim_ae",
            SystemId::RlAe => "rl_ae",
            SystemId::WganAe => "wgan_ae",
        }
    }

    /// Systems whose receiver is a neural demapper.
    pub fn is_neural(self) -> bool {
        self != SystemId::QamBaseline
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SystemId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelFamily {
    #[default]
    Awgn,
    StaticMultipath,
    TdlRandom,
}

/// Channel description; the SNR comes from the sweep or the training plan.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: ChannelFamily,
    /// Explicit `[re, im]` taps for static multipath, normalised on use.
    pub taps: Option<Vec<[f64; 2]>>,
    /// Seed for drawn static taps when `taps` is absent.
    pub tap_seed: Option<u64>,
    /// Tap count of drawn static taps or of the random TDL.
    pub n_taps: Option<usize>,
    /// Per-frame CFO drawn uniformly from `[-cfo, cfo]` cycles per sample.
    pub cfo: Option<f64>,
    /// Clipping amplitude relative to unit mean bin power.
    pub clip: Option<f64>,
    pub quantize_bits: Option<u32>,
    pub quantize_full_scale: Option<f64>,
}

impl ChannelSpec {
    /// Channel model at `snr_db` (`None` disables noise). Impairments apply
    /// in the order CFO, clipping, quantisation.
    pub fn model(&self, snr_db: Option<f64>) -> Result<ChannelModel> {
        let n_taps = self.n_taps.unwrap_or(TDL_TAPS);
        let kind = match self.kind {
            ChannelFamily::Awgn => ChannelKind::Awgn,
            ChannelFamily::TdlRandom => ChannelKind::TdlRandom { n_taps },
            ChannelFamily::StaticMultipath => match (&self.taps, self.tap_seed) {
                (Some(taps), _) => {
                    if taps.is_empty() || taps.iter().all(|t| t[0] == 0.0 && t[1] == 0.0) {
                        return Err(Error::Config("static taps must not be all zero".into()));
                    }
                    let taps: Vec<Complex64> =
                        taps.iter().map(|t| Complex64::new(t[0], t[1])).collect();
                    ChannelKind::StaticMultipath {
                        taps: normalize_taps(&taps),
                    }
                }
                (None, Some(seed)) => ChannelKind::static_from_seed(seed, n_taps),
                (None, None) => {
                    return Err(Error::Config(
                        "static multipath needs taps or tap_seed".into(),
                    ));
                }
            },
        };
        let mut impairments = Vec::new();
        if let Some(c) = self.cfo {
            impairments.push(Impairment::Cfo(Cfo::UniformPerFrame(c)));
        }
        if let Some(a) = self.clip {
            impairments.push(Impairment::Clip { amplitude: a });
        }
        match (self.quantize_bits, self.quantize_full_scale) {
            (Some(bits), Some(full_scale)) => {
                impairments.push(Impairment::Quantize { bits, full_scale })
            }
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "quantize_bits and quantize_full_scale go together".into(),
                ))
            }
        }
        for imp in &impairments {
            imp.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(ChannelModel {
            kind,
            snr_db,
            impairments,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Strictly increasing; `inf` runs noiseless.
    pub snr_db: Vec<f64>,
    /// Information bits per point before the stopping rule may fire.
    pub bit_budget: u64,
    /// Lowest BER the budget must resolve: `bit_budget >= 10 / target_ber`.
    pub target_ber: f64,
    /// Codeword errors required, together with the budget, to stop a point.
    pub min_codeword_errors: u64,
    /// Hard cap on information bits per point; defaults to
    /// `MAX_BITS_FACTOR * bit_budget`.
    pub max_bits: Option<u64>,
    pub n_idd: usize,
    /// BP iterations per IDD iteration.
    pub bp_iters: usize,
    /// `false` sends raw bits and counts demapper hard-decision errors.
    pub coded: bool,
    /// Worker threads over SNR points.
    pub threads: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            snr_db: vec![10.0, 12.0, 14.0],
            bit_budget: 1_000_000,
            target_ber: 1e-5,
            min_codeword_errors: 100,
            max_bits: None,
            n_idd: 40,
            bp_iters: 1,
            coded: true,
            threads: 1,
        }
    }
}

/// Default bit cap as a multiple of the budget.
pub const MAX_BITS_FACTOR: u64 = 10;

impl SweepSpec {
    /// Information bits after which a point stops regardless of errors.
    pub fn bit_cap(&self) -> u64 {
        self.max_bits
            .unwrap_or_else(|| self.bit_budget.saturating_mul(MAX_BITS_FACTOR))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("sweep: {m}")));
        if self.snr_db.is_empty() {
            return bad("snr_db must not be empty".into());
        }
        if self
            .snr_db
            .iter()
            .any(|s| s.is_nan() || *s == f64::NEG_INFINITY)
        {
            return bad("snr_db values must be numbers or inf".into());
        }
        if self.snr_db.windows(2).any(|w| w[0] >= w[1]) {
            return bad("snr_db must be strictly increasing".into());
        }
        if !(self.target_ber > 0.0 && self.target_ber < 1.0) {
            return bad(format!("target_ber {} must lie in (0, 1)", self.target_ber));
        }
        if (self.bit_budget as f64) < 10.0 / self.target_ber {
            return bad(format!(
                "bit_budget {} is below 10 / target_ber = {}",
                self.bit_budget,
                10.0 / self.target_ber
            ));
        }
        if self.max_bits.is_some_and(|m| m < self.bit_budget) {
            return bad("max_bits must be >= bit_budget".into());
        }
        if self.n_idd == 0 || self.bp_iters == 0 || self.threads == 0 {
            return bad("n_idd, bp_iters and threads must be >= 1".into());
        }
        Ok(())
    }
}

/// Training recipe shared by the five systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    /// Link SNR during training and recording; defaults to the middle sweep point.
    pub snr_db: Option<f64>,
    /// Receiver pretraining on AWGN with the transmitter frozen.
    pub pretrain_steps: usize,
    /// SNR range of AWGN pretraining and of random-TDL training.
    pub pretrain_snr_db: [f64; 2],
    /// End-to-end steps of the simulated autoencoder.
    pub sim_steps: usize,
    pub sim_tdl_taps: usize,
    pub rl_cycles: usize,
    pub rl_rx_steps_per_cycle: usize,
    pub sigma_w: f64,
    pub wgan_steps: usize,
    pub wgan_dataset_symbols: usize,
    /// Autoencoder steps through the generator.
    pub wgan_ae_steps: usize,
    /// Symbols recorded on the link for receiver finetuning; 0 skips it.
    pub finetune_symbols: usize,
    pub finetune_steps: usize,
    pub batch_codewords: usize,
    pub lr_tx: f64,
    pub lr_rx: f64,
    /// Directory with `tx.ckpt` and `rx.ckpt` to load instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            snr_db: None,
            pretrain_steps: 3000,
            pretrain_snr_db: [0.0, 25.0],
            sim_steps: 5000,
            sim_tdl_taps: TDL_TAPS,
            rl_cycles: 1000,
            rl_rx_steps_per_cycle: 5,
            sigma_w: 0.02,
            wgan_steps: 14_000,
            wgan_dataset_symbols: 100_000,
            wgan_ae_steps: 3000,
            finetune_symbols: 200_000,
            finetune_steps: 2000,
            batch_codewords: 4,
            lr_tx: 1e-3,
            lr_rx: 1e-3,
            checkpoint: None,
        }
    }
}

impl TrainingSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training: {m}")));
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return bad("snr_db must be finite");
        }
        let [lo, hi] = self.pretrain_snr_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("pretrain_snr_db must be a finite [low, high] pair");
        }
        if self.batch_codewords == 0 {
            return bad("batch_codewords must be >= 1");
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return bad("sigma_w must be > 0");
        }
        if self.sim_tdl_taps == 0 {
            return bad("sim_tdl_taps must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub training: TrainingSpec,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(system: SystemId) -> Self {
        Self {
            system,
            seed: 0,
            out_dir: default_out_dir(),
            channel: ChannelSpec::default(),
            sweep: SweepSpec::default(),
            training: TrainingSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sweep.validate()?;
        self.training.validate()?;
        self.channel.model(None)?;
        Ok(())
    }

    /// Link SNR used while training.
    pub fn training_snr_db(&self) -> f64 {
        self.training.snr_db.unwrap_or_else(|| {
            let finite: Vec<f64> = self
                .sweep
                .snr_db
                .iter()
                .copied()
                .filter(|s| s.is_finite())
                .collect();
            finite.get(finite.len() / 2).copied().unwrap_or(20.0)
        })
    }
}
