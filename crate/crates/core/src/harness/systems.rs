//! The five compared transceivers and their training recipes.

use std::path::Path;

use aircomm_nn::ParamStore;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{SystemId, TrainingSpec};
use crate::autoencoder::{Demapper, MapDemapper, Transmitter};
use crate::error::{Error, Result};
use crate::ldpc::SoftDemapper;
use crate::link::Link;
use crate::trainers::{
    finetune_receiver, record_rx_dataset, rl_train, train_end_to_end, wgan_pipeline,
    DeploymentCounter, PipelineConfig, SnrSchedule, TrainConfig, TrainTrace, TrainingChannel,
};
use crate::wgan::{Generator, ModeDiagnostic, WganConfig, WganTrace};

pub const BITS_PER_SYMBOL: usize = 4;
pub const TX_CHECKPOINT: &str = "tx.ckpt";
pub const RX_CHECKPOINT: &str = "rx.ckpt";

#[derive(Clone, Debug)]
pub enum Receiver {
    Map(MapDemapper),
    Neural(Demapper<f32>),
}

impl SoftDemapper for Receiver {
    fn bits_per_symbol(&self) -> usize {
        match self {
            Receiver::Map(d) => d.bits_per_symbol(),
            Receiver::Neural(d) => d.bits_per_symbol(),
        }
    }

    fn demap(&self, y: &[Complex64], snr_db: &[f64], prior: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Receiver::Map(d) => d.demap(y, snr_db, prior, out),
            Receiver::Neural(d) => d.demap(y, snr_db, prior, out),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transceiver {
    pub system: SystemId,
    pub tx: Transmitter<f32>,
    pub rx: Receiver,
}

impl Transceiver {
    /// Gray 16-QAM with the exact AWGN demapper.
    pub fn qam_baseline() -> Result<Self> {
        let tx = gray_transmitter()?;
        let rx = Receiver::Map(MapDemapper::new(tx.points_by_label()?)?);
        Ok(Self {
            system: SystemId::QamBaseline,
            tx,
            rx,
        })
    }

    /// Writes `tx.ckpt` and, for neural receivers, `rx.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.tx.store().save(dir.join(TX_CHECKPOINT))?;
        if let Receiver::Neural(rx) = &self.rx {
            rx.store().save(dir.join(RX_CHECKPOINT))?;
        }
        Ok(())
    }

    pub fn load(system: SystemId, dir: &Path) -> Result<Self> {
        let mut tx = gray_transmitter()?;
        tx.store_mut()
            .assign_from(&read_store(&dir.join(TX_CHECKPOINT))?)?;
        let rx = if system.is_neural() {
            let mut rx = Demapper::<f32>::new(BITS_PER_SYMBOL, &mut ChaCha8Rng::seed_from_u64(0))?;
            rx.store_mut()
                .assign_from(&read_store(&dir.join(RX_CHECKPOINT))?)?;
            Receiver::Neural(rx)
        } else {
            Receiver::Map(MapDemapper::new(tx.points_by_label()?)?)
        };
        Ok(Self { system, tx, rx })
    }
}

fn read_store(path: &Path) -> Result<ParamStore<f32>> {
    if !path.is_file() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(ParamStore::load(path)?)
}

fn gray_transmitter() -> Result<Transmitter<f32>> {
    Transmitter::gray_qam(BITS_PER_SYMBOL, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
}

/// A trained system with what its training produced.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub transceiver: Transceiver,
    /// Named training traces in the order they ran.
    pub traces: Vec<(String, TrainTrace)>,
    pub counters: DeploymentCounter,
    pub wgan: Option<WganArtifacts>,
}

/// What the one-shot channel model left behind.
#[derive(Clone, Debug)]
pub struct WganArtifacts {
    pub trace: WganTrace,
    pub diagnostic: ModeDiagnostic,
    /// Averaged generator used as the training channel.
    pub generator: Generator<f32>,
    /// WGAN step of that generator.
    pub selected_step: usize,
}

/// Trains `system` for deployment on `link`.
///
/// Neural receivers start from AWGN pretraining with the Gray transmitter
/// frozen. `qam_nn_rx` then finetunes on link recordings; `sim_ae` trains
/// jointly on the random TDL model; `rl_ae` alternates receiver updates and
/// score-function transmitter updates on the link; `wgan_ae` runs the
/// one-shot WGAN pipeline followed by receiver finetuning.
pub fn prepare_system(
    system: SystemId,
    link: &Link,
    spec: &TrainingSpec,
    seed: u64,
) -> Result<Prepared> {
    spec.validate()?;
    let mut counters = DeploymentCounter::default();
    let mut traces = Vec::new();
    if system == SystemId::QamBaseline {
        return Ok(Prepared {
            transceiver: Transceiver::qam_baseline()?,
            traces,
            counters,
            wgan: None,
        });
    }
    let cfg = link.ofdm().config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tx = gray_transmitter()?;
    let mut rx = Demapper::<f32>::new(BITS_PER_SYMBOL, &mut rng)?;
    let [lo, hi] = spec.pretrain_snr_db;
    let base = TrainConfig {
        batch_codewords: spec.batch_codewords,
        lr_tx: spec.lr_tx,
        lr_rx: spec.lr_rx,
        sigma_w: spec.sigma_w,
        snr: SnrSchedule::Uniform { low: lo, high: hi },
        seed,
        ..TrainConfig::default()
    };
    if system != SystemId::SimAe {
        let pre = TrainConfig {
            lr_tx: 0.0,
            steps: spec.pretrain_steps,
            seed: seed.wrapping_add(1),
            ..base.clone()
        };
        traces.push((
            "pretrain".into(),
            train_end_to_end(&mut tx, &mut rx, &TrainingChannel::Awgn, &pre)?,
        ));
    }
    let finetune = TrainConfig {
        steps: spec.finetune_steps,
        seed: seed.wrapping_add(2),
        ..base.clone()
    };
    let mut wgan = None;
    match system {
        SystemId::QamBaseline => unreachable!("handled above"),
        SystemId::QamNnRx => {
            if let Some(t) = finetune_on_link(&tx, &mut rx, link, spec, &finetune, &mut rng)? {
                traces.push(("finetune".into(), t));
            }
        }
        SystemId::SimAe => {
            let sim = TrainConfig {
                steps: spec.sim_steps,
                ..base.clone()
            };
            let tdl = TrainingChannel::tdl(cfg, spec.sim_tdl_taps)?;
            traces.push((
                "sim".into(),
                train_end_to_end(&mut tx, &mut rx, &tdl, &sim)?,
            ));
            counters.deploy();
        }
        SystemId::RlAe => {
            let rl = TrainConfig {
                rl_cycles: spec.rl_cycles,
                rx_steps_per_cycle: spec.rl_rx_steps_per_cycle,
                tx_steps_per_cycle: 1,
                seed: seed.wrapping_add(3),
                ..base.clone()
            };
            let channel = TrainingChannel::Link(link.clone());
            traces.push((
                "rl".into(),
                rl_train(&mut tx, &mut rx, &channel, &rl, &mut counters)?,
            ));
        }
        SystemId::WganAe => {
            let pipeline = PipelineConfig {
                dataset_symbols: spec.wgan_dataset_symbols,
                wgan: WganConfig {
                    max_steps: spec.wgan_steps,
                    seed: seed.wrapping_add(4),
                    ..WganConfig::default()
                },
                ae: TrainConfig {
                    steps: spec.wgan_ae_steps,
                    seed: seed.wrapping_add(5),
                    ..base.clone()
                },
                finetune_symbols: (spec.finetune_symbols > 0).then_some(spec.finetune_symbols),
                finetune,
                seed: seed.wrapping_add(6),
                ..PipelineConfig::default()
            };
            let out = wgan_pipeline(&mut tx, &mut rx, link, &pipeline, &mut counters)?;
            traces.push(("wgan_ae".into(), out.ae_trace));
            if let Some(t) = out.finetune_trace {
                traces.push(("finetune".into(), t));
            }
            wgan = Some(WganArtifacts {
                trace: out.wgan.trace,
                diagnostic: out.diagnostic,
                generator: out.wgan.generator,
                selected_step: out.wgan.selected_step,
            });
        }
    }
    Ok(Prepared {
        transceiver: Transceiver {
            system,
            tx,
            rx: Receiver::Neural(rx),
        },
        traces,
        counters,
        wgan,
    })
}

fn finetune_on_link(
    tx: &Transmitter<f32>,
    rx: &mut Demapper<f32>,
    link: &Link,
    spec: &TrainingSpec,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<TrainTrace>> {
    if spec.finetune_symbols == 0 {
        return Ok(None);
    }
    let real = TrainingChannel::Link(link.clone());
    let snr = link.channel().snr_db.unwrap_or(f64::INFINITY);
    let data = record_rx_dataset(tx, &real, snr, spec.finetune_symbols, rng)?;
    Ok(Some(finetune_receiver(tx, rx, &data, cfg)?))
}
