//! End-to-end experiment runs: train or load, sweep, write artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, SystemId};
use super::report::{export_constellation, freq_response_report, hex, Manifest, ResponseSource};
use super::sweep::{ber_sweep, BerReport};
use super::systems::{
    prepare_system, Prepared, Transceiver, WganArtifacts, RX_CHECKPOINT, TX_CHECKPOINT,
};
use crate::autoencoder::gray_qam;
use crate::channels::record_dataset;
use crate::error::Result;
use crate::ldpc::ParityCheck;
use crate::link::Link;
use crate::ofdm::{Ofdm, OfdmConfig};
use crate::trainers::DeploymentCounter;

/// Evaluation streams do not depend on the system, so runs that share a
/// seed are paired.
const EVAL_STREAM: u64 = 0x5eed_0e7a;
/// OFDM symbols in the generator frequency-response report.
const RESPONSE_SYMBOLS: usize = 10_000;

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub system: SystemId,
    pub report: BerReport,
    pub counters: DeploymentCounter,
    pub tx_fingerprint: [u8; 32],
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

fn csv<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Link used for training and recording.
pub fn training_link(cfg: &ExperimentConfig) -> Result<Link> {
    Link::new(
        OfdmConfig::default(),
        cfg.channel.model(Some(cfg.training_snr_db()))?,
    )
}

/// Loads the system from `cfg.training.checkpoint` or trains it on `link`.
pub fn train_system(cfg: &ExperimentConfig, link: &Link) -> Result<Prepared> {
    cfg.validate()?;
    match &cfg.training.checkpoint {
        Some(dir) => Ok(Prepared {
            transceiver: Transceiver::load(cfg.system, dir)?,
            traces: Vec::new(),
            counters: DeploymentCounter::default(),
            wgan: None,
        }),
        None => prepare_system(cfg.system, link, &cfg.training, cfg.seed),
    }
}

/// Writes constellation, counters, traces, WGAN reports and checkpoints of
/// a prepared system into `cfg.out_dir` and lists them in `manifest`.
pub fn write_training_artifacts(
    cfg: &ExperimentConfig,
    link: &Link,
    prepared: &Prepared,
    manifest: &mut Manifest,
) -> Result<()> {
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out)?;
    let t = &prepared.transceiver;
    manifest.field("system", cfg.system);
    manifest.field("seed", cfg.seed);
    manifest.field("channel", link.channel().describe());
    manifest.field("training_snr_db", cfg.training_snr_db());
    manifest.field("tx_fingerprint", hex(&t.tx.fingerprint()?));
    manifest.field(
        "tx_weight_deployments",
        prepared.counters.tx_weight_deployments,
    );
    manifest.field("feedback_messages", prepared.counters.feedback_messages);
    if let Some(dir) = &cfg.training.checkpoint {
        manifest.field("loaded_checkpoint", dir.display());
    }
    manifest.write_artifact(
        out,
        "constellation.csv",
        &csv(|w| export_constellation(&t.tx, w))?,
    )?;
    manifest.write_artifact(
        out,
        "counters.csv",
        &counters_csv(cfg.system, &prepared.counters),
    )?;
    for (name, trace) in &prepared.traces {
        manifest.write_artifact(
            out,
            &format!("trace_{name}.csv"),
            &csv(|w| trace.write_csv(w))?,
        )?;
    }
    if let Some(w) = &prepared.wgan {
        write_wgan_artifacts(w, link, cfg.seed, out, manifest)?;
    }
    let ckpt = out.join("checkpoint");
    t.save(&ckpt)?;
    for name in [TX_CHECKPOINT, RX_CHECKPOINT] {
        if ckpt.join(name).is_file() {
            manifest.add_file(out, &format!("checkpoint/{name}"))?;
        }
    }
    Ok(())
}

/// Trains (or loads) the configured system and writes its artifacts and
/// `manifest.txt` without sweeping.
pub fn run_training(cfg: &ExperimentConfig) -> Result<(Prepared, Manifest)> {
    let link = training_link(cfg)?;
    let prepared = train_system(cfg, &link)?;
    let mut manifest = Manifest::default();
    write_training_artifacts(cfg, &link, &prepared, &mut manifest)?;
    manifest.save(&cfg.out_dir)?;
    Ok((prepared, manifest))
}

/// Trains (or loads) the configured system, runs the BER sweep and writes
/// `ber.csv` next to the training artifacts and `manifest.txt` in
/// `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let link = training_link(cfg)?;
    let prepared = train_system(cfg, &link)?;
    let code = ParityCheck::ieee80211n_1296_r12();
    let t = &prepared.transceiver;
    let eval_seed = cfg.seed ^ EVAL_STREAM;
    let report = ber_sweep(
        cfg.system.as_str(),
        &t.tx,
        &t.rx,
        &link,
        &code,
        &cfg.sweep,
        eval_seed,
    )?;
    let mut manifest = Manifest::default();
    write_training_artifacts(cfg, &link, &prepared, &mut manifest)?;
    manifest.field("eval_seed", eval_seed);
    manifest.field("n_idd", cfg.sweep.n_idd);
    manifest.write_artifact(&cfg.out_dir, "ber.csv", &csv(|w| report.write_csv(w))?)?;
    manifest.save(&cfg.out_dir)?;
    Ok(ExperimentOutcome {
        system: cfg.system,
        report,
        counters: prepared.counters,
        tx_fingerprint: t.tx.fingerprint()?,
        out_dir: cfg.out_dir.clone(),
        manifest,
    })
}

fn counters_csv(system: SystemId, c: &DeploymentCounter) -> Vec<u8> {
    format!(
        "system,tx_weight_deployments,feedback_messages\n{system},{},{}\n",
        c.tx_weight_deployments, c.feedback_messages
    )
    .into_bytes()
}

/// Generator checkpoint, WGAN trace and dataset/generator frequency
/// responses on fresh Gray-QAM recordings made in the generator's frame.
pub fn write_wgan_artifacts(
    w: &WganArtifacts,
    link: &Link,
    seed: u64,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    manifest.write_artifact(out, "wgan_trace.csv", &csv(|b| w.trace.write_csv(b))?)?;
    manifest.field("wgan_mode_ratio", format!("{:.6}", w.diagnostic.ratio));
    manifest.field("wgan_selected_step", w.selected_step);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    let ofdm = Ofdm::new(link.ofdm().config().clone())?;
    let data = record_dataset(
        &gray_qam(4)?,
        link.channel(),
        &ofdm,
        RESPONSE_SYMBOLS,
        link.channel().has_random_phase(),
        &mut rng,
    )?;
    let real = freq_response_report(
        ResponseSource::Dataset(&data),
        &ofdm,
        RESPONSE_SYMBOLS,
        &mut rng,
    )?;
    let generated = freq_response_report(
        ResponseSource::Generator {
            generator: &w.generator,
            conditions: &data,
        },
        &ofdm,
        RESPONSE_SYMBOLS,
        &mut rng,
    )?;
    let cfg = ofdm.config();
    manifest.write_artifact(
        out,
        "freq_response_dataset.csv",
        &csv(|b| real.write_csv(cfg, b))?,
    )?;
    manifest.write_artifact(
        out,
        "freq_response_generator.csv",
        &csv(|b| generated.write_csv(cfg, b))?,
    )?;
    w.generator.store().save(out.join("generator.ckpt"))?;
    manifest.add_file(out, "generator.ckpt")
}

/// Runs every system in `systems` with the shared channel, sweep and seed
/// of `base`, each into `base.out_dir/<system>`, and writes
/// `comparison.csv` with BER intervals and deployment counters.
pub fn compare_systems(
    base: &ExperimentConfig,
    systems: &[SystemId],
) -> Result<Vec<ExperimentOutcome>> {
    let mut outcomes = Vec::with_capacity(systems.len());
    for &system in systems {
        let cfg = ExperimentConfig {
            system,
            out_dir: base.out_dir.join(system.as_str()),
            ..base.clone()
        };
        outcomes.push(run_experiment(&cfg)?);
    }
    std::fs::create_dir_all(&base.out_dir)?;
    let mut f = std::fs::File::create(base.out_dir.join("comparison.csv"))?;
    write_comparison(&outcomes, &mut f)?;
    Ok(outcomes)
}

/// CSV with one row per system and SNR point.
pub fn write_comparison<W: Write>(outcomes: &[ExperimentOutcome], mut w: W) -> Result<()> {
    writeln!(
        w,
        "system,snr_db,bits,bit_errors,ber,wilson_low,wilson_high,tx_weight_deployments,feedback_messages"
    )?;
    for o in outcomes {
        for p in &o.report.points {
            writeln!(
                w,
                "{},{},{},{},{:.6e},{:.6e},{:.6e},{},{}",
                o.system,
                p.snr_db,
                p.bits,
                p.bit_errors,
                p.ber(),
                p.wilson_low,
                p.wilson_high,
                o.counters.tx_weight_deployments,
                o.counters.feedback_messages
            )?;
        }
    }
    Ok(())
}
