use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aircomm::autoencoder::gray_qam;
use aircomm::channels::{record_dataset, ChannelDataset};
use aircomm::harness::{
    compare_systems, export_constellation, freq_response_report, hex, run_experiment, run_training,
    training_link, ExperimentConfig, Manifest, ResponseSource, SystemId, Transceiver,
};
use aircomm::ofdm::Ofdm;
use aircomm::wgan::{wgan_train, Generator, WganConfig};
use aircomm::Result;
use aircomm_nn::ParamStore;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DATASET_FILE: &str = "dataset.bin";
const GENERATOR_FILE: &str = "generator.ckpt";

#[derive(Parser)]
#[command(
    name = "aircomm",
    version,
    about = "OFDM autoencoder experiments: training, WGAN channel models and BER sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the system of the config.
    #[arg(long)]
    system: Option<SystemId>,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or load) a system and write checkpoints, traces and constellation.
    Train(Common),
    /// Record a channel dataset with Gray 16-QAM on the training link; phase
    /// zero-forced when the link has random taps or CFO.
    Record {
        #[command(flatten)]
        common: Common,
        /// OFDM symbols to record; defaults to the WGAN dataset size.
        #[arg(long)]
        symbols: Option<usize>,
    },
    /// Train a WGAN channel model on a recorded dataset.
    Wgan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Overrides the WGAN step count of the config.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train (or load with --checkpoint) a system and run the BER sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Directory holding tx.ckpt and rx.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Frequency-response and constellation reports from saved artifacts.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Generator checkpoint; needs --dataset for its conditions.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Directory holding tx.ckpt (and rx.ckpt for neural systems).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// OFDM symbols averaged in frequency-response reports.
        #[arg(long, default_value_t = 10_000)]
        symbols: usize,
    },
    /// Run several systems with one channel, sweep and seed.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated system ids; all five by default.
        #[arg(long, value_delimiter = ',')]
        systems: Vec<SystemId>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(SystemId::QamBaseline),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(system) = c.system {
        cfg.system = system;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_generator(path: &Path) -> Result<Generator<f32>> {
    let w = WganConfig::default();
    let mut g = Generator::new(
        w.n_z,
        w.filters,
        w.kernel,
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    g.store_mut().assign_from(&read_store(path)?)?;
    Ok(g)
}

fn read_store(path: &Path) -> Result<ParamStore<f32>> {
    if !path.is_file() {
        return Err(aircomm::Error::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(ParamStore::load(path)?)
}

fn write_csv<F>(manifest: &mut Manifest, dir: &Path, name: &str, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    manifest.write_artifact(dir, name, &buf)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let (prepared, _) = run_training(&cfg)?;
            println!(
                "{}: tx_weight_deployments={} feedback_messages={} -> {}",
                cfg.system,
                prepared.counters.tx_weight_deployments,
                prepared.counters.feedback_messages,
                cfg.out_dir.display()
            );
        }
        Command::Record { common, symbols } => {
            let cfg = load_config(&common)?;
            let link = training_link(&cfg)?;
            let n = symbols.unwrap_or(cfg.training.wgan_dataset_symbols);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let points = gray_qam(4)?;
            let zero_force = link.channel().has_random_phase();
            let data = record_dataset(
                &points,
                link.channel(),
                link.ofdm(),
                n,
                zero_force,
                &mut rng,
            )?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            data.save(cfg.out_dir.join(DATASET_FILE))?;
            let mut manifest = Manifest::default();
            manifest.field("seed", cfg.seed);
            manifest.field("channel", &data.description);
            manifest.field("symbols", data.len());
            manifest.field("zero_forced", zero_force);
            manifest.field("tx_fingerprint", hex(&data.fingerprint));
            manifest.add_file(&cfg.out_dir, DATASET_FILE)?;
            manifest.save(&cfg.out_dir)?;
            println!(
                "recorded {} OFDM symbols -> {}",
                data.len(),
                cfg.out_dir.display()
            );
        }
        Command::Wgan {
            common,
            dataset,
            steps,
        } => {
            let cfg = load_config(&common)?;
            let data = ChannelDataset::load(&dataset)?;
            let wcfg = WganConfig {
                max_steps: steps.unwrap_or(cfg.training.wgan_steps),
                seed: cfg.seed,
                ..WganConfig::default()
            };
            let outcome = wgan_train(&data, &wcfg)?;
            let out = &cfg.out_dir;
            std::fs::create_dir_all(out)?;
            let mut manifest = Manifest::default();
            manifest.field("seed", cfg.seed);
            manifest.field("dataset", dataset.display());
            manifest.field("steps", wcfg.max_steps);
            manifest.field(
                "generator_fraction",
                format!("{:.6}", outcome.trace.generator_fraction()),
            );
            write_csv(&mut manifest, out, "wgan_trace.csv", |w| {
                outcome.trace.write_csv(w)
            })?;
            outcome.generator.store().save(out.join(GENERATOR_FILE))?;
            manifest.add_file(out, GENERATOR_FILE)?;
            let ofdm = Ofdm::new(training_link(&cfg)?.ofdm().config().clone())?;
            let n = data.len().min(10_000);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let real = freq_response_report(ResponseSource::Dataset(&data), &ofdm, n, &mut rng)?;
            let gen = freq_response_report(
                ResponseSource::Generator {
                    generator: &outcome.generator,
                    conditions: &data,
                },
                &ofdm,
                n,
                &mut rng,
            )?;
            let (mag, phase) = gen.max_errors(&real);
            manifest.field("max_rel_mag_error", format!("{mag:.6}"));
            manifest.field("max_phase_error_rad", format!("{phase:.6}"));
            write_csv(&mut manifest, out, "freq_response_dataset.csv", |w| {
                real.write_csv(ofdm.config(), w)
            })?;
            write_csv(&mut manifest, out, "freq_response_generator.csv", |w| {
                gen.write_csv(ofdm.config(), w)
            })?;
            manifest.save(out)?;
            println!(
                "generator response error: magnitude {mag:.4}, phase {phase:.4} rad -> {}",
                out.display()
            );
        }
        Command::Sweep { common, checkpoint } => {
            let mut cfg = load_config(&common)?;
            if checkpoint.is_some() {
                cfg.training.checkpoint = checkpoint;
            }
            let outcome = run_experiment(&cfg)?;
            for p in &outcome.report.points {
                println!(
                    "{} snr {} dB: BER {:.3e} [{:.3e}, {:.3e}] over {} bits",
                    outcome.system,
                    p.snr_db,
                    p.ber(),
                    p.wilson_low,
                    p.wilson_high,
                    p.bits
                );
            }
        }
        Command::Report {
            common,
            dataset,
            generator,
            checkpoint,
            symbols,
        } => {
            let cfg = load_config(&common)?;
            let out = &cfg.out_dir;
            std::fs::create_dir_all(out)?;
            let mut manifest = Manifest::default();
            manifest.field("seed", cfg.seed);
            let ofdm = Ofdm::new(training_link(&cfg)?.ofdm().config().clone())?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            if let Some(path) = &dataset {
                let data = ChannelDataset::load(path)?;
                let n = symbols.min(data.len());
                manifest.field("dataset", path.display());
                let real =
                    freq_response_report(ResponseSource::Dataset(&data), &ofdm, n, &mut rng)?;
                write_csv(&mut manifest, out, "freq_response_dataset.csv", |w| {
                    real.write_csv(ofdm.config(), w)
                })?;
                if let Some(gpath) = &generator {
                    let g = load_generator(gpath)?;
                    manifest.field("generator", gpath.display());
                    let gen = freq_response_report(
                        ResponseSource::Generator {
                            generator: &g,
                            conditions: &data,
                        },
                        &ofdm,
                        n,
                        &mut rng,
                    )?;
                    write_csv(&mut manifest, out, "freq_response_generator.csv", |w| {
                        gen.write_csv(ofdm.config(), w)
                    })?;
                }
            } else if generator.is_some() {
                return Err(aircomm::Error::InvalidArgument(
                    "--generator needs --dataset for its conditions".into(),
                ));
            }
            if let Some(dir) = &checkpoint {
                let t = Transceiver::load(cfg.system, dir)?;
                manifest.field("tx_fingerprint", hex(&t.tx.fingerprint()?));
                write_csv(&mut manifest, out, "constellation.csv", |w| {
                    export_constellation(&t.tx, w)
                })?;
            }
            manifest.save(out)?;
            println!("reports -> {}", out.display());
        }
        Command::Compare { common, systems } => {
            let cfg = load_config(&common)?;
            let systems = if systems.is_empty() {
                SystemId::ALL.to_vec()
            } else {
                systems
            };
            for o in compare_systems(&cfg, &systems)? {
                for p in &o.report.points {
                    println!(
                        "{:<13} snr {:>5} dB: BER {:.3e} [{:.3e}, {:.3e}] deployments {} feedback {}",
                        o.system.as_str(),
                        p.snr_db,
                        p.ber(),
                        p.wilson_low,
                        p.wilson_high,
                        o.counters.tx_weight_deployments,
                        o.counters.feedback_messages
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
