//! Experiment orchestration: configuration, training recipes for the five
//! compared systems, BER sweeps and report artifacts.

mod config;
mod experiment;
mod report;
mod sweep;
mod systems;

pub use config::{
    ChannelFamily, ChannelSpec, ExperimentConfig, SweepSpec, SystemId, TrainingSpec,
    MAX_BITS_FACTOR,
};
pub use experiment::{
    compare_systems, run_experiment, run_training, train_system, training_link, write_comparison,
    write_training_artifacts, write_wgan_artifacts, ExperimentOutcome,
};
pub use report::{
    export_constellation, freq_response_report, hex, sha256_hex, Manifest, ResponseSource,
    MANIFEST_FILE, RESPONSE_FLOOR,
};
pub use sweep::{ber_sweep, wilson_interval, BerPoint, BerReport, WILSON_Z};
pub use systems::{
    prepare_system, Prepared, Receiver, Transceiver, WganArtifacts, BITS_PER_SYMBOL, RX_CHECKPOINT,
    TX_CHECKPOINT,
};
