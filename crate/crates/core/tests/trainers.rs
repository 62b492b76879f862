use aircomm::autoencoder::{BitMapping, Demapper, Transmitter};
use aircomm::channels::{ChannelKind, ChannelModel};
use aircomm::link::Link;
use aircomm::ofdm::OfdmConfig;
use aircomm::trainers::{
    backprop_tx_gradient, rl_train, rl_transmitter_step, train_end_to_end, wgan_pipeline,
    DeploymentCounter, PipelineConfig, SnrSchedule, TrainConfig, TrainingChannel,
};
use aircomm::wgan::WganConfig;
use aircomm_nn::Tensor;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn quick(steps: usize, snr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_codewords: 1,
        snr: SnrSchedule::Fixed(snr),
        seed: 4,
        ..TrainConfig::default()
    }
}

fn cosine(a: &[Tensor<f64>], b: &[Tensor<f64>]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.data().iter().zip(y.data()) {
            dot += u * v;
            na += u * u;
            nb += v * v;
        }
    }
    dot / (na * nb).sqrt()
}

#[test]
fn end_to_end_training_raises_bmi_from_a_random_table() {
    let mut r = rng(1);
    let table: Vec<Complex64> = (0..16)
        .map(|i| Complex64::from_polar(0.2 + 0.05 * i as f64, 2.4 * i as f64))
        .collect();
    let mut tx = Transmitter::<f32>::new(&table, BitMapping::natural(4)).unwrap();
    let mut rx = Demapper::<f32>::new(4, &mut r).unwrap();
    let trace =
        train_end_to_end(&mut tx, &mut rx, &TrainingChannel::Awgn, &quick(400, 12.0)).unwrap();
    let first = trace.rows[..20].iter().map(|t| t.bmi).sum::<f64>() / 20.0;
    let last = trace.recent_bmi(20).unwrap();
    assert!(last > first + 1.0, "first {first} last {last}");
    let power = tx
        .points_by_label()
        .unwrap()
        .iter()
        .map(|p| p.norm_sqr())
        .sum::<f64>()
        / 16.0;
    assert!((power - 1.0).abs() < 1e-5);
}

#[test]
fn rl_counts_every_deployment_and_feedback_message() {
    let mut r = rng(2);
    let mut tx = Transmitter::<f32>::gray_qam(4, 0.05, &mut r).unwrap();
    let mut rx = Demapper::<f32>::new(4, &mut r).unwrap();
    let cfg = TrainConfig {
        rl_cycles: 3,
        rx_steps_per_cycle: 2,
        tx_steps_per_cycle: 2,
        ..quick(0, 10.0)
    };
    let mut counters = DeploymentCounter::default();
    let trace = rl_train(
        &mut tx,
        &mut rx,
        &TrainingChannel::Awgn,
        &cfg,
        &mut counters,
    )
    .unwrap();
    let n = cfg.batch_symbols(4, TrainingChannel::Awgn.n_used()) as u64;
    assert_eq!(counters.tx_weight_deployments, 6);
    assert_eq!(counters.feedback_messages, 6 * n);
    assert_eq!(trace.rows.len(), 3);
    assert_eq!(trace.rows[2].tx_deployments, 6);
}

#[test]
fn rl_estimate_follows_the_backprop_gradient() {
    let mut r = rng(3);
    let mut tx = Transmitter::<f64>::gray_qam(4, 0.3, &mut r).unwrap();
    let mut rx = Demapper::<f64>::new(4, &mut r).unwrap();
    let pre = TrainConfig {
        lr_tx: 0.0,
        ..quick(300, 20.0)
    };
    train_end_to_end(&mut tx, &mut rx, &TrainingChannel::Awgn, &pre).unwrap();
    let channel = TrainingChannel::Awgn;
    let truth = backprop_tx_gradient(&tx, &rx, &channel, 1 << 14, 20.0, &mut r).unwrap();
    let mut counters = DeploymentCounter::default();
    let est = rl_transmitter_step(
        &tx,
        &rx,
        &channel,
        1 << 13,
        0.02,
        20.0,
        &mut counters,
        &mut r,
    )
    .unwrap();
    let c = cosine(&est.grads, &truth);
    assert!(c > 0.5, "cosine {c}");
    assert_eq!(counters.tx_weight_deployments, 1);
    assert_eq!(counters.feedback_messages, 1 << 13);
}

#[test]
fn real_link_refuses_backpropagation() {
    let link = Link::new(
        OfdmConfig::default(),
        ChannelModel {
            kind: ChannelKind::Awgn,
            snr_db: Some(10.0),
            impairments: Vec::new(),
        },
    )
    .unwrap();
    let mut r = rng(5);
    let mut tx = Transmitter::<f32>::gray_qam(4, 0.0, &mut r).unwrap();
    let mut rx = Demapper::<f32>::new(4, &mut r).unwrap();
    let channel = TrainingChannel::Link(link);
    assert!(train_end_to_end(&mut tx, &mut rx, &channel, &quick(1, 10.0)).is_err());
}

#[test]
fn wgan_pipeline_deploys_once() {
    let link = Link::new(
        OfdmConfig::default(),
        ChannelModel {
            kind: ChannelKind::Awgn,
            snr_db: Some(10.0),
            impairments: Vec::new(),
        },
    )
    .unwrap();
    let mut r = rng(6);
    let mut tx = Transmitter::<f32>::gray_qam(4, 0.0, &mut r).unwrap();
    let mut rx = Demapper::<f32>::new(4, &mut r).unwrap();
    let before = tx.fingerprint().unwrap();
    let cfg = PipelineConfig {
        dataset_symbols: 400,
        wgan: WganConfig {
            max_steps: 30,
            ..WganConfig::default()
        },
        ae: quick(5, 10.0),
        finetune_symbols: Some(1_000),
        finetune: quick(5, 10.0),
        calibration_symbols: 50,
        seed: 7,
    };
    let mut counters = DeploymentCounter::default();
    match wgan_pipeline(&mut tx, &mut rx, &link, &cfg, &mut counters) {
        Ok(out) => {
            assert_eq!(counters.tx_weight_deployments, 1);
            assert_eq!(counters.feedback_messages, 0);
            assert_ne!(tx.fingerprint().unwrap(), before);
            assert_eq!(out.wgan.trace.rows.len(), 30);
            assert!(out.finetune_trace.is_some());
        }
        // a barely trained generator may be flagged; nothing is deployed then
        Err(aircomm::Error::WganCollapsed(_)) => {
            assert_eq!(counters.tx_weight_deployments, 0);
            assert_eq!(tx.fingerprint().unwrap(), before);
        }
        Err(e) => panic!("{e}"),
    }
}
