//! Transmitter and receiver training: end-to-end through a differentiable
//! channel, receiver finetuning on recorded data, reinforcement learning of
//! the transmitter over a non-differentiable link, and the one-shot WGAN
//! pipeline, with exact accounting of transmitter weight deployments.

use std::f64::consts::PI;
use std::io::Write;

use aircomm_nn::{Adam, Graph, Real, Tensor, Var};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autoencoder::{
    bce_terms, bmi, bmi_from_bce, label_bit, n0_from_snr_db, softplus, Demapper, Transmitter,
};
use crate::channels::{complex_normal, random_unit_taps, record_dataset};
use crate::error::{check_len, Error, Result};
use crate::ldpc::SoftDemapper;
use crate::link::Link;
use crate::ofdm::{estimate_snr_evm, Ofdm, OfdmConfig};
use crate::wgan::{
    mode_diagnostic, wgan_train, Generator, ModeDiagnostic, WganConfig, WganOutcome,
};

/// OFDM symbols per SNR calibration burst during training on a link.
const TRAIN_CALIBRATION_SYMBOLS: usize = 100;

/// SNR drawn once per training batch.
#[derive(Clone, Debug, PartialEq)]
pub enum SnrSchedule {
    Fixed(f64),
    Uniform { low: f64, high: f64 },
}

impl SnrSchedule {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrSchedule::Fixed(s) => s,
            SnrSchedule::Uniform { low, high } => rng.random_range(low..=high),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SnrSchedule::Fixed(s) if s.is_finite() => Ok(()),
            SnrSchedule::Uniform { low, high }
                if low.is_finite() && high.is_finite() && low <= high =>
            {
                Ok(())
            }
            _ => Err(Error::Config(format!("invalid SNR schedule {self:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Codewords per batch (at least one).
    pub batch_codewords: usize,
    pub codeword_bits: usize,
    pub lr_tx: f64,
    pub lr_rx: f64,
    /// Optimiser steps of end-to-end training and of receiver finetuning.
    pub steps: usize,
    /// Alternation cycles of reinforcement learning.
    pub rl_cycles: usize,
    /// Receiver updates per cycle.
    pub rx_steps_per_cycle: usize,
    /// Transmitter updates per cycle.
    pub tx_steps_per_cycle: usize,
    /// Std of the complex exploration noise added to transmitted symbols.
    pub sigma_w: f64,
    pub snr: SnrSchedule,
    /// Fraction of training symbols that receive synthetic a-priori LLRs.
    pub prior_fraction: f64,
    /// A-priori LLRs are drawn as `N(s sigma^2 / 2, sigma^2)` with `sigma`
    /// uniform on `[0, prior_sigma_max]`.
    pub prior_sigma_max: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_codewords: 4,
            codeword_bits: 1296,
            lr_tx: 1e-3,
            lr_rx: 1e-3,
            steps: 5000,
            rl_cycles: 1000,
            rx_steps_per_cycle: 10,
            tx_steps_per_cycle: 1,
            sigma_w: 0.02,
            snr: SnrSchedule::Fixed(12.0),
            prior_fraction: 0.5,
            prior_sigma_max: 6.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_codewords == 0 || self.codeword_bits == 0 {
            return bad("a batch holds at least one codeword");
        }
        for (name, lr) in [("lr_tx", self.lr_tx), ("lr_rx", self.lr_rx)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.prior_fraction) || !(self.prior_sigma_max >= 0.0) {
            return bad("prior_fraction must lie in [0, 1] and prior_sigma_max be >= 0");
        }
        if !self.sigma_w.is_finite() || self.sigma_w < 0.0 {
            return bad("sigma_w must be finite and >= 0");
        }
        self.snr.validate()
    }

    /// Symbols per batch: whole codewords rounded up to whole OFDM symbols.
    pub fn batch_symbols(&self, m: usize, n_used: usize) -> usize {
        let symbols = (self.batch_codewords * self.codeword_bits).div_ceil(m);
        symbols.div_ceil(n_used) * n_used
    }
}

/// Transmitter-side weight changes and receiver-to-transmitter feedback.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DeploymentCounter {
    pub tx_weight_deployments: u64,
    /// One message per per-example loss reported back to the transmitter.
    pub feedback_messages: u64,
}

impl DeploymentCounter {
    pub fn deploy(&mut self) {
        self.tx_weight_deployments += 1;
    }

    pub fn feedback(&mut self, messages: usize) {
        self.feedback_messages += messages as u64;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Mean binary cross-entropy in nats.
    pub loss: f64,
    /// BMI of the symbols trained without a-priori input.
    pub bmi: f64,
    pub tx_deployments: u64,
    pub feedback_msgs: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,loss,bmi,tx_deployments,feedback_msgs")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.8},{:.6},{},{}",
                r.step, r.loss, r.bmi, r.tx_deployments, r.feedback_msgs
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Mean BMI over the last `window` rows.
    pub fn recent_bmi(&self, window: usize) -> Option<f64> {
        let tail = &self.rows[self.rows.len().saturating_sub(window)..];
        (!tail.is_empty()).then(|| tail.iter().map(|r| r.bmi).sum::<f64>() / tail.len() as f64)
    }
}

/// Channel seen by a trainer.
#[derive(Clone, Debug)]
pub enum TrainingChannel {
    /// Frequency-domain AWGN at the batch SNR.
    Awgn,
    /// Fresh unit-power taps per OFDM symbol, genie MMSE equalisation.
    Tdl { ofdm: Ofdm, n_taps: usize },
    /// A trained WGAN generator.
    Generator(Box<GeneratorChannel>),
    /// The simulated real channel; usable only by sampling.
    Link(Link),
}

/// Equalised channel output inside a graph.
#[derive(Clone, Debug)]
pub struct ChannelPass {
    /// `[n, 2]` equalised symbols.
    pub y: Var,
    /// Demapper SNR input per symbol.
    pub snr_db: Vec<f64>,
}

impl TrainingChannel {
    pub fn tdl(cfg: OfdmConfig, n_taps: usize) -> Result<Self> {
        if n_taps == 0 || n_taps > cfg.cp_len + 1 {
            return Err(Error::InvalidArgument(format!(
                "{n_taps} taps do not fit the cyclic prefix"
            )));
        }
        Ok(Self::Tdl {
            ofdm: Ofdm::new(cfg)?,
            n_taps,
        })
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, TrainingChannel::Link(_))
    }

    /// Used bins per OFDM symbol, which batches must fill.
    pub fn n_used(&self) -> usize {
        match self {
            TrainingChannel::Awgn => OfdmConfig::default().n_used(),
            TrainingChannel::Tdl { ofdm, .. } => ofdm.config().n_used(),
            TrainingChannel::Generator(gc) => gc.cfg.n_used(),
            TrainingChannel::Link(link) => link.ofdm().config().n_used(),
        }
    }

    /// Differentiable pass of `x: [n, 2]`.
    pub fn pass<T: Real, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        snr_db: f64,
        rng: &mut R,
    ) -> Result<ChannelPass> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != 2 {
            return Err(Error::InvalidArgument(format!(
                "channel input must be [n, 2], got {shape:?}"
            )));
        }
        let n = shape[0];
        match self {
            TrainingChannel::Awgn => {
                let noise = Tensor::randn(&[n, 2], (n0_from_snr_db(snr_db) / 2.0).sqrt(), rng);
                let noise = g.constant(noise);
                Ok(ChannelPass {
                    y: g.add(x, noise)?,
                    snr_db: vec![snr_db; n],
                })
            }
            TrainingChannel::Tdl { ofdm, n_taps } => {
                let n0 = n0_from_snr_db(snr_db);
                let nu = ofdm.config().n_used();
                let mut gain = Vec::with_capacity(n);
                let mut offset = Vec::with_capacity(2 * n);
                let mut snr = Vec::with_capacity(n);
                for frame in 0..n.div_ceil(nu) {
                    let h = ofdm.tap_response(&random_unit_taps(rng, *n_taps));
                    for &hk in h.iter().take(n - frame * nu) {
                        let den = hk.norm_sqr() + n0;
                        let c = hk.conj() * complex_normal(rng, n0) / den;
                        gain.push((hk.norm_sqr() / den, 0.0));
                        offset.extend([c.re, c.im]);
                        snr.push(10.0 * (1.0 + hk.norm_sqr() / n0).log10());
                    }
                }
                let scaled = g.complex_mul(x, &gain)?;
                let offset = g.constant(Tensor::from_f64(&[n, 2], &offset)?);
                Ok(ChannelPass {
                    y: g.add(scaled, offset)?,
                    snr_db: snr,
                })
            }
            TrainingChannel::Generator(gc) => gc.pass(g, x, rng),
            TrainingChannel::Link(_) => {
                Err(Error::NotDifferentiable("the simulated real link".into()))
            }
        }
    }

    /// Graph-free channel output for known symbols, with the demapper SNR
    /// input. `points` is the constellation in use (link padding and SNR
    /// calibration).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        x: &[Complex64],
        points: &[Complex64],
        snr_db: f64,
        rng: &mut R,
    ) -> Result<(Vec<Complex64>, Vec<f64>)> {
        match self {
            TrainingChannel::Link(link) => {
                let bins = link.calibrate(points, TRAIN_CALIBRATION_SYMBOLS, rng)?;
                let y = link.transmit(x, points, rng)?;
                let snr = link.per_symbol_snr(&bins, y.len());
                Ok((y, snr))
            }
            _ => {
                let mut g = Graph::<f64>::new();
                let flat: Vec<f64> = x.iter().flat_map(|v| [v.re, v.im]).collect();
                let xv = g.constant(Tensor::from_f64(&[x.len(), 2], &flat)?);
                let pass = self.pass(&mut g, xv, snr_db, rng)?;
                let y = g
                    .value(pass.y)
                    .data()
                    .chunks_exact(2)
                    .map(|c| Complex64::new(c[0], c[1]))
                    .collect();
                Ok((y, pass.snr_db))
            }
        }
    }
}

/// A frozen WGAN generator wrapped as a differentiable OFDM channel.
///
/// For a generator trained on zero-forced records, symbols are rotated so
/// that the first used bin of each OFDM symbol has zero phase, then rotated
/// back after the generator; the angle is treated as a constant. Symbols are
/// modulated, passed through the generator, demodulated and MMSE-equalised.
#[derive(Clone, Debug)]
pub struct GeneratorChannel {
    generator: Generator<f32>,
    cfg: OfdmConfig,
    /// `[2 n_used, 2 len]`, interleaved (re, im) bins to (re row, im row) samples.
    modulation: Vec<f64>,
    /// `[2 len, 2 n_used]`.
    demodulation: Vec<f64>,
    /// Per-bin MMSE coefficient in the generator's frame.
    equalizer: Vec<Complex64>,
    /// The generator was trained on phase zero-forced records.
    zero_forced: bool,
    snr_db: Vec<f64>,
}

impl GeneratorChannel {
    /// Calibrates on `calibration_symbols` OFDM symbols of random `points`.
    ///
    /// `response` is the genie linear response per used bin; without it the
    /// least-squares response of the generator is used. Either way the MMSE
    /// noise term is the generator's residual around its least-squares fit.
    /// `zero_forced` must match how the generator's training records were made.
    pub fn new<R: Rng + ?Sized>(
        generator: Generator<f32>,
        cfg: OfdmConfig,
        zero_forced: bool,
        response: Option<&[Complex64]>,
        points: &[Complex64],
        calibration_symbols: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let ofdm = Ofdm::new(cfg.clone())?;
        let (nu, len) = (cfg.n_used(), cfg.symbol_len());
        if points.is_empty() || calibration_symbols == 0 {
            return Err(Error::InvalidArgument(
                "generator calibration needs points and symbols".into(),
            ));
        }
        if let Some(r) = response {
            check_len("channel response", nu, r.len())?;
        }
        let (modulation, demodulation) = dft_matrices(&cfg);

        let data: Vec<Complex64> = (0..calibration_symbols * nu)
            .map(|_| points[rng.random_range(0..points.len())])
            .collect();
        let mut time = ofdm.modulate(&data)?;
        if zero_forced {
            for sym in time.chunks_exact_mut(len) {
                ofdm.zero_force_phase(sym)?;
            }
        }
        let x = ofdm.demodulate(&time)?;
        let y = ofdm.demodulate(&generator.generate(&time, len, rng)?)?;

        let mut cross = vec![Complex64::default(); nu];
        let mut power = vec![0.0; nu];
        for (i, (xi, yi)) in x.iter().zip(&y).enumerate() {
            cross[i % nu] += yi * xi.conj();
            power[i % nu] += xi.norm_sqr();
        }
        let ls: Vec<Complex64> = cross.iter().zip(&power).map(|(c, p)| c / *p).collect();
        let mut resid = vec![0.0; nu];
        for (i, (xi, yi)) in x.iter().zip(&y).enumerate() {
            resid[i % nu] += (yi - ls[i % nu] * xi).norm_sqr();
        }
        let per_bin = (x.len() / nu) as f64;
        let equalizer: Vec<Complex64> = (0..nu)
            .map(|k| {
                let h = match response {
                    Some(r) if zero_forced => r[k] * Complex64::from_polar(1.0, -r[0].arg()),
                    Some(r) => r[k],
                    None => ls[k],
                };
                h.conj() / (h.norm_sqr() + resid[k] / per_bin)
            })
            .collect();
        let eq: Vec<Complex64> = y
            .iter()
            .enumerate()
            .map(|(i, v)| v * equalizer[i % nu])
            .collect();
        let bins: Vec<usize> = (0..x.len()).map(|i| i % nu).collect();
        let snr_db = estimate_snr_evm(&x, &eq, &bins, nu)?
            .into_iter()
            .map(|s| 10.0 * s.log10())
            .collect();
        Ok(Self {
            generator,
            cfg,
            modulation,
            demodulation,
            equalizer,
            zero_forced,
            snr_db,
        })
    }

    pub fn snr_db(&self) -> &[f64] {
        &self.snr_db
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    fn pass<T: Real, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        rng: &mut R,
    ) -> Result<ChannelPass> {
        let (nu, len) = (self.cfg.n_used(), self.cfg.symbol_len());
        let n = g.shape(x)[0];
        if n == 0 || !n.is_multiple_of(nu) {
            return Err(Error::InvalidArgument(format!(
                "{n} symbols do not fill whole OFDM symbols of {nu} bins"
            )));
        }
        let s = n / nu;
        let phase: Vec<f64> = if self.zero_forced {
            g.value(x)
                .to_f64_vec()
                .chunks_exact(2 * nu)
                .map(|sym| sym[1].atan2(sym[0]))
                .collect()
        } else {
            vec![0.0; s]
        };
        let rotate: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let r = Complex64::from_polar(1.0, -phase[i / nu]);
                (r.re, r.im)
            })
            .collect();
        let restore: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let c = Complex64::from_polar(1.0, phase[i / nu]) * self.equalizer[i % nu];
                (c.re, c.im)
            })
            .collect();
        let modulation = g.constant(Tensor::from_f64(&[2 * nu, 2 * len], &self.modulation)?);
        let demodulation = g.constant(Tensor::from_f64(&[2 * len, 2 * nu], &self.demodulation)?);

        let xr = g.complex_mul(x, &rotate)?;
        let xr = g.reshape(xr, &[s, 2 * nu])?;
        let xt = g.matmul(xr, modulation)?;
        let xt = g.reshape(xt, &[s, 2, len])?;
        let generator = self.generator.cast::<T>();
        let gp = g.frozen_params(generator.store());
        let z = g.constant(Tensor::randn(&[s, generator.n_z(), len], 1.0, rng));
        let yt = generator.forward(g, &gp, xt, z)?;
        let yt = g.reshape(yt, &[s, 2 * len])?;
        let yf = g.matmul(yt, demodulation)?;
        let yf = g.reshape(yf, &[n, 2])?;
        Ok(ChannelPass {
            y: g.complex_mul(yf, &restore)?,
            snr_db: (0..n).map(|i| self.snr_db[i % nu]).collect(),
        })
    }
}

/// Real matrices of the unitary OFDM modulator (with prefix) and demodulator.
fn dft_matrices(cfg: &OfdmConfig) -> (Vec<f64>, Vec<f64>) {
    let (nu, nf, cp, len) = (cfg.n_used(), cfg.n_fft, cfg.cp_len, cfg.symbol_len());
    let scale = 1.0 / (nf as f64).sqrt();
    let mut modulation = vec![0.0; 2 * nu * 2 * len];
    let mut demodulation = vec![0.0; 2 * len * 2 * nu];
    for (i, &b) in cfg.used_bins.iter().enumerate() {
        for t in 0..len {
            let n = (t + nf - cp) % nf;
            let theta = 2.0 * PI * (b * n) as f64 / nf as f64;
            let (sn, cs) = (theta.sin() * scale, theta.cos() * scale);
            // time = sum_i X_i e^{j theta}
            modulation[(2 * i) * 2 * len + t] = cs;
            modulation[(2 * i) * 2 * len + len + t] = sn;
            modulation[(2 * i + 1) * 2 * len + t] = -sn;
            modulation[(2 * i + 1) * 2 * len + len + t] = cs;
            if t >= cp {
                // X_i = sum_n y_n e^{-j theta}
                demodulation[t * 2 * nu + 2 * i] = cs;
                demodulation[t * 2 * nu + 2 * i + 1] = -sn;
                demodulation[(len + t) * 2 * nu + 2 * i] = sn;
                demodulation[(len + t) * 2 * nu + 2 * i + 1] = cs;
            }
        }
    }
    (modulation, demodulation)
}

/// Random labels and their MSB-first bits.
fn draw_labels<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> (Vec<usize>, Vec<u8>) {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..1usize << m)).collect();
    let bits = labels
        .iter()
        .flat_map(|&l| (0..m).map(move |k| label_bit(l, k, m)))
        .collect();
    (labels, bits)
}

/// Synthetic a-priori LLRs for a random subset of symbols, so the demapper
/// learns to use decoder feedback. Returns the LLRs and which symbols got them.
fn draw_prior<R: Rng + ?Sized>(
    bits: &[u8],
    m: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<bool>) {
    let mut prior = vec![0.0; bits.len()];
    let mut has = vec![false; bits.len() / m];
    for (i, flag) in has.iter_mut().enumerate() {
        if cfg.prior_sigma_max == 0.0 || rng.random::<f64>() >= cfg.prior_fraction {
            continue;
        }
        *flag = true;
        let sigma = rng.random_range(0.0..=cfg.prior_sigma_max);
        for k in 0..m {
            let s = 1.0 - 2.0 * bits[i * m + k] as f64;
            let noise: f64 = StandardNormal.sample(rng);
            prior[i * m + k] = s * sigma * sigma / 2.0 + sigma * noise;
        }
    }
    (prior, has)
}

/// Mean loss and BMI from per-bit BCE terms; BMI uses prior-free symbols.
fn loss_and_bmi(terms: &[f64], has_prior: &[bool], m: usize) -> (f64, f64) {
    let loss = terms.iter().sum::<f64>() / terms.len() as f64;
    let (mut sum, mut count) = (0.0, 0usize);
    for (sym, &p) in terms.chunks_exact(m).zip(has_prior) {
        if !p {
            sum += sym.iter().sum::<f64>();
            count += m;
        }
    }
    let clean = if count == 0 { loss } else { sum / count as f64 };
    (loss, bmi_from_bce(clean, m))
}

fn check_widths<T: Real>(tx: &Transmitter<T>, rx: &Demapper<T>) -> Result<usize> {
    check_len(
        "receiver bits per symbol",
        tx.bits_per_symbol(),
        rx.bits_per_symbol(),
    )?;
    Ok(tx.bits_per_symbol())
}

fn non_finite(what: &str, step: usize) -> Error {
    Error::Diverged(format!("{what} is not finite at step {step}"))
}

/// Joint training of transmitter and receiver through a differentiable
/// channel; one trace row per step.
pub fn train_end_to_end<T: Real>(
    tx: &mut Transmitter<T>,
    rx: &mut Demapper<T>,
    channel: &TrainingChannel,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if !channel.is_differentiable() {
        return Err(Error::NotDifferentiable(
            "end-to-end training needs a channel model or a generator; the simulated real link"
                .into(),
        ));
    }
    let m = check_widths(tx, rx)?;
    let n = cfg.batch_symbols(m, channel.n_used());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_tx = Adam::new(tx.store(), cfg.lr_tx);
    let mut opt_rx = Adam::new(rx.store(), cfg.lr_rx);
    let mut trace = TrainTrace::default();
    for step in 1..=cfg.steps {
        let (labels, bits) = draw_labels(m, n, &mut rng);
        let (prior, has_prior) = draw_prior(&bits, m, cfg, &mut rng);
        let mut g = Graph::new();
        let tp = g.params(tx.store());
        let rp = g.params(rx.store());
        let x = tx.forward(&mut g, &tp, &labels)?;
        let pass = channel.pass(&mut g, x, cfg.snr.draw(&mut rng), &mut rng)?;
        let prior_v = g.constant(Tensor::from_f64(&[n, m], &prior)?);
        let logits = rx.forward(&mut g, &rp, pass.y, &pass.snr_db, prior_v)?;
        let terms = bce_terms(&mut g, logits, &bits)?;
        let loss = g.mean(terms)?;
        let (loss_v, bmi_v) = loss_and_bmi(&g.value(terms).to_f64_vec(), &has_prior, m);
        if !loss_v.is_finite() {
            return Err(non_finite("end-to-end loss", step));
        }
        let mut targets = rp.vars().to_vec();
        if cfg.lr_tx > 0.0 {
            targets.extend_from_slice(tp.vars());
        }
        let grads = g.backward_wrt(loss, &targets)?;
        if cfg.lr_tx > 0.0 {
            let tx_grads = grads.for_store(&tp, tx.store());
            opt_tx.step(tx.store_mut(), &tx_grads)?;
        }
        let rx_grads = grads.for_store(&rp, rx.store());
        opt_rx.step(rx.store_mut(), &rx_grads)?;
        trace.rows.push(TraceRow {
            step,
            loss: loss_v,
            bmi: bmi_v,
            tx_deployments: 0,
            feedback_msgs: 0,
        });
    }
    Ok(trace)
}

/// Received symbols with labels, recorded at the receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct RxDataset {
    pub m: usize,
    /// Equalised symbols.
    pub y: Vec<Complex64>,
    pub snr_db: Vec<f64>,
    /// `m` MSB-first bits per symbol.
    pub bits: Vec<u8>,
    /// Fingerprint of the transmitter that sent the data.
    pub fingerprint: [u8; 32],
}

impl RxDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Sends `n_symbols` random labels with the deployed transmitter.
pub fn record_rx_dataset<T: Real, R: Rng + ?Sized>(
    tx: &Transmitter<T>,
    channel: &TrainingChannel,
    snr_db: f64,
    n_symbols: usize,
    rng: &mut R,
) -> Result<RxDataset> {
    let m = tx.bits_per_symbol();
    let points = tx.points_by_label()?;
    let (labels, bits) = draw_labels(m, n_symbols, rng);
    let x: Vec<Complex64> = labels.iter().map(|&l| points[l]).collect();
    let (y, snr) = channel.sample(&x, &points, snr_db, rng)?;
    Ok(RxDataset {
        m,
        y,
        snr_db: snr,
        bits,
        fingerprint: tx.fingerprint()?,
    })
}

/// One supervised receiver update on known data; returns (loss, BMI).
#[allow(clippy::too_many_arguments)]
fn rx_update<T: Real, R: Rng + ?Sized>(
    rx: &mut Demapper<T>,
    opt: &mut Adam<T>,
    y: &[Complex64],
    snr_db: &[f64],
    bits: &[u8],
    cfg: &TrainConfig,
    step: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (m, n) = (rx.bits_per_symbol(), y.len());
    let (prior, has_prior) = draw_prior(bits, m, cfg, rng);
    let mut g = Graph::new();
    let rp = g.params(rx.store());
    let flat: Vec<f64> = y.iter().flat_map(|v| [v.re, v.im]).collect();
    let yv = g.constant(Tensor::from_f64(&[n, 2], &flat)?);
    let prior_v = g.constant(Tensor::from_f64(&[n, m], &prior)?);
    let logits = rx.forward(&mut g, &rp, yv, snr_db, prior_v)?;
    let terms = bce_terms(&mut g, logits, bits)?;
    let loss = g.mean(terms)?;
    let (loss_v, bmi_v) = loss_and_bmi(&g.value(terms).to_f64_vec(), &has_prior, m);
    if !loss_v.is_finite() {
        return Err(non_finite("receiver loss", step));
    }
    let grads = g.backward_wrt(loss, rp.vars())?;
    let rx_grads = grads.for_store(&rp, rx.store());
    opt.step(rx.store_mut(), &rx_grads)?;
    Ok((loss_v, bmi_v))
}

/// Supervised receiver training on recorded data; the gradient stops at the
/// channel. Fails if the data came from another transmitter.
pub fn finetune_receiver<T: Real>(
    tx: &Transmitter<T>,
    rx: &mut Demapper<T>,
    data: &RxDataset,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot finetune on an empty dataset".into()));
    }
    let m = check_widths(tx, rx)?;
    check_len("dataset bits per symbol", m, data.m)?;
    let before = tx.fingerprint()?;
    if data.fingerprint != before {
        return Err(Error::Dataset(
            "dataset was recorded with a different transmitter".into(),
        ));
    }
    let n = cfg.batch_symbols(m, 1).min(data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(rx.store(), cfg.lr_rx);
    let mut trace = TrainTrace::default();
    let mut y = Vec::with_capacity(n);
    let mut snr = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n * m);
    for step in 1..=cfg.steps {
        y.clear();
        snr.clear();
        bits.clear();
        for _ in 0..n {
            let i = rng.random_range(0..data.len());
            y.push(data.y[i]);
            snr.push(data.snr_db[i]);
            bits.extend_from_slice(&data.bits[i * m..(i + 1) * m]);
        }
        let (loss, bmi_v) = rx_update(rx, &mut opt, &y, &snr, &bits, cfg, step, &mut rng)?;
        trace.rows.push(TraceRow {
            step,
            loss,
            bmi: bmi_v,
            tx_deployments: 0,
            feedback_msgs: 0,
        });
    }
    assert_eq!(
        tx.fingerprint()?,
        before,
        "finetuning modified the transmitter"
    );
    Ok(trace)
}

/// Score-function estimate of the transmitter gradient.
#[derive(Clone, Debug)]
pub struct RlEstimate<T> {
    /// One tensor per transmitter parameter.
    pub grads: Vec<Tensor<T>>,
    /// Mean per-example loss (nats per symbol) reported by the receiver.
    pub mean_loss: f64,
}

/// Perturbs the transmitted symbols with `CN(0, sigma_w^2)` exploration
/// noise, collects per-symbol receiver losses and returns
/// `grad sum_i (L_i - mean L) log q(x_p,i | x_i) / n`. Counts one deployment
/// and `n` feedback messages.
#[allow(clippy::too_many_arguments)]
pub fn rl_transmitter_step<T: Real, R: Rng + ?Sized>(
    tx: &Transmitter<T>,
    rx: &Demapper<T>,
    channel: &TrainingChannel,
    n: usize,
    sigma_w: f64,
    snr_db: f64,
    counters: &mut DeploymentCounter,
    rng: &mut R,
) -> Result<RlEstimate<T>> {
    let est = score_function_estimate(tx, rx, channel, n, sigma_w, snr_db, true, rng)?;
    counters.deploy();
    counters.feedback(n);
    Ok(est)
}

#[allow(clippy::too_many_arguments)]
fn score_function_estimate<T: Real, R: Rng + ?Sized>(
    tx: &Transmitter<T>,
    rx: &Demapper<T>,
    channel: &TrainingChannel,
    n: usize,
    sigma_w: f64,
    snr_db: f64,
    baseline: bool,
    rng: &mut R,
) -> Result<RlEstimate<T>> {
    if !(sigma_w > 0.0) || !sigma_w.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "exploration std must be > 0, got {sigma_w}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty RL batch".into()));
    }
    let m = check_widths(tx, rx)?;
    let points = tx.points_by_label()?;
    let (labels, bits) = draw_labels(m, n, rng);
    let w: Vec<Complex64> = (0..n)
        .map(|_| complex_normal(rng, sigma_w * sigma_w))
        .collect();
    let x: Vec<Complex64> = labels
        .iter()
        .zip(&w)
        .map(|(&l, wi)| points[l] + wi)
        .collect();
    let (y, snr) = channel.sample(&x, &points, snr_db, rng)?;
    let logits = rx.infer(&y, &snr, &vec![0.0; n * m])?;
    let losses: Vec<f64> = logits
        .chunks_exact(m)
        .zip(bits.chunks_exact(m))
        .map(|(l, b)| {
            l.iter()
                .zip(b)
                .map(|(&l, &c)| softplus(-(1.0 - 2.0 * c as f64) * l))
                .sum()
        })
        .collect();
    let mean_loss = losses.iter().sum::<f64>() / n as f64;
    let reference = if baseline { mean_loss } else { 0.0 };
    // d/dx log q(x + w | x) = 2 w / sigma_w^2 per real coordinate
    let scale = 2.0 / (sigma_w * sigma_w * n as f64);
    let weights: Vec<f64> = losses
        .iter()
        .zip(&w)
        .flat_map(|(l, wi)| {
            let a = (l - reference) * scale;
            [a * wi.re, a * wi.im]
        })
        .collect();
    let mut g = Graph::new();
    let tp = g.params(tx.store());
    let xv = tx.forward(&mut g, &tp, &labels)?;
    let wv = g.constant(Tensor::from_f64(&[n, 2], &weights)?);
    let prod = g.mul(xv, wv)?;
    let surrogate = g.sum(prod)?;
    let grads = g
        .backward_wrt(surrogate, tp.vars())?
        .for_store(&tp, tx.store());
    Ok(RlEstimate { grads, mean_loss })
}

/// Backpropagated transmitter gradient of the mean per-symbol receiver loss
/// (no a-priori input) through a differentiable channel.
pub fn backprop_tx_gradient<T: Real, R: Rng + ?Sized>(
    tx: &Transmitter<T>,
    rx: &Demapper<T>,
    channel: &TrainingChannel,
    n: usize,
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<Tensor<T>>> {
    let m = check_widths(tx, rx)?;
    let (labels, bits) = draw_labels(m, n, rng);
    let mut g = Graph::new();
    let tp = g.params(tx.store());
    let rp = g.frozen_params(rx.store());
    let x = tx.forward(&mut g, &tp, &labels)?;
    let pass = channel.pass(&mut g, x, snr_db, rng)?;
    let prior = g.constant(Tensor::zeros(&[n, m]));
    let logits = rx.forward(&mut g, &rp, pass.y, &pass.snr_db, prior)?;
    let terms = bce_terms(&mut g, logits, &bits)?;
    let total = g.sum(terms)?;
    let loss = g.scale(total, 1.0 / n as f64)?;
    Ok(g.backward_wrt(loss, tp.vars())?.for_store(&tp, tx.store()))
}

/// Alternates receiver updates on unperturbed transmissions with
/// reinforcement-learning transmitter updates; one trace row per cycle.
pub fn rl_train<T: Real>(
    tx: &mut Transmitter<T>,
    rx: &mut Demapper<T>,
    channel: &TrainingChannel,
    cfg: &TrainConfig,
    counters: &mut DeploymentCounter,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if cfg.tx_steps_per_cycle > 0 && !(cfg.sigma_w > 0.0) {
        return Err(Error::Config(
            "train: reinforcement learning needs sigma_w > 0".into(),
        ));
    }
    let m = check_widths(tx, rx)?;
    let n = cfg.batch_symbols(m, channel.n_used());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_tx = Adam::new(tx.store(), cfg.lr_tx);
    let mut opt_rx = Adam::new(rx.store(), cfg.lr_rx);
    let mut trace = TrainTrace::default();
    for cycle in 1..=cfg.rl_cycles {
        let (mut loss, mut bmi_v) = (f64::NAN, f64::NAN);
        for _ in 0..cfg.rx_steps_per_cycle {
            let points = tx.points_by_label()?;
            let (labels, bits) = draw_labels(m, n, &mut rng);
            let x: Vec<Complex64> = labels.iter().map(|&l| points[l]).collect();
            let (y, snr) = channel.sample(&x, &points, cfg.snr.draw(&mut rng), &mut rng)?;
            (loss, bmi_v) = rx_update(rx, &mut opt_rx, &y, &snr, &bits, cfg, cycle, &mut rng)?;
        }
        for _ in 0..cfg.tx_steps_per_cycle {
            let snr = cfg.snr.draw(&mut rng);
            let est =
                rl_transmitter_step(tx, rx, channel, n, cfg.sigma_w, snr, counters, &mut rng)?;
            if !est.mean_loss.is_finite() {
                return Err(non_finite("RL feedback loss", cycle));
            }
            opt_tx.step(tx.store_mut(), &est.grads)?;
        }
        trace.rows.push(TraceRow {
            step: cycle,
            loss,
            bmi: bmi_v,
            tx_deployments: counters.tx_weight_deployments,
            feedback_msgs: counters.feedback_messages,
        });
    }
    Ok(trace)
}

/// BMI of a transmitter and soft demapper without a-priori input.
pub fn evaluate_bmi<R: Rng + ?Sized>(
    points_by_label: &[Complex64],
    demapper: &dyn SoftDemapper,
    channel: &TrainingChannel,
    snr_db: f64,
    n_symbols: usize,
    rng: &mut R,
) -> Result<f64> {
    let m = demapper.bits_per_symbol();
    check_len("constellation size", 1 << m, points_by_label.len())?;
    let (labels, bits) = draw_labels(m, n_symbols, rng);
    let x: Vec<Complex64> = labels.iter().map(|&l| points_by_label[l]).collect();
    let (y, snr) = channel.sample(&x, points_by_label, snr_db, rng)?;
    let mut llr = vec![0.0; n_symbols * m];
    demapper.demap(&y, &snr, &vec![0.0; n_symbols * m], &mut llr)?;
    bmi(&llr, &bits, m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// OFDM symbols recorded for WGAN training.
    pub dataset_symbols: usize,
    pub wgan: WganConfig,
    /// Autoencoder training through the generator.
    pub ae: TrainConfig,
    /// Symbols recorded for receiver finetuning after deployment; `None` skips it.
    pub finetune_symbols: Option<usize>,
    pub finetune: TrainConfig,
    /// OFDM symbols used to calibrate the generator channel.
    pub calibration_symbols: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_symbols: 100_000,
            wgan: WganConfig::default(),
            ae: TrainConfig::default(),
            finetune_symbols: None,
            finetune: TrainConfig::default(),
            calibration_symbols: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub wgan: WganOutcome,
    pub diagnostic: ModeDiagnostic,
    pub ae_trace: TrainTrace,
    pub finetune_trace: Option<TrainTrace>,
}

/// Records a dataset with the frozen transmitter, trains a WGAN channel
/// model on it, trains the autoencoder offline through the generator,
/// deploys the transmitter once and optionally finetunes the receiver on
/// fresh recordings. A mode-collapsed generator is reported as an error.
pub fn wgan_pipeline<T: Real>(
    tx: &mut Transmitter<T>,
    rx: &mut Demapper<T>,
    link: &Link,
    cfg: &PipelineConfig,
    counters: &mut DeploymentCounter,
) -> Result<PipelineOutcome> {
    check_widths(tx, rx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points = tx.points_by_label()?;
    // a deterministic channel phase is kept; zero-forcing it would add the
    // reference bin's noise as a common rotation
    let zero_force = link.channel().has_random_phase();
    let dataset = record_dataset(
        &points,
        link.channel(),
        link.ofdm(),
        cfg.dataset_symbols,
        zero_force,
        &mut rng,
    )?;
    let wgan = wgan_train(&dataset, &cfg.wgan)?;
    let diagnostic = mode_diagnostic(&wgan.generator, &dataset, link.ofdm(), 64, 32, &mut rng)?;
    if diagnostic.collapsed {
        return Err(Error::WganCollapsed(Box::new(diagnostic)));
    }
    let response = link.static_response();
    let channel = TrainingChannel::Generator(Box::new(GeneratorChannel::new(
        wgan.generator.clone(),
        link.ofdm().config().clone(),
        zero_force,
        response.as_deref(),
        &points,
        cfg.calibration_symbols,
        &mut rng,
    )?));
    let mut offline = tx.clone();
    let ae_trace = train_end_to_end(&mut offline, rx, &channel, &cfg.ae)?;
    tx.store_mut().assign_from(offline.store())?;
    counters.deploy();
    let finetune_trace = match cfg.finetune_symbols {
        Some(n) => {
            let real = TrainingChannel::Link(link.clone());
            let snr = cfg.finetune.snr.draw(&mut rng);
            let data = record_rx_dataset(tx, &real, snr, n, &mut rng)?;
            Some(finetune_receiver(tx, rx, &data, &cfg.finetune)?)
        }
        None => None,
    };
    Ok(PipelineOutcome {
        wgan,
        diagnostic,
        ae_trace,
        finetune_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::gray_qam;
    use crate::channels::ChannelModel;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            batch_codewords: 1,
            codeword_bits: 400,
            steps,
            ..TrainConfig::default()
        }
    }

    fn pair(seed: u64) -> (Transmitter<f64>, Demapper<f64>) {
        let mut r = rng(seed);
        (
            Transmitter::gray_qam(4, 0.01, &mut r).unwrap(),
            Demapper::new(4, &mut r).unwrap(),
        )
    }

    fn zeroed(rx: &mut Demapper<f64>) {
        let ids: Vec<_> = rx.store().ids().collect();
        for id in ids {
            rx.store_mut().get_mut(id).data_mut().fill(0.0);
        }
    }

    fn norm(grads: &[Tensor<f64>]) -> f64 {
        grads
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn dft_matrices_match_the_modulator() {
        let cfg = OfdmConfig::default();
        let ofdm = Ofdm::new(cfg.clone()).unwrap();
        let (modulation, demodulation) = dft_matrices(&cfg);
        let (nu, len) = (cfg.n_used(), cfg.symbol_len());
        let mut r = rng(1);
        let data: Vec<Complex64> = (0..nu).map(|_| complex_normal(&mut r, 1.0)).collect();
        let time = ofdm.modulate(&data).unwrap();
        let flat: Vec<f64> = data.iter().flat_map(|v| [v.re, v.im]).collect();
        for t in 0..len {
            let re: f64 = (0..2 * nu)
                .map(|i| flat[i] * modulation[i * 2 * len + t])
                .sum();
            let im: f64 = (0..2 * nu)
                .map(|i| flat[i] * modulation[i * 2 * len + len + t])
                .sum();
            assert!((Complex64::new(re, im) - time[t]).norm() < 1e-12);
        }
        let packed: Vec<f64> = time
            .iter()
            .map(|v| v.re)
            .chain(time.iter().map(|v| v.im))
            .collect();
        for j in 0..2 * nu {
            let v: f64 = (0..2 * len)
                .map(|t| packed[t] * demodulation[t * 2 * nu + j])
                .sum();
            assert!((v - flat[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn tdl_pass_is_affine_with_genie_snr() {
        let ch = TrainingChannel::tdl(OfdmConfig::default(), 3).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.input("x", Tensor::from_f64(&[60, 2], &[0.5; 120]).unwrap());
        let pass = ch.pass(&mut g, x, 30.0, &mut rng(2)).unwrap();
        assert_eq!(g.shape(pass.y), &[60, 2]);
        assert_eq!(pass.snr_db.len(), 60);
        // at 30 dB the MMSE output is close to the input for most symbols
        let close = g
            .value(pass.y)
            .data()
            .chunks_exact(2)
            .filter(|c| (c[0] - 0.5).abs() < 0.2 && (c[1] - 0.5).abs() < 0.2)
            .count();
        assert!(close > 40, "{close}");
        assert!(pass.snr_db.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn real_link_is_not_differentiable() {
        let link = Link::new(OfdmConfig::default(), ChannelModel::awgn(10.0)).unwrap();
        let (mut tx, mut rx) = pair(3);
        let err = train_end_to_end(
            &mut tx,
            &mut rx,
            &TrainingChannel::Link(link),
            &small_cfg(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotDifferentiable(_)), "{err}");
    }

    #[test]
    fn zero_learning_rates_keep_parameters() {
        let (mut tx, mut rx) = pair(4);
        let (tx0, rx0) = (tx.store().flatten(), rx.store().flatten());
        let cfg = TrainConfig {
            lr_tx: 0.0,
            lr_rx: 0.0,
            ..small_cfg(3)
        };
        train_end_to_end(&mut tx, &mut rx, &TrainingChannel::Awgn, &cfg).unwrap();
        assert_eq!(tx.store().flatten(), tx0);
        assert_eq!(rx.store().flatten(), rx0);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let run = || {
            let (mut tx, mut rx) = pair(5);
            train_end_to_end(&mut tx, &mut rx, &TrainingChannel::Awgn, &small_cfg(4)).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
    }

    #[test]
    fn trace_csv_layout() {
        let trace = TrainTrace {
            rows: vec![TraceRow {
                step: 1,
                loss: 0.5,
                bmi: 2.0,
                tx_deployments: 3,
                feedback_msgs: 7,
            }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,loss,bmi,tx_deployments,feedback_msgs\n1,0.50000000,2.000000,3,7\n"
        );
    }

    #[test]
    fn rl_step_rejects_zero_exploration_and_counts() {
        let (tx, rx) = pair(6);
        let mut counters = DeploymentCounter::default();
        let mut r = rng(6);
        assert!(rl_transmitter_step(
            &tx,
            &rx,
            &TrainingChannel::Awgn,
            64,
            0.0,
            10.0,
            &mut counters,
            &mut r
        )
        .is_err());
        assert_eq!(counters, DeploymentCounter::default());
        rl_transmitter_step(
            &tx,
            &rx,
            &TrainingChannel::Awgn,
            64,
            0.02,
            10.0,
            &mut counters,
            &mut r,
        )
        .unwrap();
        assert_eq!(counters.tx_weight_deployments, 1);
        assert_eq!(counters.feedback_messages, 64);
    }

    #[test]
    fn baseline_cancels_constant_losses() {
        let (tx, mut rx) = pair(7);
        zeroed(&mut rx);
        let ch = TrainingChannel::Awgn;
        let with =
            score_function_estimate(&tx, &rx, &ch, 4096, 0.02, 10.0, true, &mut rng(8)).unwrap();
        let without =
            score_function_estimate(&tx, &rx, &ch, 4096, 0.02, 10.0, false, &mut rng(8)).unwrap();
        assert!((with.mean_loss - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(norm(&without.grads) > 0.0);
        assert!(norm(&with.grads) < 1e-3 * norm(&without.grads));
    }

    #[test]
    fn rx_only_alternation_keeps_transmitter() {
        let link = Link::new(OfdmConfig::default(), ChannelModel::awgn(10.0)).unwrap();
        let (mut tx, mut rx) = pair(9);
        let before = tx.fingerprint().unwrap();
        let cfg = TrainConfig {
            rl_cycles: 2,
            rx_steps_per_cycle: 1,
            tx_steps_per_cycle: 0,
            ..small_cfg(0)
        };
        let mut counters = DeploymentCounter::default();
        let trace = rl_train(
            &mut tx,
            &mut rx,
            &TrainingChannel::Link(link),
            &cfg,
            &mut counters,
        )
        .unwrap();
        assert_eq!(tx.fingerprint().unwrap(), before);
        assert_eq!(counters, DeploymentCounter::default());
        assert_eq!(trace.rows.len(), 2);
    }

    #[test]
    fn finetune_checks_its_data() {
        let (tx, mut rx) = pair(10);
        let (other, _) = pair(11);
        let mut r = rng(10);
        let data = record_rx_dataset(&other, &TrainingChannel::Awgn, 10.0, 100, &mut r).unwrap();
        assert!(matches!(
            finetune_receiver(&tx, &mut rx, &data, &small_cfg(1)),
            Err(Error::Dataset(_))
        ));
        let empty = RxDataset {
            y: Vec::new(),
            snr_db: Vec::new(),
            bits: Vec::new(),
            ..record_rx_dataset(&tx, &TrainingChannel::Awgn, 10.0, 1, &mut r).unwrap()
        };
        assert!(matches!(
            finetune_receiver(&tx, &mut rx, &empty, &small_cfg(1)),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn finetuning_on_noiseless_data_decodes_exactly() {
        let mut r = rng(12);
        let tx = Transmitter::<f64>::new(
            &gray_qam(4).unwrap(),
            crate::autoencoder::BitMapping::natural(4),
        )
        .unwrap();
        let mut rx = Demapper::<f64>::new(4, &mut r).unwrap();
        let link = Link::new(
            OfdmConfig::default(),
            ChannelModel {
                snr_db: None,
                ..ChannelModel::awgn(0.0)
            },
        )
        .unwrap();
        let ch = TrainingChannel::Link(link);
        let train = record_rx_dataset(&tx, &ch, 0.0, 4000, &mut r).unwrap();
        let before = tx.fingerprint().unwrap();
        let cfg = TrainConfig {
            prior_fraction: 0.0,
            ..small_cfg(600)
        };
        finetune_receiver(&tx, &mut rx, &train, &cfg).unwrap();
        assert_eq!(tx.fingerprint().unwrap(), before);
        let test = record_rx_dataset(&tx, &ch, 0.0, 2000, &mut r).unwrap();
        let llr = rx
            .infer(&test.y, &test.snr_db, &vec![0.0; test.bits.len()])
            .unwrap();
        let errors = llr
            .iter()
            .zip(&test.bits)
            .filter(|(&l, &b)| u8::from(l < 0.0) != b)
            .count();
        assert_eq!(errors, 0);
    }
}
