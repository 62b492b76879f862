//! Conditional Wasserstein GAN with a one-sided gradient penalty.
//!
//! Complex sequences are carried as two real channels `[batch, 2, len]`
//! (real row, imaginary row). The training loop updates exactly one player
//! per step: the generator when its samples score lower than real ones,
//! the critic otherwise.

use std::io::Write;

use aircomm_nn::{
    Adam, Conv1d, Dense, Graph, ParamStore, ParamVars, Real, ResidualConv, Tensor, Var,
};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channels::ChannelDataset;
use crate::error::{check_len, Error, Result};
use crate::ofdm::Ofdm;

const SELECTION_STREAM: u64 = 0x5e1e_c7ed;

const CRITIC_HIDDEN: usize = 64;
const INFER_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct WganConfig {
    pub lambda_gp: f64,
    pub n_z: usize,
    pub batch: usize,
    pub max_steps: usize,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub filters: usize,
    pub kernel: usize,
    /// Per-update decay of the generator weight average; 0 keeps the raw weights.
    pub ema_decay: f64,
    /// Steps between held-out scorings of the averaged generator; 0 keeps
    /// the final average.
    pub select_every: usize,
    /// Trailing dataset records withheld from training for scoring, capped
    /// at an eighth of the dataset; selection is skipped when that is zero.
    pub holdout: usize,
    /// Generator draws per held-out record.
    pub select_draws: usize,
    pub seed: u64,
}

impl Default for WganConfig {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            n_z: 16,
            batch: 64,
            max_steps: 14_000,
            lr_generator: 1e-4,
            lr_critic: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            filters: 32,
            kernel: 5,
            ema_decay: 0.999,
            select_every: 1000,
            holdout: 128,
            select_draws: 16,
            seed: 0,
        }
    }
}

impl WganConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("wgan: {m}")));
        if !(self.lambda_gp >= 0.0) || !self.lambda_gp.is_finite() {
            return bad("lambda_gp must be finite and >= 0");
        }
        if self.n_z == 0 || self.batch == 0 || self.filters == 0 {
            return bad("n_z, batch and filters must be >= 1");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("kernel must be odd");
        }
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_critic", self.lr_critic),
        ] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        if self.select_every > 0 && (self.holdout == 0 || self.select_draws < 2) {
            return bad("selection needs holdout >= 1 and select_draws >= 2");
        }
        Ok(())
    }
}

/// Complex sample types accepted by [`to_channels`].
pub trait ComplexSample: Copy {
    fn re_im(self) -> (f64, f64);
}

impl ComplexSample for Complex64 {
    fn re_im(self) -> (f64, f64) {
        (self.re, self.im)
    }
}

impl ComplexSample for Complex32 {
    fn re_im(self) -> (f64, f64) {
        (self.re as f64, self.im as f64)
    }
}

/// Packs complex sequences of equal length into a `[n, 2, len]` tensor.
pub fn to_channels<T: Real, C: ComplexSample>(seqs: &[&[C]], len: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(seqs.len() * 2 * len);
    for s in seqs {
        check_len("sequence", len, s.len())?;
        data.extend(s.iter().map(|&v| T::from_f64_lossy(v.re_im().0)));
        data.extend(s.iter().map(|&v| T::from_f64_lossy(v.re_im().1)));
    }
    Ok(Tensor::new(&[seqs.len(), 2, len], data)?)
}

/// Inverse of [`to_channels`], concatenating all sequences.
pub fn from_channels<T: Real>(t: &Tensor<T>) -> Result<Vec<Complex64>> {
    let s = t.shape();
    if s.len() != 3 || s[1] != 2 {
        return Err(Error::InvalidArgument(format!(
            "expected [n, 2, len], got {s:?}"
        )));
    }
    let len = s[2];
    let d = t.to_f64_vec();
    Ok(d.chunks_exact(2 * len)
        .flat_map(|c| (0..len).map(move |i| Complex64::new(c[i], c[len + i])))
        .collect())
}

fn check_seq_shape<T: Real>(
    g: &Graph<T>,
    v: Var,
    channels: usize,
    what: &str,
) -> Result<(usize, usize)> {
    let s = g.shape(v);
    if s.len() != 3 || s[1] != channels {
        return Err(Error::InvalidArgument(format!(
            "{what}: expected [batch, {channels}, len], got {s:?}"
        )));
    }
    Ok((s[0], s[2]))
}

/// `concat(x, z)` -> input conv -> residual conv blocks -> linear conv to 2 channels.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    store: ParamStore<T>,
    n_z: usize,
    input: Conv1d,
    blocks: Vec<ResidualConv>,
    output: Conv1d,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng + ?Sized>(n_z: usize, filters: usize, kernel: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let input = Conv1d::new(&mut store, "gen.in", 2 + n_z, filters, kernel, rng);
        let blocks = (0..3)
            .map(|i| ResidualConv::new(&mut store, &format!("gen.res{i}"), filters, kernel, rng))
            .collect();
        let output = Conv1d::new(&mut store, "gen.out", filters, 2, kernel, rng);
        Self {
            store,
            n_z,
            input,
            blocks,
            output,
        }
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            store: self.store.cast(),
            n_z: self.n_z,
            input: self.input,
            blocks: self.blocks.clone(),
            output: self.output,
        }
    }

    /// `x: [batch, 2, len]`, `z: [batch, n_z, len]` -> `[batch, 2, len]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &ParamVars, x: Var, z: Var) -> Result<Var> {
        let (bx, lx) = check_seq_shape(g, x, 2, "generator condition")?;
        let (bz, lz) = check_seq_shape(g, z, self.n_z, "generator latent")?;
        if bx != bz || lx != lz {
            return Err(Error::InvalidArgument(format!(
                "condition [{bx}, 2, {lx}] and latent [{bz}, {}, {lz}] do not align",
                self.n_z
            )));
        }
        let xz = g.concat(&[x, z], 1)?;
        let mut h = self.input.forward(g, p, xz)?;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        Ok(self.output.forward(g, p, h)?)
    }

    /// Draws one generated sequence per condition; `x` holds whole sequences
    /// of `len` samples back to back.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        x: &[Complex64],
        len: usize,
        rng: &mut R,
    ) -> Result<Vec<Complex64>> {
        if len == 0 || !x.len().is_multiple_of(len) {
            return Err(Error::InvalidArgument(format!(
                "{} samples are not whole sequences of {len}",
                x.len()
            )));
        }
        let seqs: Vec<&[Complex64]> = x.chunks_exact(len).collect();
        let mut out = Vec::with_capacity(x.len());
        for chunk in seqs.chunks(INFER_BATCH) {
            let mut g = Graph::new();
            let p = g.frozen_params(&self.store);
            let xv = g.constant(to_channels(chunk, len)?);
            let zv = g.constant(Tensor::randn(&[chunk.len(), self.n_z, len], 1.0, rng));
            let y = self.forward(&mut g, &p, xv, zv)?;
            out.extend(from_channels(g.value(y))?);
        }
        Ok(out)
    }
}

/// `concat(y, x)` -> input conv -> residual conv blocks -> ReLU -> time
/// average -> dense (ReLU) -> dense to one score.
#[derive(Clone, Debug)]
pub struct Critic<T> {
    store: ParamStore<T>,
    input: Conv1d,
    blocks: Vec<ResidualConv>,
    hidden: Dense,
    score: Dense,
}

impl<T: Real> Critic<T> {
    pub fn new<R: Rng + ?Sized>(filters: usize, kernel: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let input = Conv1d::new(&mut store, "critic.in", 4, filters, kernel, rng);
        let blocks = (0..2)
            .map(|i| ResidualConv::new(&mut store, &format!("critic.res{i}"), filters, kernel, rng))
            .collect();
        let hidden = Dense::new(&mut store, "critic.dense", filters, CRITIC_HIDDEN, rng);
        let score = Dense::new(&mut store, "critic.score", CRITIC_HIDDEN, 1, rng);
        Self {
            store,
            input,
            blocks,
            hidden,
            score,
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Real>(&self) -> Critic<U> {
        Critic {
            store: self.store.cast(),
            input: self.input,
            blocks: self.blocks.clone(),
            hidden: self.hidden,
            score: self.score,
        }
    }

    /// `y, x: [batch, 2, len]` -> scores `[batch, 1]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &ParamVars, y: Var, x: Var) -> Result<Var> {
        let (by, ly) = check_seq_shape(g, y, 2, "critic candidate")?;
        let (bx, lx) = check_seq_shape(g, x, 2, "critic condition")?;
        if by != bx || ly != lx {
            return Err(Error::InvalidArgument(format!(
                "candidate [{by}, 2, {ly}] and condition [{bx}, 2, {lx}] do not align"
            )));
        }
        let yx = g.concat(&[y, x], 1)?;
        let mut h = self.input.forward(g, p, yx)?;
        for b in &self.blocks {
            h = b.forward(g, p, h)?;
        }
        let h = g.relu(h)?;
        let pooled = g.mean_axis(h, 2)?;
        let d = self.hidden.forward(g, p, pooled)?;
        let d = g.relu(d)?;
        Ok(self.score.forward(g, p, d)?)
    }
}

/// Gradient-penalty node and its per-sample input-gradient norms.
#[derive(Clone, Debug)]
pub struct Penalty {
    /// Scalar whose value is `J_GP` and whose parameter gradient is that of `J_GP`.
    pub loss: Var,
    pub value: f64,
    pub grad_norms: Vec<f64>,
}

/// `eps_i y_r,i + (1 - eps_i) y_g,i` per leading-axis sample.
pub fn interpolate<T: Real>(
    real: &Tensor<T>,
    generated: &Tensor<T>,
    eps: &[f64],
) -> Result<Tensor<T>> {
    if real.shape() != generated.shape() || real.shape().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "interpolation endpoints differ: {:?} vs {:?}",
            real.shape(),
            generated.shape()
        )));
    }
    let n = real.shape()[0];
    check_len("interpolation weights", n, eps.len())?;
    let per = real.len() / n.max(1);
    let mut data = Vec::with_capacity(real.len());
    for (i, &e) in eps.iter().enumerate() {
        let e = T::from_f64_lossy(e);
        let r = &real.data()[i * per..(i + 1) * per];
        let q = &generated.data()[i * per..(i + 1) * per];
        data.extend(r.iter().zip(q).map(|(&a, &b)| e * a + (T::one() - e) * b));
    }
    Ok(Tensor::new(real.shape(), data)?)
}

/// One-sided penalty `mean_i max(0, |grad_y C(y_hat_i)| - 1)^2`.
///
/// `y_hat` must be a differentiable input leaf; `score` maps it to per-sample
/// scores `[batch, 1]`. The parameter gradient is obtained from the
/// directional derivative of the scores along the normalised input gradient.
pub fn gradient_penalty<T: Real, F>(g: &mut Graph<T>, y_hat: Var, score: F) -> Result<Penalty>
where
    F: FnOnce(&mut Graph<T>, Var) -> Result<Var>,
{
    let scores = score(g, y_hat)?;
    let batch = g.shape(y_hat)[0];
    check_len("penalty scores", batch, g.value(scores).len())?;
    let total = g.sum(scores)?;
    let grads = g.backward_wrt(total, &[y_hat])?;
    let gy = grads
        .get(y_hat)
        .ok_or_else(|| Error::NotDifferentiable("penalty interpolate (not an input leaf)".into()))?
        .to_f64_vec();
    let per = gy.len() / batch.max(1);
    let mut dir = Vec::with_capacity(gy.len());
    let mut weight = Vec::with_capacity(batch);
    let mut grad_norms = Vec::with_capacity(batch);
    let mut value = 0.0;
    for row in gy.chunks_exact(per) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let excess = (norm - 1.0).max(0.0);
        value += excess * excess;
        grad_norms.push(norm);
        // d/dθ max(0, |g| - 1)^2 = 2 max(0, |g| - 1) u·dg/dθ with u = g/|g|
        weight.push(2.0 * excess / batch as f64);
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        dir.extend(row.iter().map(|v| v * inv));
    }
    value /= batch as f64;
    let shape = g.shape(y_hat).to_vec();
    let tangent = g.jvp(scores, &[(y_hat, Tensor::from_f64(&shape, &dir)?)])?;
    let w = g.constant(Tensor::from_f64(&[batch, 1], &weight)?);
    let weighted = g.mul(tangent, w)?;
    let surrogate = g.sum(weighted)?;
    let shift = value - g.value(surrogate).item().to_f64().unwrap_or(0.0);
    let loss = g.add_scalar(surrogate, shift)?;
    Ok(Penalty {
        loss,
        value,
        grad_norms,
    })
}

/// `J_C = mean C(y_g) - mean C(y_r) + lambda J_GP`.
pub fn critic_loss<T: Real>(
    g: &mut Graph<T>,
    real_scores: Var,
    gen_scores: Var,
    penalty: Option<&Penalty>,
    lambda_gp: f64,
) -> Result<Var> {
    let mg = g.mean(gen_scores)?;
    let mr = g.mean(real_scores)?;
    let gap = g.sub(mg, mr)?;
    match penalty {
        Some(p) if lambda_gp != 0.0 => {
            let scaled = g.scale(p.loss, lambda_gp)?;
            Ok(g.add(gap, scaled)?)
        }
        _ => Ok(gap),
    }
}

/// `J_G = -mean C(y_g)`.
pub fn generator_loss<T: Real>(g: &mut Graph<T>, gen_scores: Var) -> Result<Var> {
    let m = g.mean(gen_scores)?;
    Ok(g.neg(m)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Generator,
    Critic,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Generator => "G",
            Branch::Critic => "C",
        }
    }
}

/// One training step. `j_c` and `j_gp` are only evaluated on critic steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub branch: Branch,
    pub j_g: f64,
    pub j_c: Option<f64>,
    pub j_gp: Option<f64>,
    pub mean_real: f64,
    pub mean_gen: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WganTrace {
    pub rows: Vec<TraceRow>,
}

impl WganTrace {
    /// CSV with columns `step,branch,j_g,j_c,j_gp,mean_real,mean_gen`; loss
    /// cells not evaluated on a step are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,branch,j_g,j_c,j_gp,mean_real,mean_gen")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6e}"));
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.6e},{},{},{:.6e},{:.6e}",
                r.step,
                r.branch.label(),
                r.j_g,
                opt(r.j_c),
                opt(r.j_gp),
                r.mean_real,
                r.mean_gen
            )?;
        }
        Ok(())
    }

    /// Fraction of steps that updated the generator.
    pub fn generator_fraction(&self) -> f64 {
        let n = self
            .rows
            .iter()
            .filter(|r| r.branch == Branch::Generator)
            .count();
        n as f64 / self.rows.len().max(1) as f64
    }

    /// Mean score gap `mean_real - mean_gen` over the last `window` steps.
    pub fn recent_gap(&self, window: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(window)..];
        tail.iter().map(|r| r.mean_real - r.mean_gen).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Ratio of the generator's conditional spread to the real data's spread
/// around the generator's conditional mean. Values far below one mean the
/// generator ignores its latent input (single-mode output). Measuring the
/// real spread around the generator mean, not a linear fit, keeps
/// deterministic nonlinear distortion such as clipping out of the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeDiagnostic {
    pub generated_conditional_var: f64,
    pub real_residual_var: f64,
    pub ratio: f64,
    pub collapsed: bool,
}

/// Below this spread ratio the generator is reported as mode-collapsed.
pub const COLLAPSE_RATIO: f64 = 0.25;

/// Per-bin spread over `draws` generator outputs for each of `n_conditions`
/// recorded symbols, against the recorded output's distance from their mean.
pub fn mode_diagnostic<R: Rng + ?Sized>(
    generator: &Generator<f32>,
    dataset: &ChannelDataset,
    ofdm: &Ofdm,
    n_conditions: usize,
    draws: usize,
    rng: &mut R,
) -> Result<ModeDiagnostic> {
    if dataset.is_empty() || n_conditions == 0 || draws < 2 {
        return Err(Error::InvalidArgument(
            "mode diagnostic needs data, conditions and >= 2 draws".into(),
        ));
    }
    let len = dataset.symbol_len;
    let nu = ofdm.config().n_used();
    let widen = |s: &[Complex32]| -> Vec<Complex64> {
        s.iter()
            .map(|v| Complex64::new(v.re as f64, v.im as f64))
            .collect()
    };
    let (mut spread, mut resid) = (0.0, 0.0);
    for _ in 0..n_conditions {
        let i = rng.random_range(0..dataset.len());
        let x = widen(dataset.x(i));
        let real = ofdm.demodulate(&widen(dataset.y(i)))?;
        let repeated: Vec<Complex64> = (0..draws).flat_map(|_| x.iter().copied()).collect();
        let yf = ofdm.demodulate(&generator.generate(&repeated, len, rng)?)?;
        for k in 0..nu {
            let vals: Vec<Complex64> = (0..draws).map(|d| yf[d * nu + k]).collect();
            let mean = vals.iter().sum::<Complex64>() / draws as f64;
            let var = vals.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (draws - 1) as f64;
            spread += var;
            // the sample mean itself scatters by var / draws
            resid += (real[k] - mean).norm_sqr() - var / draws as f64;
        }
    }
    let generated_conditional_var = spread / (n_conditions * nu) as f64;
    let real_residual_var = resid / (n_conditions * nu) as f64;
    let ratio = generated_conditional_var / real_residual_var.max(1e-300);
    Ok(ModeDiagnostic {
        generated_conditional_var,
        real_residual_var,
        ratio,
        collapsed: ratio < COLLAPSE_RATIO,
    })
}

/// Pooled-variance complex Gaussian negative log-likelihood of held-out
/// outputs under the generator's conditional distribution, per sample.
/// Lower is better; it penalises both a biased conditional mean and a
/// spread that is too narrow or too wide.
pub fn holdout_nll<R: Rng + ?Sized>(
    generator: &Generator<f32>,
    dataset: &ChannelDataset,
    records: std::ops::Range<usize>,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if records.is_empty() || records.end > dataset.len() || draws < 2 {
        return Err(Error::InvalidArgument(
            "held-out scoring needs records inside the dataset and >= 2 draws".into(),
        ));
    }
    let len = dataset.symbol_len;
    let mut total = 0.0;
    for i in records.clone() {
        let x: Vec<Complex64> = dataset
            .x(i)
            .iter()
            .map(|v| Complex64::new(v.re as f64, v.im as f64))
            .collect();
        let repeated: Vec<Complex64> = (0..draws).flat_map(|_| x.iter().copied()).collect();
        let yg = generator.generate(&repeated, len, rng)?;
        let (mut var, mut dist) = (0.0, 0.0);
        for (t, real) in dataset.y(i).iter().enumerate() {
            let mean = (0..draws).map(|d| yg[d * len + t]).sum::<Complex64>() / draws as f64;
            let v = (0..draws)
                .map(|d| (yg[d * len + t] - mean).norm_sqr())
                .sum::<f64>()
                / (draws - 1) as f64;
            var += v;
            dist += (Complex64::new(real.re as f64, real.im as f64) - mean).norm_sqr()
                - v / draws as f64;
        }
        let var = (var / len as f64).max(1e-9);
        total += (std::f64::consts::PI * var).ln() + dist / len as f64 / var;
    }
    Ok(total / records.len() as f64)
}

#[derive(Clone, Debug)]
pub struct WganOutcome {
    /// Exponential moving average of the generator weights, taken at the
    /// best held-out score when selection is enabled.
    pub generator: Generator<f32>,
    /// Generator weights after the last update.
    pub raw_generator: Generator<f32>,
    pub critic: Critic<f32>,
    pub trace: WganTrace,
    /// Step of the returned averaged generator.
    pub selected_step: usize,
    /// `(step, held-out score)` of every scoring.
    pub selection: Vec<(usize, f64)>,
}

/// Trains on random minibatches of a recorded dataset.
///
/// Returns [`Error::WganDiverged`] with the trace so far if either loss is
/// not finite.
pub fn wgan_train(dataset: &ChannelDataset, cfg: &WganConfig) -> Result<WganOutcome> {
    wgan_train_observed(dataset, cfg, |_, _| {})
}

/// [`wgan_train`] that hands the averaged generator to `observe` after every step.
pub fn wgan_train_observed<F>(
    dataset: &ChannelDataset,
    cfg: &WganConfig,
    mut observe: F,
) -> Result<WganOutcome>
where
    F: FnMut(usize, &Generator<f32>),
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset(
            "cannot train a WGAN on an empty dataset".into(),
        ));
    }
    let len = dataset.symbol_len;
    let holdout = if cfg.select_every > 0 {
        cfg.holdout.min(dataset.len() / 8)
    } else {
        0
    };
    let n_train = dataset.len() - holdout;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = Generator::<f32>::new(cfg.n_z, cfg.filters, cfg.kernel, &mut rng);
    let mut critic = Critic::<f32>::new(cfg.filters, cfg.kernel, &mut rng);
    let mut opt_g = Adam::new(generator.store(), cfg.lr_generator);
    let mut opt_c = Adam::new(critic.store(), cfg.lr_critic);
    for opt in [&mut opt_g, &mut opt_c] {
        opt.beta1 = cfg.beta1;
        opt.beta2 = cfg.beta2;
    }
    let mut averaged = generator.clone();
    let mut trace = WganTrace::default();
    let mut selection = Vec::new();
    let mut best: Option<(f64, usize, Generator<f32>)> = None;
    for step in 1..=cfg.max_steps {
        let idx: Vec<usize> = (0..cfg.batch)
            .map(|_| rng.random_range(0..n_train))
            .collect();
        let xs: Vec<&[Complex32]> = idx.iter().map(|&i| dataset.x(i)).collect();
        let ys: Vec<&[Complex32]> = idx.iter().map(|&i| dataset.y(i)).collect();
        let x_t = to_channels::<f32, _>(&xs, len)?;
        let yr_t = to_channels::<f32, _>(&ys, len)?;
        let z_t = Tensor::randn(&[cfg.batch, cfg.n_z, len], 1.0, &mut rng);

        let mut g = Graph::new();
        let gp = g.params(generator.store());
        let cp = g.params(critic.store());
        let x = g.constant(x_t);
        let yr = g.constant(yr_t);
        let z = g.constant(z_t);
        let yg = generator.forward(&mut g, &gp, x, z)?;
        let sg = critic.forward(&mut g, &cp, yg, x)?;
        let sr = critic.forward(&mut g, &cp, yr, x)?;
        let mean_gen = mean_of(&g, sg);
        let mean_real = mean_of(&g, sr);
        let diverged = |trace: WganTrace| Error::WganDiverged {
            step,
            trace: Box::new(trace),
        };

        if mean_gen < mean_real {
            let loss = generator_loss(&mut g, sg)?;
            let j_g = g.value(loss).item() as f64;
            trace.rows.push(TraceRow {
                step,
                branch: Branch::Generator,
                j_g,
                j_c: None,
                j_gp: None,
                mean_real,
                mean_gen,
            });
            if !j_g.is_finite() {
                return Err(diverged(trace));
            }
            let grads = g
                .backward_wrt(loss, gp.vars())?
                .for_store(&gp, generator.store());
            opt_g
                .step(generator.store_mut(), &grads)
                .map_err(|_| diverged(trace.clone()))?;
            blend_into(averaged.store_mut(), generator.store(), cfg.ema_decay);
        } else {
            let eps: Vec<f64> = (0..cfg.batch).map(|_| rng.random::<f64>()).collect();
            let y_hat = interpolate(g.value(yr), g.value(yg), &eps)?;
            let y_hat = g.input("y_hat", y_hat);
            let penalty = gradient_penalty(&mut g, y_hat, |g, v| critic.forward(g, &cp, v, x))?;
            let loss = critic_loss(&mut g, sr, sg, Some(&penalty), cfg.lambda_gp)?;
            let j_c = g.value(loss).item() as f64;
            trace.rows.push(TraceRow {
                step,
                branch: Branch::Critic,
                j_g: -mean_gen,
                j_c: Some(j_c),
                j_gp: Some(penalty.value),
                mean_real,
                mean_gen,
            });
            if !j_c.is_finite() || !penalty.value.is_finite() {
                return Err(diverged(trace));
            }
            // Pruning to critic params keeps the generator out of this update.
            let grads = g
                .backward_wrt(loss, cp.vars())?
                .for_store(&cp, critic.store());
            opt_c
                .step(critic.store_mut(), &grads)
                .map_err(|_| diverged(trace.clone()))?;
        }
        observe(step, &averaged);
        if holdout > 0 && (step % cfg.select_every == 0 || step == cfg.max_steps) {
            // same latent draws at every scoring
            let mut score_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SELECTION_STREAM);
            let score = holdout_nll(
                &averaged,
                dataset,
                n_train..dataset.len(),
                cfg.select_draws,
                &mut score_rng,
            )?;
            selection.push((step, score));
            if score.is_finite() && best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                best = Some((score, step, averaged.clone()));
            }
        }
    }
    let (selected_step, generator_out) = match best {
        Some((_, step, g)) => (step, g),
        None => (cfg.max_steps, averaged),
    };
    Ok(WganOutcome {
        generator: generator_out,
        raw_generator: generator,
        critic,
        trace,
        selected_step,
        selection,
    })
}

/// Critic-based estimate of the 1-D Wasserstein-1 distance between two samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct W1Config {
    /// The soft penalty overshoots unit slope by about `W1 / (2 lambda)`.
    pub lambda_gp: f64,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for W1Config {
    fn default() -> Self {
        Self {
            lambda_gp: 100.0,
            hidden: 64,
            steps: 3000,
            batch: 256,
            lr: 1e-3,
            eval_samples: 100_000,
            seed: 0,
        }
    }
}

/// Trains a dense critic with the penalised critic loss on scalar samples and
/// returns its held-out score gap `mean C(real) - mean C(generated)`.
pub fn estimate_w1<F, S>(mut sample_real: F, mut sample_gen: S, cfg: &W1Config) -> Result<f64>
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
    S: FnMut(&mut ChaCha8Rng) -> f64,
{
    if cfg.steps == 0 || cfg.batch == 0 || cfg.eval_samples == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidArgument(
            "W1 estimate needs non-zero sizes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::<f64>::new();
    let layers = [
        Dense::new(&mut store, "w1.dense0", 1, cfg.hidden, &mut rng),
        Dense::new(&mut store, "w1.dense1", cfg.hidden, cfg.hidden, &mut rng),
        Dense::new(&mut store, "w1.score", cfg.hidden, 1, &mut rng),
    ];
    let forward = |g: &mut Graph<f64>, p: &ParamVars, x: Var| -> Result<Var> {
        let mut h = x;
        for (i, layer) in layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    };
    let mut opt = Adam::new(&store, cfg.lr);
    let column = |values: Vec<f64>| Tensor::new(&[values.len(), 1], values);
    for _ in 0..cfg.steps {
        let real: Vec<f64> = (0..cfg.batch).map(|_| sample_real(&mut rng)).collect();
        let fake: Vec<f64> = (0..cfg.batch).map(|_| sample_gen(&mut rng)).collect();
        let eps: Vec<f64> = (0..cfg.batch).map(|_| rng.random::<f64>()).collect();
        let (real, fake) = (column(real)?, column(fake)?);
        let mixed = interpolate(&real, &fake, &eps)?;
        let mut g = Graph::new();
        let p = g.params(&store);
        let yr = g.constant(real);
        let yg = g.constant(fake);
        let y_hat = g.input("y_hat", mixed);
        let penalty = gradient_penalty(&mut g, y_hat, |g, v| forward(g, &p, v))?;
        let sr = forward(&mut g, &p, yr)?;
        let sg = forward(&mut g, &p, yg)?;
        let loss = critic_loss(&mut g, sr, sg, Some(&penalty), cfg.lambda_gp)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::InvalidArgument(
                "W1 critic loss is not finite".into(),
            ));
        }
        let grads = g.backward_wrt(loss, p.vars())?.for_store(&p, &store);
        opt.step(&mut store, &grads)?;
    }
    let real: Vec<f64> = (0..cfg.eval_samples)
        .map(|_| sample_real(&mut rng))
        .collect();
    let fake: Vec<f64> = (0..cfg.eval_samples)
        .map(|_| sample_gen(&mut rng))
        .collect();
    let mut g = Graph::new();
    let p = g.frozen_params(&store);
    let yr = g.constant(column(real)?);
    let yg = g.constant(column(fake)?);
    let sr = forward(&mut g, &p, yr)?;
    let sg = forward(&mut g, &p, yg)?;
    Ok(mean_of(&g, sr) - mean_of(&g, sg))
}

/// `avg <- decay avg + (1 - decay) current`, tensor by tensor.
fn blend_into(avg: &mut ParamStore<f32>, current: &ParamStore<f32>, decay: f64) {
    let (d, c) = (decay as f32, (1.0 - decay) as f32);
    for id in current.ids() {
        for (a, &v) in avg
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .zip(current.get(id).data())
        {
            *a = d * *a + c * v;
        }
    }
}

fn mean_of<T: Real>(g: &Graph<T>, v: Var) -> f64 {
    let t = g.value(v);
    t.data()
        .iter()
        .map(|x| x.to_f64().unwrap_or(f64::NAN))
        .sum::<f64>()
        / t.len() as f64
}
