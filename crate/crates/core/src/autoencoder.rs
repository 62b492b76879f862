//! Trainable transceiver: constellation-table transmitter, neural demapper,
//! bit-wise cross-entropy, BMI estimation and the exact AWGN MAP demapper.
//!
//! LLR sign convention (artifact-wide): a positive LLR means bit 0 is more
//! likely. Labels are read most-significant bit first.

use std::f64::consts::LN_2;
use std::io::Write;

use aircomm_nn::{Dense, Graph, ParamId, ParamStore, ParamVars, Real, Tensor, Var};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channels::constellation_fingerprint;
use crate::error::{check_len, Error, Result};
use crate::ldpc::SoftDemapper;

/// SNR values are fed to the demapper as `snr_db / SNR_INPUT_SCALE_DB`.
pub const SNR_INPUT_SCALE_DB: f64 = 40.0;
/// Width of each hidden demapper layer.
pub const DEMAPPER_HIDDEN: usize = 128;
const INFER_CHUNK: usize = 2048;

/// Bit `k` (0 = most significant) of an `m`-bit label.
pub fn label_bit(label: usize, k: usize, m: usize) -> u8 {
    ((label >> (m - 1 - k)) & 1) as u8
}

pub fn bits_to_label(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
}

/// Stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Bijection from `m`-bit labels to constellation-table rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMapping {
    rows: Vec<usize>,
}

impl BitMapping {
    pub fn natural(m: usize) -> Self {
        Self {
            rows: (0..1 << m).collect(),
        }
    }

    /// Gray labelling of the raster-ordered square grid from [`qam_grid`].
    ///
    /// The first `m/2` bits select the in-phase level, the rest the
    /// quadrature level, each through a binary-reflected Gray code.
    pub fn gray_qam(m: usize) -> Result<Self> {
        if m == 1 {
            return Ok(Self::natural(1));
        }
        check_square(m)?;
        let half = m / 2;
        let side = 1usize << half;
        let rows = (0..1usize << m)
            .map(|label| {
                let gi = label >> half;
                let gq = label & (side - 1);
                gray_decode(gi) * side + gray_decode(gq)
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn from_rows(rows: Vec<usize>) -> Result<Self> {
        let n = rows.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "mapping over {n} rows is not 2^m with m >= 1"
            )));
        }
        let mut seen = vec![false; n];
        for &r in &rows {
            if r >= n || seen[r] {
                return Err(Error::InvalidArgument(
                    "bit mapping is not bijective".into(),
                ));
            }
            seen[r] = true;
        }
        Ok(Self { rows })
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.rows.len().trailing_zeros() as usize
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, label: usize) -> usize {
        self.rows[label]
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 1 {
        g >>= 1;
        b ^= g;
    }
    b
}

fn check_square(m: usize) -> Result<()> {
    if m == 0 || m % 2 == 1 {
        Err(Error::InvalidArgument(format!(
            "square QAM needs an even number of bits per symbol, got {m}"
        )))
    } else {
        Ok(())
    }
}

/// Unit-power square QAM grid in raster order (row `i * side + q`, levels
/// ascending). `m = 1` gives BPSK `[+1, -1]`.
pub fn qam_grid(m: usize) -> Result<Vec<Complex64>> {
    if m == 1 {
        return Ok(vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
    }
    check_square(m)?;
    let side = 1usize << (m / 2);
    let level = |i: usize| (2 * i) as f64 - (side - 1) as f64;
    let raw: Vec<Complex64> = (0..side * side)
        .map(|r| Complex64::new(level(r / side), level(r % side)))
        .collect();
    normalize_constellation(&raw)
}

/// Gray-labelled square QAM indexed by label.
pub fn gray_qam(m: usize) -> Result<Vec<Complex64>> {
    let grid = qam_grid(m)?;
    let mapping = BitMapping::gray_qam(m)?;
    Ok((0..grid.len()).map(|l| grid[mapping.row(l)]).collect())
}

/// Scales a table to unit mean power over its rows.
pub fn normalize_constellation(points: &[Complex64]) -> Result<Vec<Complex64>> {
    let power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len().max(1) as f64;
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::InvalidArgument(
            "constellation has zero or non-finite power".into(),
        ));
    }
    let s = power.sqrt();
    Ok(points.iter().map(|p| p / s).collect())
}

/// Adds the graph ops that normalise a `[rows, 2]` table to unit mean row power.
pub fn normalize_in_graph<T: Real>(g: &mut Graph<T>, table: Var) -> Result<Var> {
    let sq = g.mul(table, table)?;
    let mean = g.mean(sq)?;
    let row_power = g.scale(mean, 2.0)?;
    let inv = g.powf(row_power, -0.5)?;
    Ok(g.mul_scalar(table, inv)?)
}

/// Constellation table `θ_T` with its label mapping.
#[derive(Clone, Debug)]
pub struct Transmitter<T> {
    m: usize,
    store: ParamStore<T>,
    points: ParamId,
    mapping: BitMapping,
}

impl<T: Real> Transmitter<T> {
    /// `points` are table rows; `mapping` sends labels to rows.
    pub fn new(points: &[Complex64], mapping: BitMapping) -> Result<Self> {
        check_len("constellation rows", mapping.len(), points.len())?;
        let flat: Vec<f64> = points.iter().flat_map(|p| [p.re, p.im]).collect();
        let mut store = ParamStore::new();
        let id = store.add("tx.points", Tensor::from_f64(&[points.len(), 2], &flat)?);
        let tx = Self {
            m: mapping.bits_per_symbol(),
            store,
            points: id,
            mapping,
        };
        tx.normalized_rows()?;
        Ok(tx)
    }

    /// Gray-labelled QAM table plus i.i.d. Gaussian jitter of std `jitter`
    /// on every real coordinate.
    pub fn gray_qam<R: Rng + ?Sized>(m: usize, jitter: f64, rng: &mut R) -> Result<Self> {
        let pts: Vec<Complex64> = gray_qam(m)?
            .into_iter()
            .map(|p| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                p + Complex64::new(jitter * a, jitter * b)
            })
            .collect();
        Self::new(&pts, BitMapping::natural(m))
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.m
    }

    pub fn mapping(&self) -> &BitMapping {
        &self.mapping
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn points_id(&self) -> ParamId {
        self.points
    }

    /// Unnormalised table rows.
    pub fn raw_rows(&self) -> Vec<Complex64> {
        self.store
            .get(self.points)
            .to_f64_vec()
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect()
    }

    pub fn normalized_rows(&self) -> Result<Vec<Complex64>> {
        normalize_constellation(&self.raw_rows())
    }

    /// Normalised constellation indexed by label.
    pub fn points_by_label(&self) -> Result<Vec<Complex64>> {
        let rows = self.normalized_rows()?;
        Ok((0..rows.len()).map(|l| rows[self.mapping.row(l)]).collect())
    }

    /// Fingerprint of the transmitter weights (normalised, by label).
    pub fn fingerprint(&self) -> Result<[u8; 32]> {
        Ok(constellation_fingerprint(&self.points_by_label()?))
    }

    pub fn tx_map(&self, bits: &[u8]) -> Result<Complex64> {
        check_len("bits per symbol", self.m, bits.len())?;
        Ok(self.points_by_label()?[bits_to_label(bits)])
    }

    /// Maps a bit stream (length a multiple of `m`) to symbols.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        if !bits.len().is_multiple_of(self.m) {
            return Err(Error::InvalidArgument(format!(
                "{} bits do not fill {}-bit symbols",
                bits.len(),
                self.m
            )));
        }
        let table = self.points_by_label()?;
        Ok(bits
            .chunks_exact(self.m)
            .map(|b| table[bits_to_label(b)])
            .collect())
    }

    /// Normalised table as a differentiable `[rows, 2]` node.
    pub fn normalized(&self, g: &mut Graph<T>, p: &ParamVars) -> Result<Var> {
        normalize_in_graph(g, p.get(self.points))
    }

    /// Symbols for `labels` as a `[labels.len(), 2]` node.
    pub fn forward(&self, g: &mut Graph<T>, p: &ParamVars, labels: &[usize]) -> Result<Var> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.mapping.len()) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        let table = self.normalized(g, p)?;
        let rows: Vec<usize> = labels.iter().map(|&l| self.mapping.row(l)).collect();
        Ok(g.gather_rows(table, &rows)?)
    }

    /// CSV with columns `label_hex,re,im`, one row per label.
    pub fn write_constellation_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let digits = self.m.div_ceil(4).max(1);
        writeln!(w, "label_hex,re,im")?;
        for (label, p) in self.points_by_label()?.iter().enumerate() {
            writeln!(w, "{label:0digits$X},{:.9},{:.9}", p.re, p.im)?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Transmitter<U> {
        Transmitter {
            m: self.m,
            store: self.store.cast(),
            points: self.points,
            mapping: self.mapping.clone(),
        }
    }
}

/// Dense demapper: `[Re y, Im y, snr_db / 40, prior (m)] -> m logits`.
#[derive(Clone, Debug)]
pub struct Demapper<T> {
    m: usize,
    store: ParamStore<T>,
    layers: Vec<Dense>,
}

impl<T: Real> Demapper<T> {
    pub fn new<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("demapper needs m >= 1".into()));
        }
        let mut store = ParamStore::new();
        let dims = [3 + m, DEMAPPER_HIDDEN, DEMAPPER_HIDDEN, DEMAPPER_HIDDEN, m];
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense::new(&mut store, &format!("rx.dense{i}"), d[0], d[1], rng))
            .collect();
        Ok(Self { m, store, layers })
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.m
    }

    pub fn input_dim(&self) -> usize {
        3 + self.m
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn cast<U: Real>(&self) -> Demapper<U> {
        Demapper {
            m: self.m,
            store: self.store.cast(),
            layers: self.layers.clone(),
        }
    }

    /// Builds the `[batch, 3 + m]` input from `y: [batch, 2]` and a prior
    /// node `[batch, m]`.
    pub fn input(&self, g: &mut Graph<T>, y: Var, snr_db: &[f64], prior: Var) -> Result<Var> {
        let batch = g.shape(y)[0];
        check_len("per-symbol SNR", batch, snr_db.len())?;
        let snr: Vec<f64> = snr_db.iter().map(|s| s / SNR_INPUT_SCALE_DB).collect();
        let snr = g.constant(Tensor::from_f64(&[batch, 1], &snr)?);
        Ok(g.concat(&[y, snr, prior], 1)?)
    }

    pub fn forward_input(&self, g: &mut Graph<T>, p: &ParamVars, input: Var) -> Result<Var> {
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Logits `[batch, m]`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamVars,
        y: Var,
        snr_db: &[f64],
        prior: Var,
    ) -> Result<Var> {
        let input = self.input(g, y, snr_db, prior)?;
        self.forward_input(g, p, input)
    }

    /// Graph-free logits for a batch of symbols.
    pub fn infer(&self, y: &[Complex64], snr_db: &[f64], prior: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        check_len("per-symbol SNR", y.len(), snr_db.len())?;
        check_len("prior LLRs", y.len() * m, prior.len())?;
        let mut out = Vec::with_capacity(y.len() * m);
        let mut act: Vec<T> = Vec::new();
        let mut next: Vec<T> = Vec::new();
        for start in (0..y.len()).step_by(INFER_CHUNK) {
            let end = (start + INFER_CHUNK).min(y.len());
            let rows = end - start;
            act.clear();
            for i in start..end {
                act.push(T::from_f64_lossy(y[i].re));
                act.push(T::from_f64_lossy(y[i].im));
                act.push(T::from_f64_lossy(snr_db[i] / SNR_INPUT_SCALE_DB));
                act.extend(
                    prior[i * m..(i + 1) * m]
                        .iter()
                        .map(|&v| T::from_f64_lossy(v)),
                );
            }
            for (li, layer) in self.layers.iter().enumerate() {
                let w = self.store.get(layer.weight).data();
                let b = self.store.get(layer.bias).data();
                next.clear();
                next.resize(rows * layer.outputs, T::zero());
                T::gemm(
                    rows,
                    layer.inputs,
                    layer.outputs,
                    T::one(),
                    &act,
                    false,
                    w,
                    false,
                    T::zero(),
                    &mut next,
                );
                let hidden = li + 1 < self.layers.len();
                for row in next.chunks_exact_mut(layer.outputs) {
                    for (v, &bj) in row.iter_mut().zip(b) {
                        *v += bj;
                        if hidden && *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                }
                std::mem::swap(&mut act, &mut next);
            }
            out.extend(act.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(out)
    }
}

impl<T: Real> SoftDemapper for Demapper<T> {
    fn bits_per_symbol(&self) -> usize {
        self.m
    }

    /// Extrinsic output: network logits minus the a-priori input.
    fn demap(&self, y: &[Complex64], snr_db: &[f64], prior: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("LLR output", y.len() * self.m, out.len())?;
        let logits = self.infer(y, snr_db, prior)?;
        for ((o, l), p) in out.iter_mut().zip(&logits).zip(prior) {
            *o = l - p;
        }
        Ok(())
    }
}

/// Label signs `1 - 2c` as a constant node shaped like `logits`.
fn sign_constant<T: Real>(g: &mut Graph<T>, logits: Var, bits: &[u8]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    check_len("labels", shape.iter().product(), bits.len())?;
    let signs: Vec<f64> = bits.iter().map(|&c| 1.0 - 2.0 * c as f64).collect();
    Ok(g.constant(Tensor::from_f64(&shape, &signs)?))
}

/// Per-bit cross-entropy `softplus(-(1 - 2c) l)` as a node shaped like `logits`.
pub fn bce_terms<T: Real>(g: &mut Graph<T>, logits: Var, bits: &[u8]) -> Result<Var> {
    let s = sign_constant(g, logits, bits)?;
    let z = g.mul(logits, s)?;
    let nz = g.neg(z)?;
    Ok(g.softplus(nz)?)
}

/// Mean binary cross-entropy over all bits (nats).
pub fn bce_loss<T: Real>(g: &mut Graph<T>, logits: Var, bits: &[u8]) -> Result<Var> {
    let terms = bce_terms(g, logits, bits)?;
    Ok(g.mean(terms)?)
}

/// Mean binary cross-entropy of plain logits (nats).
pub fn bce(logits: &[f64], bits: &[u8]) -> Result<f64> {
    check_len("labels", logits.len(), bits.len())?;
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let total: f64 = logits
        .iter()
        .zip(bits)
        .map(|(&l, &c)| softplus(-(1.0 - 2.0 * c as f64) * l))
        .sum();
    Ok(total / logits.len() as f64)
}

/// Bit-wise mutual information in bits per symbol, `m (1 - bce / ln 2)`,
/// clipped at zero.
pub fn bmi_from_bce(bce_nats: f64, m: usize) -> f64 {
    (m as f64 * (1.0 - bce_nats / LN_2)).max(0.0)
}

pub fn bmi(logits: &[f64], bits: &[u8], m: usize) -> Result<f64> {
    Ok(bmi_from_bce(bce(logits, bits)?, m))
}

/// Noise power spectral density for unit-power symbols at `snr_db`.
pub fn n0_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

fn check_table(points: &[Complex64]) -> Result<usize> {
    let n = points.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "constellation of {n} points is not 2^m with m >= 1"
        )));
    }
    Ok(n.trailing_zeros() as usize)
}

/// Exact AWGN bit LLRs for one received sample; `points` is indexed by label.
pub fn map_demap_awgn(y: Complex64, n0: f64, points: &[Complex64], out: &mut [f64]) -> Result<()> {
    let m = check_table(points)?;
    check_len("LLR output", m, out.len())?;
    let zeros = vec![0.0; m];
    map_demap_extrinsic(y, n0, points, &zeros, out)
}

/// Extrinsic AWGN bit LLRs given a-priori LLRs on the other bits of the label.
///
/// The prior of bit `k` itself is excluded from its own output.
pub fn map_demap_extrinsic(
    y: Complex64,
    n0: f64,
    points: &[Complex64],
    prior: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let m = check_table(points)?;
    check_len("prior LLRs", m, prior.len())?;
    check_len("LLR output", m, out.len())?;
    if !(n0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise density {n0} must be positive"
        )));
    }
    let mut metric = [0.0f64; 64];
    let metric = &mut metric[..points.len().min(64)];
    if points.len() > 64 {
        return Err(Error::InvalidArgument("at most 6 bits per symbol".into()));
    }
    for (label, p) in points.iter().enumerate() {
        let mut mtr = -(y - p).norm_sqr() / n0;
        for (k, &lk) in prior.iter().enumerate() {
            mtr += if label_bit(label, k, m) == 0 {
                0.5 * lk
            } else {
                -0.5 * lk
            };
        }
        metric[label] = mtr;
    }
    for k in 0..m {
        let (mut num, mut den) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (label, &mtr) in metric.iter().enumerate() {
            if label_bit(label, k, m) == 0 {
                num = log_sum_exp(num, mtr);
            } else {
                den = log_sum_exp(den, mtr);
            }
        }
        // the bit's own prior enters num and den with opposite signs
        out[k] = num - den - prior[k];
    }
    Ok(())
}

/// Exact AWGN demapper for a fixed unit-power constellation.
#[derive(Clone, Debug)]
pub struct MapDemapper {
    points: Vec<Complex64>,
    m: usize,
}

impl MapDemapper {
    pub fn new(points_by_label: Vec<Complex64>) -> Result<Self> {
        let m = check_table(&points_by_label)?;
        Ok(Self {
            points: points_by_label,
            m,
        })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// A-posteriori LLRs for a batch with zero prior.
    pub fn llrs(&self, y: &[Complex64], snr_db: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; y.len() * self.m];
        let prior = vec![0.0; out.len()];
        self.demap(y, snr_db, &prior, &mut out)?;
        Ok(out)
    }
}

impl SoftDemapper for MapDemapper {
    fn bits_per_symbol(&self) -> usize {
        self.m
    }

    fn demap(&self, y: &[Complex64], snr_db: &[f64], prior: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.m;
        check_len("per-symbol SNR", y.len(), snr_db.len())?;
        check_len("prior LLRs", y.len() * m, prior.len())?;
        check_len("LLR output", y.len() * m, out.len())?;
        for (i, (&yi, &s)) in y.iter().zip(snr_db).enumerate() {
            let r = i * m..(i + 1) * m;
            map_demap_extrinsic(
                yi,
                n0_from_snr_db(s),
                &self.points,
                &prior[r.clone()],
                &mut out[r],
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aircomm_nn::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S10: f64 = 3.1622776601683795;

    // canonical Gray 16-QAM: b0b1 -> I, b2b3 -> Q with 00:-3 01:-1 11:+1 10:+3
    fn hand_16qam(label: usize) -> Complex64 {
        let lvl = |two: usize| match two {
            0b00 => -3.0,
            0b01 => -1.0,
            0b11 => 1.0,
            _ => 3.0,
        };
        Complex64::new(lvl(label >> 2), lvl(label & 3)) / S10
    }

    #[test]
    fn gray_16qam_matches_hand_table() {
        let pts = gray_qam(4).unwrap();
        for (l, p) in pts.iter().enumerate() {
            assert!((p - hand_16qam(l)).norm() < 1e-12, "label {l}");
        }
        let tx = Transmitter::<f64>::new(&qam_grid(4).unwrap(), BitMapping::gray_qam(4).unwrap())
            .unwrap();
        for l in 0..16 {
            let bits: Vec<u8> = (0..4).map(|k| label_bit(l, k, 4)).collect();
            assert!((tx.tx_map(&bits).unwrap() - hand_16qam(l)).norm() < 1e-12);
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let pts = gray_qam(6).unwrap();
        let dmin = 2.0 / 42f64.sqrt();
        for a in 0..64 {
            for b in 0..64 {
                if ((pts[a] - pts[b]).norm() - dmin).abs() < 1e-9 {
                    assert_eq!((a ^ b).count_ones(), 1);
                }
            }
        }
    }

    #[test]
    fn normalization_contract() {
        let pts = gray_qam(4).unwrap();
        let power: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((power - 1.0).abs() < 1e-12);
        let scaled: Vec<Complex64> = pts.iter().map(|p| p * 3.0).collect();
        for (a, b) in normalize_constellation(&scaled).unwrap().iter().zip(&pts) {
            assert!((a - b).norm() < 1e-12);
        }
        for (a, b) in normalize_constellation(&pts).unwrap().iter().zip(&pts) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(normalize_constellation(&[Complex64::default(); 4]).is_err());
        assert!(
            Transmitter::<f32>::new(&[Complex64::default(); 4], BitMapping::natural(2)).is_err()
        );
    }

    #[test]
    fn jittered_init_has_unit_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tx = Transmitter::<f32>::gray_qam(4, 0.01, &mut rng).unwrap();
        let pts = tx.points_by_label().unwrap();
        let power: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((power - 1.0).abs() < 1e-6);
        let max_dev = (0..16)
            .map(|l| (pts[l] - hand_16qam(l)).norm())
            .fold(0.0, f64::max);
        assert!(max_dev < 0.1, "{max_dev}");
    }

    #[test]
    fn mapping_must_be_bijective() {
        assert!(BitMapping::from_rows(vec![0, 1, 1, 3]).is_err());
        assert!(BitMapping::from_rows(vec![0, 1, 2]).is_err());
        assert_eq!(BitMapping::gray_qam(4).unwrap().bits_per_symbol(), 4);
        assert!(BitMapping::gray_qam(3).is_err());
    }

    #[test]
    fn graph_normalization_matches_and_differentiates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tx = Transmitter::<f64>::gray_qam(4, 0.3, &mut rng).unwrap();
        let mut g = Graph::new();
        let p = g.params(tx.store());
        let labels: Vec<usize> = (0..16).collect();
        let x = tx.forward(&mut g, &p, &labels).unwrap();
        let want = tx.points_by_label().unwrap();
        for (row, w) in g.value(x).data().chunks_exact(2).zip(&want) {
            assert!((row[0] - w.re).abs() < 1e-12 && (row[1] - w.im).abs() < 1e-12);
        }
        let weights: Vec<f64> = (0..32).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let report = finite_diff_check(tx.store(), 1e-6, |g, p| {
            let x = tx.forward(g, p, &labels)?;
            let w = g.constant(Tensor::from_f64(&[16, 2], &weights)?);
            let prod = g.mul(x, w)?;
            Ok::<_, Error>(g.sum(prod)?)
        })
        .unwrap();
        assert!(report.within(1e-4), "{report:?}");
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce(&[0.0; 8], &[0, 1, 0, 1, 1, 1, 0, 0]).unwrap() - LN_2).abs() < 1e-15);
        let v = bce(&[20.0], &[0]).unwrap();
        assert!((v - 2.061153622438558e-9).abs() < 1e-17, "{v}");
        assert_eq!(bmi(&[0.0; 4], &[0, 1, 1, 0], 4).unwrap(), 0.0);
        let perfect = bmi(&[60.0, -60.0, 60.0, -60.0], &[0, 1, 0, 1], 4).unwrap();
        assert!((perfect - 4.0).abs() < 1e-12);
    }

    #[test]
    fn graph_bce_matches_plain_and_gradient_is_sigmoid_minus_target() {
        let logits = [1.5, -0.3, 4.0, -2.2, 0.0, 0.7];
        let bits = [0u8, 0, 1, 1, 0, 1];
        let mut g = Graph::<f64>::new();
        let l = g.input("l", Tensor::from_f64(&[3, 2], &logits).unwrap());
        let loss = bce_loss(&mut g, l, &bits).unwrap();
        assert!((g.value(loss).item() - bce(&logits, &bits).unwrap()).abs() < 1e-14);
        let grads = g.backward(loss).unwrap();
        let gl = grads.get(l).unwrap().data();
        for ((&li, &c), &gi) in logits.iter().zip(&bits).zip(gl) {
            // d/dl softplus(-s l) = -s sigmoid(-s l); target probability of bit 0 is 1 - c
            let p0 = 1.0 / (1.0 + (-li).exp());
            let want = (p0 - (1.0 - c as f64)) / 6.0;
            assert!((gi - want).abs() < 1e-14);
        }
    }

    fn brute_llr(y: Complex64, n0: f64, pts: &[Complex64], k: usize) -> f64 {
        let m = pts.len().trailing_zeros() as usize;
        let (mut num, mut den) = (0.0, 0.0);
        for (l, p) in pts.iter().enumerate() {
            let e = (-(y - p).norm_sqr() / n0).exp();
            if label_bit(l, k, m) == 0 {
                num += e;
            } else {
                den += e;
            }
        }
        (num / den).ln()
    }

    #[test]
    fn map_demapper_matches_direct_sum() {
        let pts = gray_qam(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut out = [0.0; 4];
        for _ in 0..2000 {
            let y = Complex64::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
            let n0 = n0_from_snr_db(rng.random_range(0.0..15.0));
            map_demap_awgn(y, n0, &pts, &mut out).unwrap();
            for k in 0..4 {
                let want = brute_llr(y, n0, &pts, k);
                assert!((out[k] - want).abs() < 1e-9 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bpsk_closed_form_and_boundaries() {
        let pts = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
        let mut out = [0.0];
        for (y, n0) in [(0.3, 0.5), (-1.7, 0.1), (0.0, 2.0)] {
            map_demap_awgn(Complex64::new(y, 0.4), n0, &pts, &mut out).unwrap();
            assert!((out[0] - 4.0 * y / n0).abs() < 1e-12);
        }
        // midway between in-phase levels -1 and +1 only bit 0 changes
        let qam = gray_qam(4).unwrap();
        let mut l = [0.0; 4];
        map_demap_awgn(Complex64::new(0.0, 3.0 / S10), 0.3, &qam, &mut l).unwrap();
        assert!(l[0].abs() < 1e-9, "{l:?}");
    }

    #[test]
    fn prior_enters_as_extrinsic() {
        let pts = gray_qam(4).unwrap();
        let y = Complex64::new(0.2, -0.5);
        let prior = [1.0, -2.0, 0.5, 3.0];
        let mut ext = [0.0; 4];
        map_demap_extrinsic(y, 0.2, &pts, &prior, &mut ext).unwrap();
        for k in 0..4 {
            let (mut num, mut den) = (0.0, 0.0);
            for (l, p) in pts.iter().enumerate() {
                let mut e = -(y - p).norm_sqr() / 0.2;
                for j in (0..4).filter(|&j| j != k) {
                    e += if label_bit(l, j, 4) == 0 {
                        prior[j] / 2.0
                    } else {
                        -prior[j] / 2.0
                    };
                }
                if label_bit(l, k, 4) == 0 {
                    num += e.exp();
                } else {
                    den += e.exp();
                }
            }
            assert!((ext[k] - (num / den).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn map_symmetry_under_point_reflection() {
        // Gray QPSK: -p(label) = p(!label), so LLRs at -y flip sign
        let pts = gray_qam(2).unwrap();
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        for y in [Complex64::new(0.3, -0.8), Complex64::new(-1.1, 0.05)] {
            map_demap_awgn(y, 0.4, &pts, &mut a).unwrap();
            map_demap_awgn(-y, 0.4, &pts, &mut b).unwrap();
            assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn demapper_inference_matches_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dm = Demapper::<f64>::new(4, &mut rng).unwrap();
        let n = 37;
        let y: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(i as f64 / 20.0 - 0.9, 0.3 - i as f64 / 50.0))
            .collect();
        let snr: Vec<f64> = (0..n).map(|i| i as f64 / 3.0).collect();
        let prior: Vec<f64> = (0..n * 4).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let fast = dm.infer(&y, &snr, &prior).unwrap();
        let mut g = Graph::new();
        let p = g.frozen_params(dm.store());
        let flat: Vec<f64> = y.iter().flat_map(|v| [v.re, v.im]).collect();
        let yv = g.constant(Tensor::from_f64(&[n, 2], &flat).unwrap());
        let pv = g.constant(Tensor::from_f64(&[n, 4], &prior).unwrap());
        let out = dm.forward(&mut g, &p, yv, &snr, pv).unwrap();
        assert_eq!(g.shape(out), &[n, 4]);
        for (a, b) in fast.iter().zip(g.value(out).data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut ext = vec![0.0; n * 4];
        dm.demap(&y, &snr, &prior, &mut ext).unwrap();
        for i in 0..n * 4 {
            assert!((ext[i] - (fast[i] - prior[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn constellation_csv_layout() {
        let tx = Transmitter::<f32>::new(&gray_qam(4).unwrap(), BitMapping::natural(4)).unwrap();
        let mut buf = Vec::new();
        tx.write_constellation_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0], "label_hex,re,im");
        assert!(lines[11].starts_with("A,"));
        let fields: Vec<f64> = lines[11]
            .split(',')
            .skip(1)
            .map(|s| s.parse().unwrap())
            .collect();
        assert!((fields[0] - 3.0 / S10).abs() < 1e-6 && (fields[1] - 3.0 / S10).abs() < 1e-6);
    }
}
