use super::code::ParityCheck;
use crate::error::{check_len, Error, Result};

/// Messages and the posterior are kept within this magnitude.
pub const LLR_CLIP: f64 = 20.0;

/// Posterior and extrinsic LLRs of one decoding call.
#[derive(Clone, Debug, PartialEq)]
pub struct BpOutput {
    pub posterior: Vec<f64>,
    /// `posterior - channel`.
    pub extrinsic: Vec<f64>,
}

impl BpOutput {
    pub fn hard_decisions(&self) -> Vec<u8> {
        hard_decisions(&self.posterior)
    }
}

/// Positive LLR decides 0.
pub fn hard_decisions(llr: &[f64]) -> Vec<u8> {
    llr.iter().map(|&l| u8::from(l < 0.0)).collect()
}

/// Flooding sum-product decoder with persistent check-to-variable messages.
#[derive(Clone, Debug)]
pub struct BpDecoder {
    n: usize,
    check_ptr: Vec<usize>,
    /// Edges incident to each variable, flattened.
    var_ptr: Vec<usize>,
    var_edges: Vec<usize>,
    c2v: Vec<f64>,
    v2c: Vec<f64>,
    prefix: Vec<f64>,
}

impl BpDecoder {
    pub fn new(pc: &ParityCheck) -> Self {
        let mut check_ptr = vec![0];
        let mut edge_var = Vec::with_capacity(pc.edges());
        let mut per_var: Vec<Vec<usize>> = vec![Vec::new(); pc.n()];
        for row in pc.rows() {
            for &v in row {
                per_var[v].push(edge_var.len());
                edge_var.push(v);
            }
            check_ptr.push(edge_var.len());
        }
        let mut var_ptr = vec![0];
        let mut var_edges = Vec::with_capacity(edge_var.len());
        for list in per_var {
            var_edges.extend(list);
            var_ptr.push(var_edges.len());
        }
        let max_deg = pc.rows().iter().map(Vec::len).max().unwrap_or(0);
        let e = edge_var.len();
        Self {
            n: pc.n(),
            check_ptr,
            var_ptr,
            var_edges,
            c2v: vec![0.0; e],
            v2c: vec![0.0; e],
            prefix: vec![0.0; max_deg + 1],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Clears all check-to-variable messages.
    pub fn reset(&mut self) {
        self.c2v.fill(0.0);
    }

    /// One flooding iteration against the given channel LLRs.
    pub fn iterate(&mut self, channel: &[f64]) -> Result<()> {
        check_len("channel LLRs", self.n, channel.len())?;
        for v in 0..self.n {
            let edges = &self.var_edges[self.var_ptr[v]..self.var_ptr[v + 1]];
            let total: f64 = channel[v] + edges.iter().map(|&e| self.c2v[e]).sum::<f64>();
            for &e in edges {
                self.v2c[e] = (total - self.c2v[e]).clamp(-LLR_CLIP, LLR_CLIP);
            }
        }
        for c in 0..self.check_ptr.len() - 1 {
            let (lo, hi) = (self.check_ptr[c], self.check_ptr[c + 1]);
            let deg = hi - lo;
            // exclusive product of tanh(m/2) via prefix and running suffix
            self.prefix[0] = 1.0;
            for i in 0..deg {
                self.prefix[i + 1] = self.prefix[i] * (0.5 * self.v2c[lo + i]).tanh();
            }
            let mut suffix = 1.0;
            for i in (0..deg).rev() {
                let prod = self.prefix[i] * suffix;
                self.c2v[lo + i] = (2.0 * prod.atanh()).clamp(-LLR_CLIP, LLR_CLIP);
                suffix *= (0.5 * self.v2c[lo + i]).tanh();
            }
        }
        Ok(())
    }

    /// Channel LLRs plus all incoming check messages.
    pub fn posterior(&self, channel: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|v| {
                channel[v]
                    + self.var_edges[self.var_ptr[v]..self.var_ptr[v + 1]]
                        .iter()
                        .map(|&e| self.c2v[e])
                        .sum::<f64>()
            })
            .collect()
    }

    /// Fresh decode: reset, `iters` flooding iterations, then read out.
    pub fn decode(&mut self, channel: &[f64], iters: usize) -> Result<BpOutput> {
        if iters == 0 {
            return Err(Error::InvalidArgument(
                "BP needs at least one iteration".into(),
            ));
        }
        self.reset();
        for _ in 0..iters {
            self.iterate(channel)?;
        }
        Ok(self.output(channel))
    }

    pub fn output(&self, channel: &[f64]) -> BpOutput {
        let posterior = self.posterior(channel);
        let extrinsic = posterior.iter().zip(channel).map(|(p, c)| p - c).collect();
        BpOutput {
            posterior,
            extrinsic,
        }
    }
}

/// One-shot sum-product decoding.
pub fn bp_decode(pc: &ParityCheck, channel: &[f64], iters: usize) -> Result<BpOutput> {
    BpDecoder::new(pc).decode(channel, iters)
}
