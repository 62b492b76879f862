//! Dense and 1-D convolution layers with He-normal initialisation.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, ParamVars, Var};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Fully connected layer, `[batch, inputs] -> [batch, outputs]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[inputs, outputs], std, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let h = g.matmul(x, p.get(self.weight))?;
        g.add_bias(h, p.get(self.bias))
    }
}

/// "Same"-padded 1-D convolution, `[batch, in_ch, len] -> [batch, filters, len]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        filters: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (in_ch * kernel) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[filters, in_ch, kernel], std, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[filters]));
        Self {
            weight,
            bias,
            in_ch,
            filters,
            kernel,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamVars, x: Var) -> Result<Var> {
        g.conv1d(x, p.get(self.weight), Some(p.get(self.bias)))
    }
}

/// Pre-activation residual block, `x + conv(relu(x))`; channels are preserved.
#[derive(Clone, Copy, Debug)]
pub struct ResidualConv {
    pub conv: Conv1d,
}

impl ResidualConv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv1d::new(store, name, channels, channels, kernel, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let a = g.relu(x)?;
        let h = self.conv.forward(g, p, a)?;
        g.add(x, h)
    }
}
