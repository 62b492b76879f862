//! Central finite-difference check of reverse-mode gradients in float64.

use crate::error::NnError;
use crate::graph::{Graph, ParamVars, Var};
use crate::params::ParamStore;

/// Gradient scale below which errors count in absolute terms. Central
/// differences in f64 carry roundoff near `1e-16 |loss| / step`, so exactly
/// zero gradients never come out exactly zero.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Per-parameter relative errors of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(parameter name, max |a - n| / max(max |a|, max |n|, GRAD_FLOOR))`.
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Compares the analytic gradient of the scalar built by `build` against
/// central differences with the given step, one parameter tensor at a time.
///
/// `build` must be deterministic: it is re-run for every perturbed element.
pub fn finite_diff_check<F, E>(
    params: &ParamStore<f64>,
    step: f64,
    build: F,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<f64>, &ParamVars) -> Result<Var, E>,
    E: From<NnError>,
{
    let mut g = Graph::new();
    let vars = g.params(params);
    let loss = build(&mut g, &vars)?;
    let analytic = g.backward(loss)?.for_store(&vars, params);

    let eval = |store: &ParamStore<f64>| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars = g.params(store);
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut work = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    for (k, id) in params.ids().enumerate() {
        let mut max_diff = 0.0f64;
        let mut max_a = 0.0f64;
        let mut max_n = 0.0f64;
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[k].data()[j];
            max_diff = max_diff.max((a - numeric).abs());
            max_a = max_a.max(a.abs());
            max_n = max_n.max(numeric.abs());
        }
        let rel = max_diff / max_a.max(max_n).max(GRAD_FLOOR);
        per_param.push((params.name(id).to_string(), rel));
    }
    Ok(GradCheckReport { per_param })
}
