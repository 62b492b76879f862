//! Define-by-run tape with reverse-mode gradients and forward-mode tangents.
//!
//! Every builder method evaluates its op immediately and appends a node, so
//! the node list is always in topological order. [`Graph::backward`] walks the
//! tape in reverse. [`Graph::jvp`] appends *differentiable* tangent nodes, which
//! is how gradients of input-gradient norms (the critic penalty) are obtained:
//! the directional derivative along a fixed direction becomes an ordinary node
//! that can itself be back-propagated to the parameters.

use crate::conv;
use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Ln(Var),
    Powf(Var, T),
    Conv1d { x: Var, w: Var, b: Option<Var> },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    ComplexMul { x: Var, coef: Vec<(T, T)> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulScalar(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::AddScalar(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::Ln(x)
            | Op::Powf(x, _)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::MeanAxis { x, .. }
            | Op::GatherRows { x, .. }
            | Op::ComplexMul { x, .. } => vec![*x],
            Op::Conv1d { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Concat { parts, .. } => parts.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulScalar(..) => "mul_scalar",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Ln(..) => "ln",
            Op::Powf(..) => "powf",
            Op::Conv1d { .. } => "conv1d",
            Op::Concat { .. } => "concat",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanAxis { .. } => "mean_axis",
            Op::GatherRows { .. } => "gather_rows",
            Op::ComplexMul { .. } => "complex_mul",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
    name: Option<String>,
}

/// Leaf vars bound to the entries of one [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Gradients of a scalar loss with respect to every node that required one.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for each parameter of a bound store (zeros where the loss
    /// does not depend on the parameter).
    pub fn collect<'a>(
        &self,
        vars: &ParamVars,
        shapes: impl IntoIterator<Item = &'a [usize]>,
    ) -> Vec<Tensor<T>> {
        vars.vars
            .iter()
            .zip(shapes)
            .map(|(&v, shape)| match self.get(v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(shape),
            })
            .collect()
    }

    pub fn for_store(&self, vars: &ParamVars, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        self.collect(vars, store.ids().map(|id| store.get(id).shape()))
    }
}

/// Computation tape. See the module docs.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(NnError::UnknownNode(v.0))
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, detail: String) -> NnError {
        NnError::Shape {
            op,
            node: self.nodes.len(),
            detail,
        }
    }

    /// Differentiable input (gradients with respect to it are reported).
    pub fn input(&mut self, name: &str, value: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.nodes[v.0].name = Some(name.to_string());
        v
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Constant copy of an existing node's value (gradient stop).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Binds every parameter of `store` as a differentiable leaf.
    pub fn params(&mut self, store: &ParamStore<T>) -> ParamVars {
        let vars = store
            .iter()
            .map(|(name, t)| {
                let v = self.push(Op::Leaf, t.clone(), true);
                self.nodes[v.0].name = Some(name.to_string());
                v
            })
            .collect();
        ParamVars { vars }
    }

    /// Binds parameters as constants (their gradients are not needed).
    pub fn frozen_params(&mut self, store: &ParamStore<T>) -> ParamVars {
        let vars = store
            .iter()
            .map(|(name, t)| {
                let v = self.push(Op::Leaf, t.clone(), false);
                self.nodes[v.0].name = Some(name.to_string());
                v
            })
            .collect();
        ParamVars { vars }
    }

    pub fn node_name(&self, v: Var) -> Option<&str> {
        self.nodes[v.0].name.as_deref()
    }

    // ---- builders ---------------------------------------------------------

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); n * m];
        T::gemm(
            n,
            k,
            m,
            T::one(),
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(&[n, m], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), value, ng))
    }

    /// Adds `b` (shape `[m]`) to every row of `x` (last dim `m`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let (sx, sb) = (self.shape(x), self.shape(b));
        let m = *sx.last().unwrap();
        if sb != [m] {
            return Err(self.shape_err("add_bias", format!("{sx:?} + {sb:?}")));
        }
        let bias = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_exact_mut(m) {
            for (v, &bb) in row.iter_mut().zip(&bias) {
                *v += bb;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(Op::AddBias(x, b), value, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), value, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, ng))
    }

    /// Multiplies every element of `x` by the single-element node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        self.check(s)?;
        if !self.value(s).is_scalar() {
            return Err(self.shape_err("mul_scalar", format!("{:?}", self.shape(s))));
        }
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v * sv);
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(Op::MulScalar(x, s), value, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let c = T::from_f64_lossy(c);
        let value = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        Ok(self.push(Op::Scale(x, c), value, ng))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let c = T::from_f64_lossy(c);
        let value = self.value(x).map(|v| v + c);
        let ng = self.needs(x);
        Ok(self.push(Op::AddScalar(x, c), value, ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.needs(x);
        Ok(self.push(Op::Relu(x), value, ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        Ok(self.push(Op::Sigmoid(x), value, ng))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(softplus);
        let ng = self.needs(x);
        Ok(self.push(Op::Softplus(x), value, ng))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| v.ln());
        let ng = self.needs(x);
        Ok(self.push(Op::Ln(x), value, ng))
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.check(x)?;
        let p = T::from_f64_lossy(p);
        let value = self.value(x).map(|v| v.powf(p));
        let ng = self.needs(x);
        Ok(self.push(Op::Powf(x, p), value, ng))
    }

    /// 1-D convolution with zero "same" padding.
    ///
    /// `x: [batch, in_ch, len]`, `w: [filters, in_ch, kernel]`,
    /// `b: [filters]`; output `[batch, filters, len]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(self.shape_err("conv1d", format!("input {sx:?}, kernel {sw:?}")));
        }
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [sw[0]] {
                return Err(self.shape_err(
                    "conv1d",
                    format!("bias {:?} for {} filters", self.shape(b), sw[0]),
                ));
            }
        }
        let geom = conv::Geometry::new(sx[0], sx[1], sx[2], sw[0], sw[2]);
        let bias = b.map(|b| self.value(b).data());
        let out = conv::forward(&geom, self.value(x).data(), self.value(w).data(), bias);
        let value = Tensor::new(&[sx[0], sw[0], sx[2]], out)?;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Op::Conv1d { x, w, b }, value, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("concat", "no inputs".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(self.shape_err("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(self.shape_err("concat", format!("{first:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let d = self.shape(p)[axis];
                let src = self.value(p).data();
                out.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let value = Tensor::new(&shape, out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            value,
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let value =
            self.value(x).clone().reshape(shape).map_err(|_| {
                self.shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)))
            })?;
        let ng = self.needs(x);
        Ok(self.push(Op::Reshape(x), value, ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        Ok(self.push(Op::Sum(x), value, ng))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let n = T::from_usize(self.value(x).len()).unwrap();
        let value = Tensor::scalar(self.value(x).sum() / n);
        let ng = self.needs(x);
        Ok(self.push(Op::Mean(x), value, ng))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape.len() < 2 {
            return Err(self.shape_err("mean_axis", format!("axis {axis} for {shape:?}")));
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let inv = T::one() / T::from_usize(d).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..d {
                let row = &src[(o * d + j) * inner..(o * d + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        let value = Tensor::new(&new_shape, out)?;
        let ng = self.needs(x);
        Ok(self.push(Op::MeanAxis { x, axis }, value, ng))
    }

    /// Selects rows of a `[rows, cols]` matrix.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || idx.iter().any(|&i| i >= shape[0]) {
            return Err(self.shape_err("gather_rows", format!("{shape:?}")));
        }
        let c = shape[1];
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(&[idx.len(), c], out)?;
        let ng = self.needs(x);
        Ok(self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            value,
            ng,
        ))
    }

    /// Treats `x: [n, 2]` as `n` complex numbers (re, im) and multiplies row
    /// `i` by the constant `coef[i] = (re, im)`.
    pub fn complex_mul(&mut self, x: Var, coef: &[(f64, f64)]) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != 2 || shape[0] != coef.len() {
            return Err(self.shape_err(
                "complex_mul",
                format!("{shape:?} with {} coefficients", coef.len()),
            ));
        }
        let coef: Vec<(T, T)> = coef
            .iter()
            .map(|&(a, b)| (T::from_f64_lossy(a), T::from_f64_lossy(b)))
            .collect();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        for (row, &(a, b)) in src.chunks_exact(2).zip(&coef) {
            out.push(a * row[0] - b * row[1]);
            out.push(b * row[0] + a * row[1]);
        }
        let value = Tensor::new(&shape, out)?;
        let ng = self.needs(x);
        Ok(self.push(Op::ComplexMul { x, coef }, value, ng))
    }

    // ---- reverse mode -----------------------------------------------------

    /// Back-propagates from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(NnError::EmptyGraph);
        }
        self.check(loss)?;
        let live: Vec<bool> = self.nodes[..=loss.0].iter().map(|n| n.needs_grad).collect();
        self.backward_masked(loss, live)
    }

    /// Like [`Graph::backward`] but only propagates along paths that reach
    /// one of `targets`; gradients of other nodes are not computed.
    pub fn backward_wrt(&self, loss: Var, targets: &[Var]) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(NnError::EmptyGraph);
        }
        self.check(loss)?;
        let mut live = vec![false; loss.0 + 1];
        for &t in targets {
            self.check(t)?;
            if t.0 <= loss.0 {
                live[t.0] = self.nodes[t.0].needs_grad;
            }
        }
        for i in 0..=loss.0 {
            if !live[i] && self.nodes[i].needs_grad {
                live[i] = self.nodes[i].op.inputs().iter().any(|v| live[v.0]);
            }
        }
        self.backward_masked(loss, live)
    }

    fn backward_masked(&self, loss: Var, live: Vec<bool>) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(NnError::NonScalarLoss {
                node: loss.0,
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if live[i] {
                self.backprop_node(node, &live, &dy, &mut grads);
            }
            grads[i] = Some(dy);
        }
        // Only report gradients on nodes that asked for them.
        for (i, g) in grads.iter_mut().enumerate() {
            if !live[i] {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, live: &[bool], grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !live[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        live: &[bool],
        dy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                if live[a.0] {
                    let mut da = vec![T::zero(); n * k];
                    T::gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        dy.data(),
                        false,
                        self.value(*b).data(),
                        true,
                        T::zero(),
                        &mut da,
                    );
                    self.acc(live, grads, *a, Tensor::new(&[n, k], da).unwrap());
                }
                if live[b.0] {
                    let mut db = vec![T::zero(); k * m];
                    T::gemm(
                        k,
                        n,
                        m,
                        T::one(),
                        self.value(*a).data(),
                        true,
                        dy.data(),
                        false,
                        T::zero(),
                        &mut db,
                    );
                    self.acc(live, grads, *b, Tensor::new(&[k, m], db).unwrap());
                }
            }
            Op::AddBias(x, b) => {
                self.acc(live, grads, *x, dy.clone());
                if live[b.0] {
                    let m = self.shape(*b)[0];
                    let mut db = vec![T::zero(); m];
                    for row in dy.data().chunks_exact(m) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.acc(live, grads, *b, Tensor::new(&[m], db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.acc(live, grads, *a, dy.clone());
                self.acc(live, grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(live, grads, *a, dy.clone());
                self.acc(live, grads, *b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if live[a.0] {
                    self.acc(live, grads, *a, dy.zip_map(self.value(*b), |g, v| g * v));
                }
                if live[b.0] {
                    self.acc(live, grads, *b, dy.zip_map(self.value(*a), |g, v| g * v));
                }
            }
            Op::MulScalar(x, s) => {
                let sv = self.value(*s).item();
                self.acc(live, grads, *x, dy.map(|g| g * sv));
                if live[s.0] {
                    let ds: T = dy
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&g, &v)| g * v)
                        .sum();
                    let shape = self.shape(*s).to_vec();
                    self.acc(live, grads, *s, Tensor::full(&shape, ds));
                }
            }
            Op::Scale(x, c) => self.acc(live, grads, *x, dy.map(|g| g * *c)),
            Op::AddScalar(x, _) => self.acc(live, grads, *x, dy.clone()),
            Op::Relu(x) => {
                let g = dy.zip_map(
                    self.value(*x),
                    |g, v| if v > T::zero() { g } else { T::zero() },
                );
                self.acc(live, grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = dy.zip_map(&node.value, |g, s| g * s * (T::one() - s));
                self.acc(live, grads, *x, g);
            }
            Op::Softplus(x) => {
                let g = dy.zip_map(self.value(*x), |g, v| g * sigmoid(v));
                self.acc(live, grads, *x, g);
            }
            Op::Ln(x) => {
                let g = dy.zip_map(self.value(*x), |g, v| g / v);
                self.acc(live, grads, *x, g);
            }
            Op::Powf(x, p) => {
                let p = *p;
                let g = dy.zip_map(self.value(*x), |g, v| g * p * v.powf(p - T::one()));
                self.acc(live, grads, *x, g);
            }
            Op::Conv1d { x, w, b } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let geom = conv::Geometry::new(sx[0], sx[1], sx[2], sw[0], sw[2]);
                let want_x = live[x.0];
                let want_w = live[w.0];
                let (dx, dw, db) = conv::backward(
                    &geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy.data(),
                    want_x,
                    want_w,
                );
                if let Some(dx) = dx {
                    self.acc(live, grads, *x, Tensor::new(sx, dx).unwrap());
                }
                if let Some(dw) = dw {
                    self.acc(live, grads, *w, Tensor::new(sw, dw).unwrap());
                }
                if let Some(b) = b {
                    self.acc(live, grads, *b, Tensor::new(&[sw[0]], db).unwrap());
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let d = self.shape(p)[*axis];
                    if live[p.0] {
                        let mut g = Vec::with_capacity(outer * d * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            g.extend_from_slice(&dy.data()[start..start + d * inner]);
                        }
                        let shape = self.shape(p).to_vec();
                        self.acc(live, grads, p, Tensor::new(&shape, g).unwrap());
                    }
                    offset += d;
                }
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.acc(live, grads, *x, dy.clone().reshape(&shape).unwrap());
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                self.acc(live, grads, *x, Tensor::full(&shape, dy.item()));
            }
            Op::Mean(x) => {
                let shape = self.shape(*x).to_vec();
                let n = T::from_usize(self.value(*x).len()).unwrap();
                self.acc(live, grads, *x, Tensor::full(&shape, dy.item() / n));
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let (outer, d, inner) = split_axis(&shape, *axis);
                let inv = T::one() / T::from_usize(d).unwrap();
                let mut g = vec![T::zero(); outer * d * inner];
                for o in 0..outer {
                    let src = &dy.data()[o * inner..(o + 1) * inner];
                    for j in 0..d {
                        let dst = &mut g[(o * d + j) * inner..(o * d + j + 1) * inner];
                        for (t, &s) in dst.iter_mut().zip(src) {
                            *t = s * inv;
                        }
                    }
                }
                self.acc(live, grads, *x, Tensor::new(&shape, g).unwrap());
            }
            Op::GatherRows { x, idx } => {
                let shape = self.shape(*x).to_vec();
                let c = shape[1];
                let mut g = vec![T::zero(); shape[0] * c];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        g[i * c + j] += dy.data()[r * c + j];
                    }
                }
                self.acc(live, grads, *x, Tensor::new(&shape, g).unwrap());
            }
            Op::ComplexMul { x, coef } => {
                let mut g = Vec::with_capacity(dy.len());
                for (row, &(a, b)) in dy.data().chunks_exact(2).zip(coef) {
                    // multiply by conj(coef)
                    g.push(a * row[0] + b * row[1]);
                    g.push(-b * row[0] + a * row[1]);
                }
                let shape = self.shape(*x).to_vec();
                self.acc(live, grads, *x, Tensor::new(&shape, g).unwrap());
            }
        }
    }

    // ---- forward mode -----------------------------------------------------

    /// Appends nodes computing the directional derivative of `out` when the
    /// given leaves move along the given tangents. The returned node has the
    /// shape of `out` and is differentiable with respect to every parameter
    /// the original computation used.
    ///
    /// Tangents of nodes that depend on none of the seeds are zero and are
    /// not materialised. Tangents through kernel or bias operands of `conv1d`
    /// are not supported.
    pub fn jvp(&mut self, out: Var, seeds: &[(Var, Tensor<T>)]) -> Result<Var> {
        self.check(out)?;
        let mut tangent: Vec<Option<Var>> = vec![None; out.0 + 1];
        for (v, t) in seeds {
            self.check(*v)?;
            if self.shape(*v) != t.shape() {
                return Err(self.shape_err(
                    "jvp",
                    format!(
                        "seed {:?} for node of shape {:?}",
                        t.shape(),
                        self.shape(*v)
                    ),
                ));
            }
            if v.0 <= out.0 {
                tangent[v.0] = Some(self.constant(t.clone()));
            }
        }
        for i in 0..=out.0 {
            if tangent[i].is_some() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let t = |v: &Var| tangent[v.0];
            let res = match op {
                Op::Leaf => None,
                Op::MatMul(a, b) => {
                    let l = match t(&a) {
                        Some(ta) => Some(self.matmul(ta, b)?),
                        None => None,
                    };
                    let r = match t(&b) {
                        Some(tb) => Some(self.matmul(a, tb)?),
                        None => None,
                    };
                    self.add_opt(l, r)?
                }
                Op::AddBias(x, b) => match (t(&x), t(&b)) {
                    (tx, None) => tx,
                    (tx, Some(tb)) => {
                        let base = match tx {
                            Some(tx) => tx,
                            None => self.constant(Tensor::zeros(self.shape(x))),
                        };
                        Some(self.add_bias(base, tb)?)
                    }
                },
                Op::Add(a, b) => {
                    let (ta, tb) = (t(&a), t(&b));
                    self.add_opt(ta, tb)?
                }
                Op::Sub(a, b) => match (t(&a), t(&b)) {
                    (ta, None) => ta,
                    (None, Some(tb)) => Some(self.neg(tb)?),
                    (Some(ta), Some(tb)) => Some(self.sub(ta, tb)?),
                },
                Op::Mul(a, b) => {
                    let l = match t(&a) {
                        Some(ta) => Some(self.mul(ta, b)?),
                        None => None,
                    };
                    let r = match t(&b) {
                        Some(tb) => Some(self.mul(a, tb)?),
                        None => None,
                    };
                    self.add_opt(l, r)?
                }
                Op::MulScalar(x, s) => {
                    let l = match t(&x) {
                        Some(tx) => Some(self.mul_scalar(tx, s)?),
                        None => None,
                    };
                    let r = match t(&s) {
                        Some(ts) => Some(self.mul_scalar(x, ts)?),
                        None => None,
                    };
                    self.add_opt(l, r)?
                }
                Op::Scale(x, c) => match t(&x) {
                    Some(tx) => Some(self.scale(tx, c.to_f64().unwrap())?),
                    None => None,
                },
                Op::AddScalar(x, _) => t(&x),
                Op::Relu(x) => match t(&x) {
                    Some(tx) => {
                        let mask =
                            self.value(x)
                                .map(|v| if v > T::zero() { T::one() } else { T::zero() });
                        let m = self.constant(mask);
                        Some(self.mul(tx, m)?)
                    }
                    None => None,
                },
                Op::Sigmoid(x) => match t(&x) {
                    Some(tx) => {
                        let y = Var(i);
                        let ny = self.neg(y)?;
                        let one_minus = self.add_scalar(ny, 1.0)?;
                        let d = self.mul(y, one_minus)?;
                        Some(self.mul(tx, d)?)
                    }
                    None => None,
                },
                Op::Softplus(x) => match t(&x) {
                    Some(tx) => {
                        let s = self.sigmoid(x)?;
                        Some(self.mul(tx, s)?)
                    }
                    None => None,
                },
                Op::Ln(x) => match t(&x) {
                    Some(tx) => {
                        let r = self.powf(x, -1.0)?;
                        Some(self.mul(tx, r)?)
                    }
                    None => None,
                },
                Op::Powf(x, p) => match t(&x) {
                    Some(tx) => {
                        let p = p.to_f64().unwrap();
                        let q = self.powf(x, p - 1.0)?;
                        let d = self.scale(q, p)?;
                        Some(self.mul(tx, d)?)
                    }
                    None => None,
                },
                Op::Conv1d { x, w, b } => {
                    if t(&w).is_some() || b.is_some_and(|b| t(&b).is_some()) {
                        return Err(NnError::NoTangent("conv1d kernel/bias"));
                    }
                    match t(&x) {
                        Some(tx) => Some(self.conv1d(tx, w, None)?),
                        None => None,
                    }
                }
                Op::Concat { parts, axis } => {
                    if parts.iter().all(|p| t(p).is_none()) {
                        None
                    } else {
                        let mut tparts = Vec::with_capacity(parts.len());
                        for p in &parts {
                            let tp = match t(p) {
                                Some(tp) => tp,
                                None => self.constant(Tensor::zeros(self.shape(*p))),
                            };
                            tparts.push(tp);
                        }
                        Some(self.concat(&tparts, axis)?)
                    }
                }
                Op::Reshape(x) => match t(&x) {
                    Some(tx) => {
                        let shape = self.shape(Var(i)).to_vec();
                        Some(self.reshape(tx, &shape)?)
                    }
                    None => None,
                },
                Op::Sum(x) => match t(&x) {
                    Some(tx) => Some(self.sum(tx)?),
                    None => None,
                },
                Op::Mean(x) => match t(&x) {
                    Some(tx) => Some(self.mean(tx)?),
                    None => None,
                },
                Op::MeanAxis { x, axis } => match t(&x) {
                    Some(tx) => Some(self.mean_axis(tx, axis)?),
                    None => None,
                },
                Op::GatherRows { x, idx } => match t(&x) {
                    Some(tx) => Some(self.gather_rows(tx, &idx)?),
                    None => None,
                },
                Op::ComplexMul { x, coef } => match t(&x) {
                    Some(tx) => {
                        let c: Vec<(f64, f64)> = coef
                            .iter()
                            .map(|(a, b)| (a.to_f64().unwrap(), b.to_f64().unwrap()))
                            .collect();
                        Some(self.complex_mul(tx, &c)?)
                    }
                    None => None,
                },
            };
            tangent[i] = res;
        }
        match tangent[out.0] {
            Some(v) => Ok(v),
            None => {
                let shape = self.shape(out).to_vec();
                Ok(self.constant(Tensor::zeros(&shape)))
            }
        }
    }

    fn add_opt(&mut self, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(self.add(a, b)?),
            (a, None) => a,
            (None, b) => b,
        })
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(v: T) -> T {
    // max(v, 0) + ln(1 + e^{-|v|})
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn dense_identity_forward() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let h = g.matmul(x, w).unwrap();
        let y = g.add_bias(h, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", t(&[3], &[-1.0, 0.0, 3.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn identity_kernel_conv() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", t(&[1, 1, 4], &[1.0, -2.0, 3.0, 0.5]));
        let w = g.constant(t(&[1, 1, 1], &[1.0]));
        let y = g.conv1d(x, w, None).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input("x", Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sigmoid_bce_gradient() {
        // loss = -[c ln s + (1-c) ln(1-s)], s = sigmoid(l)  =>  d/dl = s - c
        for &(l, c) in &[(0.3, 1.0), (-1.7, 0.0), (2.5, 0.0), (-0.2, 1.0)] {
            let mut g = Graph::<f64>::new();
            let x = g.input("l", Tensor::scalar(l));
            let s = g.sigmoid(x).unwrap();
            let ls = g.ln(s).unwrap();
            let ns = g.neg(s).unwrap();
            let oms = g.add_scalar(ns, 1.0).unwrap();
            let l1s = g.ln(oms).unwrap();
            let a = g.scale(ls, -c).unwrap();
            let b = g.scale(l1s, -(1.0 - c)).unwrap();
            let loss = g.add(a, b).unwrap();
            let grads = g.backward(loss).unwrap();
            let expect = sigmoid(l) - c;
            assert!((grads.get(x).unwrap().item() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_errors() {
        let g = Graph::<f64>::new();
        assert!(matches!(g.backward(Var(0)), Err(NnError::EmptyGraph)));
        let mut g = Graph::<f64>::new();
        let x = g.input("x", t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(NnError::NonScalarLoss { .. })));
    }

    #[test]
    fn pruned_backward_matches_full_on_targets() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a", t(&[2, 2], &[0.5, -1.0, 2.0, 0.3]));
        let b = g.input("b", t(&[2, 2], &[1.5, 0.2, -0.7, 1.1]));
        let c = g.input("c", t(&[2, 2], &[0.1, 0.9, -0.4, 0.6]));
        let ab = g.matmul(a, b).unwrap();
        let abc = g.mul(ab, c).unwrap();
        let r = g.relu(abc).unwrap();
        let loss = g.sum(r).unwrap();
        let full = g.backward(loss).unwrap();
        let pruned = g.backward_wrt(loss, &[a]).unwrap();
        assert_eq!(full.get(a).unwrap().data(), pruned.get(a).unwrap().data());
        assert!(pruned.get(b).is_none());
        assert!(pruned.get(c).is_none());
        assert!(full.get(c).is_some());
    }

    #[test]
    fn shape_error_names_node() {
        let mut g = Graph::<f64>::new();
        let a = g.input("a", t(&[2, 3], &[0.0; 6]));
        let b = g.input("b", t(&[2, 3], &[0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("node 2"), "{err}");
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(-20.0f64) - 2.061153622438558e-9).abs() < 1e-17);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0f64) >= 0.0);
    }

    #[test]
    fn jvp_matches_directional_difference() {
        // f(x) = sum(relu(x W) * sigmoid(x W)), directional derivative along u
        let w = t(&[3, 2], &[0.5, -1.0, 0.3, 0.8, -0.2, 0.1]);
        let x0 = [0.4, -0.7, 1.2];
        let u = [0.3, 0.1, -0.5];
        let f = |x: &[f64]| {
            let mut g = Graph::<f64>::new();
            let xv = g.input("x", t(&[1, 3], x));
            let wv = g.constant(w.clone());
            let h = g.matmul(xv, wv).unwrap();
            let r = g.relu(h).unwrap();
            let s = g.sigmoid(h).unwrap();
            let p = g.mul(r, s).unwrap();
            let o = g.sum(p).unwrap();
            (g, xv, o)
        };
        let (mut g, xv, o) = f(&x0);
        let d = g.jvp(o, &[(xv, t(&[1, 3], &u))]).unwrap();
        let analytic = g.value(d).item();
        let h = 1e-6;
        let xp: Vec<f64> = x0.iter().zip(&u).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x0.iter().zip(&u).map(|(a, b)| a - h * b).collect();
        let (gp, _, op) = f(&xp);
        let (gm, _, om) = f(&xm);
        let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
        assert!((analytic - numeric).abs() < 1e-8, "{analytic} vs {numeric}");
    }
}
