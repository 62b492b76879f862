//! im2col kernels for 1-D "same" convolution.

use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub in_ch: usize,
    pub len: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn new(batch: usize, in_ch: usize, len: usize, filters: usize, kernel: usize) -> Self {
        Self {
            batch,
            in_ch,
            len,
            filters,
            kernel,
            pad_left: (kernel.saturating_sub(1)) / 2,
        }
    }

    fn rows(&self) -> usize {
        self.in_ch * self.kernel
    }
}

/// Fills `cols` (`[in_ch * kernel, len]`) from one batch item `x` (`[in_ch, len]`).
fn im2col<T: Real>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let l = g.len;
    for c in 0..g.in_ch {
        let src = &x[c * l..(c + 1) * l];
        for k in 0..g.kernel {
            let dst = &mut cols[(c * g.kernel + k) * l..(c * g.kernel + k + 1) * l];
            let shift = k as isize - g.pad_left as isize;
            for (t, d) in dst.iter_mut().enumerate() {
                let s = t as isize + shift;
                *d = if s >= 0 && (s as usize) < l {
                    src[s as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// Scatter-adds `cols` back into `dx` (`[in_ch, len]`).
fn col2im<T: Real>(g: &Geometry, cols: &[T], dx: &mut [T]) {
    let l = g.len;
    for c in 0..g.in_ch {
        for k in 0..g.kernel {
            let src = &cols[(c * g.kernel + k) * l..(c * g.kernel + k + 1) * l];
            let shift = k as isize - g.pad_left as isize;
            for (t, &v) in src.iter().enumerate() {
                let s = t as isize + shift;
                if s >= 0 && (s as usize) < l {
                    dx[c * l + s as usize] += v;
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(g: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (l, f, r) = (g.len, g.filters, g.rows());
    let mut out = vec![T::zero(); g.batch * f * l];
    let mut cols = vec![T::zero(); r * l];
    for b in 0..g.batch {
        im2col(g, &x[b * g.in_ch * l..(b + 1) * g.in_ch * l], &mut cols);
        let y = &mut out[b * f * l..(b + 1) * f * l];
        if let Some(bias) = bias {
            for (row, &bb) in y.chunks_exact_mut(l).zip(bias) {
                row.fill(bb);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(f, r, l, T::one(), w, false, &cols, false, beta, y);
    }
    out
}

/// Returns `(dx, dw, dbias)`; `dbias` is always computed.
pub(crate) fn backward<T: Real>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (l, f, r) = (g.len, g.filters, g.rows());
    let mut dx = want_x.then(|| vec![T::zero(); g.batch * g.in_ch * l]);
    let mut dw = want_w.then(|| vec![T::zero(); f * r]);
    let mut db = vec![T::zero(); f];
    let mut cols = vec![T::zero(); r * l];
    let mut dcols = vec![T::zero(); r * l];
    for b in 0..g.batch {
        let dyb = &dy[b * f * l..(b + 1) * f * l];
        for (acc, row) in db.iter_mut().zip(dyb.chunks_exact(l)) {
            *acc += row.iter().copied().sum::<T>();
        }
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[b * g.in_ch * l..(b + 1) * g.in_ch * l], &mut cols);
            T::gemm(f, l, r, T::one(), dyb, false, &cols, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                r,
                f,
                l,
                T::one(),
                w,
                true,
                dyb,
                false,
                T::zero(),
                &mut dcols,
            );
            col2im(g, &dcols, &mut dx[b * g.in_ch * l..(b + 1) * g.in_ch * l]);
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &Geometry, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.filters * g.len];
        for b in 0..g.batch {
            for fi in 0..g.filters {
                for t in 0..g.len {
                    let mut acc = bias[fi];
                    for c in 0..g.in_ch {
                        for k in 0..g.kernel {
                            let s = t as isize + k as isize - g.pad_left as isize;
                            if s >= 0 && (s as usize) < g.len {
                                acc += w[(fi * g.in_ch + c) * g.kernel + k]
                                    * x[(b * g.in_ch + c) * g.len + s as usize];
                            }
                        }
                    }
                    out[(b * g.filters + fi) * g.len + t] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_sum() {
        let g = Geometry::new(2, 3, 7, 4, 5);
        let x: Vec<f64> = (0..2 * 3 * 7)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let w: Vec<f64> = (0..4 * 3 * 5)
            .map(|i| ((i * 13 % 7) as f64 - 3.0) / 4.0)
            .collect();
        let bias = [0.1, -0.2, 0.3, 0.0];
        let fast = forward(&g, &x, &w, Some(&bias));
        let slow = naive(&g, &x, &w, &bias);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn even_kernel_pads_right_more() {
        let g = Geometry::new(1, 1, 4, 1, 4);
        assert_eq!(g.pad_left, 1);
    }
}
