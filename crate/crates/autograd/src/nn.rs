//! Matrix products, 1-D convolutions and the fused normalisation ops used by
//! the network layers.

use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Ix2, Ix3, IxDyn, Zip};

use crate::tape::Var;
use crate::Tensor;

fn as2(t: &Tensor) -> ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("expected rank-2 tensor")
}

/// Flattens all leading axes: `(.., m, k) -> (prod, k)`.
fn flat_rows(t: &Tensor) -> Array2<f64> {
    let k = *t.shape().last().unwrap();
    let rows = t.len() / k.max(1);
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, k))
        .expect("flatten rows")
}

/// Geometry of a strided 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dSpec {
    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.padding - kernel) / self.stride + 1
    }

    pub fn transposed_out_len(&self, input: usize, kernel: usize, output_padding: usize) -> usize {
        (input - 1) * self.stride + kernel + output_padding - 2 * self.padding
    }
}

/// `cols[c*K + k, t] = x[c, t*stride + k - pad]` (zero outside).
fn im2col(x: ArrayView2<'_, f64>, kernel: usize, spec: Conv1dSpec, out_len: usize) -> Array2<f64> {
    let (channels, len) = x.dim();
    let mut cols = Array2::<f64>::zeros((channels * kernel, out_len));
    for c in 0..channels {
        let row_in = x.row(c);
        for k in 0..kernel {
            let mut row = cols.row_mut(c * kernel + k);
            for t in 0..out_len {
                let pos = (t * spec.stride + k) as isize - spec.padding as isize;
                if pos >= 0 && (pos as usize) < len {
                    row[t] = row_in[pos as usize];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back into a `(channels, len)` signal.
fn col2im(
    cols: ArrayView2<'_, f64>,
    channels: usize,
    kernel: usize,
    spec: Conv1dSpec,
    len: usize,
) -> Array2<f64> {
    let out_len = cols.ncols();
    let mut x = Array2::<f64>::zeros((channels, len));
    for c in 0..channels {
        let mut row_out = x.row_mut(c);
        for k in 0..kernel {
            let row = cols.row(c * kernel + k);
            for t in 0..out_len {
                let pos = (t * spec.stride + k) as isize - spec.padding as isize;
                if pos >= 0 && (pos as usize) < len {
                    row_out[pos as usize] += row[t];
                }
            }
        }
    }
    x
}

impl<'t> Var<'t> {
    /// `(.., m, k) x (k, n) -> (.., m, n)`.
    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(b.ndim(), 2, "matmul rhs must be rank 2");
        let k = *a.shape().last().unwrap();
        assert_eq!(k, b.shape()[0], "matmul inner dimensions {:?} x {:?}", a.shape(), b.shape());
        let a2 = flat_rows(&a);
        let out2 = a2.dot(&as2(&b));
        let mut out_shape = a.shape().to_vec();
        *out_shape.last_mut().unwrap() = b.shape()[1];
        let out = out2
            .into_dyn()
            .into_shape_with_order(IxDyn(&out_shape))
            .expect("matmul output shape");
        let a_shape = a.shape().to_vec();
        self.record(
            out,
            &[self, rhs],
            Box::new(move |g, need| {
                let g2 = flat_rows(g);
                let b2 = as2(&b);
                vec![
                    need[0].then(|| {
                        g2.dot(&b2.t())
                            .into_dyn()
                            .into_shape_with_order(IxDyn(&a_shape))
                            .expect("matmul lhs gradient")
                    }),
                    need[1].then(|| a2.t().dot(&g2).into_dyn()),
                ]
            }),
        )
    }

    /// Batched product `(g, m, k) x (g, k, n) -> (g, m, n)`.
    pub fn bmm(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        let a3 = a.view().into_dimensionality::<Ix3>().expect("bmm lhs rank 3");
        let b3 = b.view().into_dimensionality::<Ix3>().expect("bmm rhs rank 3");
        let (groups, m, k) = a3.dim();
        let (gb, kb, n) = b3.dim();
        assert!(groups == gb && k == kb, "bmm shapes {:?} x {:?}", a.shape(), b.shape());
        let mut out = ndarray::Array3::<f64>::zeros((groups, m, n));
        for i in 0..groups {
            general_mat_mul(
                1.0,
                &a3.index_axis(Axis(0), i),
                &b3.index_axis(Axis(0), i),
                0.0,
                &mut out.index_axis_mut(Axis(0), i),
            );
        }
        self.record(
            out.into_dyn(),
            &[self, rhs],
            Box::new(move |g, need| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
                let b3 = b.view().into_dimensionality::<Ix3>().unwrap();
                let ga = need[0].then(|| {
                    let mut ga = ndarray::Array3::<f64>::zeros((groups, m, k));
                    for i in 0..groups {
                        general_mat_mul(
                            1.0,
                            &g3.index_axis(Axis(0), i),
                            &b3.index_axis(Axis(0), i).t(),
                            0.0,
                            &mut ga.index_axis_mut(Axis(0), i),
                        );
                    }
                    ga.into_dyn()
                });
                let gb = need[1].then(|| {
                    let mut gb = ndarray::Array3::<f64>::zeros((groups, k, n));
                    for i in 0..groups {
                        general_mat_mul(
                            1.0,
                            &a3.index_axis(Axis(0), i).t(),
                            &g3.index_axis(Axis(0), i),
                            0.0,
                            &mut gb.index_axis_mut(Axis(0), i),
                        );
                    }
                    gb.into_dyn()
                });
                vec![ga, gb]
            }),
        )
    }

    /// 1-D convolution: `x (B, Cin, T)`, `weight (Cout, Cin, K)`,
    /// optional `bias (Cout)`.
    pub fn conv1d(self, weight: Var<'t>, bias: Option<Var<'t>>, spec: Conv1dSpec) -> Var<'t> {
        let (x, w) = (self.value(), weight.value());
        let x3 = x.view().into_dimensionality::<Ix3>().expect("conv1d input (B, C, T)");
        let w3 = w.view().into_dimensionality::<Ix3>().expect("conv1d weight (O, C, K)");
        let (batch, cin, len) = x3.dim();
        let (cout, cin_w, kernel) = w3.dim();
        assert_eq!(cin, cin_w, "conv1d channel mismatch");
        let out_len = spec.out_len(len, kernel);
        let wmat = w
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cout, cin * kernel))
            .unwrap();
        let mut out = ndarray::Array3::<f64>::zeros((batch, cout, out_len));
        let mut all_cols = Vec::with_capacity(batch);
        for b in 0..batch {
            let cols = im2col(x3.index_axis(Axis(0), b), kernel, spec, out_len);
            general_mat_mul(1.0, &wmat, &cols, 0.0, &mut out.index_axis_mut(Axis(0), b));
            all_cols.push(cols);
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            let bv = bv.view().into_shape_with_order((1, cout, 1)).unwrap();
            out += &bv;
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.record(
            out.into_dyn(),
            &parents,
            Box::new(move |g, need| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let gx = need[0].then(|| {
                    let mut gx = ndarray::Array3::<f64>::zeros((batch, cin, len));
                    for b in 0..batch {
                        let gcols = wmat.t().dot(&g3.index_axis(Axis(0), b));
                        gx.index_axis_mut(Axis(0), b)
                            .assign(&col2im(gcols.view(), cin, kernel, spec, len));
                    }
                    gx.into_dyn()
                });
                let gw = need[1].then(|| {
                    let mut gw = Array2::<f64>::zeros((cout, cin * kernel));
                    for (b, cols) in all_cols.iter().enumerate() {
                        general_mat_mul(1.0, &g3.index_axis(Axis(0), b), &cols.t(), 1.0, &mut gw);
                    }
                    gw.into_shape_with_order((cout, cin, kernel)).unwrap().into_dyn()
                });
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(need[2].then(|| g3.sum_axis(Axis(2)).sum_axis(Axis(0)).into_dyn()));
                }
                grads
            }),
        )
    }

    /// Transposed 1-D convolution (the adjoint of [`Var::conv1d`] in its
    /// input): `x (B, Cin, T)`, `weight (Cin, Cout, K)`, optional `bias (Cout)`.
    pub fn conv_transpose1d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        spec: Conv1dSpec,
        output_padding: usize,
    ) -> Var<'t> {
        let (x, w) = (self.value(), weight.value());
        let x3 = x.view().into_dimensionality::<Ix3>().expect("conv_transpose1d input (B, C, T)");
        let w3 = w.view().into_dimensionality::<Ix3>().expect("conv_transpose1d weight (I, O, K)");
        let (batch, cin, len) = x3.dim();
        let (cin_w, cout, kernel) = w3.dim();
        assert_eq!(cin, cin_w, "conv_transpose1d channel mismatch");
        let out_len = spec.transposed_out_len(len, kernel, output_padding);
        // As a convolution from the output space back to the input space this
        // has `len` output positions; check the geometry agrees.
        assert_eq!(spec.out_len(out_len, kernel), len, "conv_transpose1d geometry");
        let wmat = w
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((cin, cout * kernel))
            .unwrap();
        let mut out = ndarray::Array3::<f64>::zeros((batch, cout, out_len));
        for b in 0..batch {
            let cols = wmat.t().dot(&x3.index_axis(Axis(0), b));
            out.index_axis_mut(Axis(0), b)
                .assign(&col2im(cols.view(), cout, kernel, spec, out_len));
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            let bv = bv.view().into_shape_with_order((1, cout, 1)).unwrap();
            out += &bv;
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.record(
            out.into_dyn(),
            &parents,
            Box::new(move |g, need| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let x3 = x.view().into_dimensionality::<Ix3>().unwrap();
                let cols: Vec<Array2<f64>> = (0..batch)
                    .map(|b| im2col(g3.index_axis(Axis(0), b), kernel, spec, len))
                    .collect();
                let gx = need[0].then(|| {
                    let mut gx = ndarray::Array3::<f64>::zeros((batch, cin, len));
                    for (b, c) in cols.iter().enumerate() {
                        general_mat_mul(1.0, &wmat, c, 0.0, &mut gx.index_axis_mut(Axis(0), b));
                    }
                    gx.into_dyn()
                });
                let gw = need[1].then(|| {
                    let mut gw = Array2::<f64>::zeros((cin, cout * kernel));
                    for (b, c) in cols.iter().enumerate() {
                        general_mat_mul(1.0, &x3.index_axis(Axis(0), b), &c.t(), 1.0, &mut gw);
                    }
                    gw.into_shape_with_order((cin, cout, kernel)).unwrap().into_dyn()
                });
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(need[2].then(|| g3.sum_axis(Axis(2)).sum_axis(Axis(0)).into_dyn()));
                }
                grads
            }),
        )
    }

    /// Normalises the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(self, eps: f64) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let d = *shape.last().unwrap();
        let x2 = flat_rows(&x);
        let rows = x2.nrows();
        let mut y = Array2::<f64>::zeros((rows, d));
        let mut inv_std = vec![0.0; rows];
        for (r, slot) in inv_std.iter_mut().enumerate() {
            let row = x2.row(r);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            *slot = is;
            y.row_mut(r).assign(&row.mapv(|v| (v - mean) * is));
        }
        let y = Rc::new(y);
        let out = y.as_ref().clone().into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap();
        self.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let g2 = flat_rows(g);
                let mut gx = Array2::<f64>::zeros((rows, d));
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = g2.row(r);
                    let yr = y.row(r);
                    let mg = gr.sum() / d as f64;
                    let mgy = gr.dot(&yr) / d as f64;
                    Zip::from(gx.row_mut(r))
                        .and(&gr)
                        .and(&yr)
                        .for_each(|o, &gv, &yv| *o = is * (gv - mg - yv * mgy));
                }
                vec![Some(gx.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap())]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let mut y = flat_rows(&x);
        for mut row in y.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let y = Rc::new(y);
        let out = y.as_ref().clone().into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap();
        self.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let g2 = flat_rows(g);
                let mut gx = Array2::<f64>::zeros(y.raw_dim());
                for r in 0..y.nrows() {
                    let yr = y.row(r);
                    let dot = g2.row(r).dot(&yr);
                    Zip::from(gx.row_mut(r))
                        .and(&g2.row(r))
                        .and(&yr)
                        .for_each(|o, &gv, &yv| *o = yv * (gv - dot));
                }
                vec![Some(gx.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap())]
            }),
        )
    }

    /// Sliding windows over the last axis of a `(B, L)` signal:
    /// output `(B, windows, width)` with `windows = 1 + (L - width) / hop`.
    pub fn unfold(self, width: usize, hop: usize) -> Var<'t> {
        let x = self.value();
        let x2 = x.view().into_dimensionality::<Ix2>().expect("unfold expects (B, L)");
        let (batch, len) = x2.dim();
        assert!(len >= width && hop >= 1, "unfold: signal shorter than window");
        let windows = 1 + (len - width) / hop;
        let mut out = ndarray::Array3::<f64>::zeros((batch, windows, width));
        for b in 0..batch {
            for w in 0..windows {
                out.slice_mut(s![b, w, ..])
                    .assign(&x2.slice(s![b, w * hop..w * hop + width]));
            }
        }
        self.record(
            out.into_dyn(),
            &[self],
            Box::new(move |g, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let mut gx = Array2::<f64>::zeros((batch, len));
                for b in 0..batch {
                    for w in 0..windows {
                        let mut dst = gx.slice_mut(s![b, w * hop..w * hop + width]);
                        dst += &g3.slice(s![b, w, ..]);
                    }
                }
                vec![Some(gx.into_dyn())]
            }),
        )
    }
}
