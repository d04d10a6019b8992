//! Differentiable operations on [`Var`].

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{Axis, IxDyn, Slice, Zip};

use crate::special;
use crate::tape::{Backward, Tape, Var};
use crate::Tensor;

/// Sums `g` down to `shape`, undoing numpy-style broadcasting.
pub(crate) fn unbroadcast(mut g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

// Named methods back the operator impls and read better in long chains.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    pub(crate) fn record(self, value: Tensor, parents: &[Var<'t>], backward: Backward) -> Var<'t> {
        self.tape.push(Rc::new(value), parents, backward)
    }

    /// Elementwise map with a derivative expressed in terms of input and
    /// output values.
    pub fn map(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let y = Rc::new(x.mapv(f));
        let yc = y.clone();
        self.tape.push(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut out = g.clone();
                Zip::from(&mut out)
                    .and(&*x)
                    .and(&*yc)
                    .for_each(|o, &xv, &yv| *o *= df(xv, yv));
                vec![Some(out)]
            }),
        )
    }

    // ---- broadcasting arithmetic ------------------------------------------------

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let out = &*a + &*b;
        self.record(
            out,
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| unbroadcast(g.clone(), &sa)),
                    need[1].then(|| unbroadcast(g.clone(), &sb)),
                ]
            }),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let out = &*a - &*b;
        self.record(
            out,
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| unbroadcast(g.clone(), &sa)),
                    need[1].then(|| unbroadcast(-g, &sb)),
                ]
            }),
        )
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let out = &*a * &*b;
        self.record(
            out,
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| unbroadcast(g * &*b, a.shape())),
                    need[1].then(|| unbroadcast(g * &*a, b.shape())),
                ]
            }),
        )
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let out = &*a / &*b;
        self.record(
            out,
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| unbroadcast(g / &*b, a.shape())),
                    need[1].then(|| {
                        let t = &(g * &*a) / &(&*b * &*b);
                        unbroadcast(-t, b.shape())
                    }),
                ]
            }),
        )
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().mapv(|v| v + c);
        self.record(out, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        let out = self.value().mapv(|v| v * c);
        self.record(out, &[self], Box::new(move |g, _| vec![Some(g * c)]))
    }

    pub fn neg(self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    // ---- elementwise functions --------------------------------------------------

    pub fn square(self) -> Var<'t> {
        self.map(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.map(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(self) -> Var<'t> {
        self.map(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        self.map(f64::ln, |x, _| 1.0 / x)
    }

    pub fn log2(self) -> Var<'t> {
        self.map(f64::log2, |x, _| 1.0 / (x * std::f64::consts::LN_2))
    }

    pub fn tanh(self) -> Var<'t> {
        self.map(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.map(special::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(self) -> Var<'t> {
        self.map(special::softplus, |x, _| special::sigmoid(x))
    }

    pub fn relu(self) -> Var<'t> {
        self.map(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(self) -> Var<'t> {
        self.map(
            |x| x * special::normal_cdf(x),
            |x, _| special::normal_cdf(x) + x * special::normal_pdf(x),
        )
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(self, floor: f64) -> Var<'t> {
        self.map(
            move |x| x.max(floor),
            move |x, _| if x > floor { 1.0 } else { 0.0 },
        )
    }

    // ---- two-sided box masses ---------------------------------------------------

    /// `Φ(upper) - Φ(lower)` elementwise, for same-shaped inputs.
    pub fn normal_box_mass(self, lower: Var<'t>) -> Var<'t> {
        let (u, l) = (self.value(), lower.value());
        assert_eq!(u.shape(), l.shape(), "normal_box_mass operands must agree");
        let mut out = Tensor::zeros(u.raw_dim());
        Zip::from(&mut out)
            .and(&*u)
            .and(&*l)
            .for_each(|o, &a, &b| *o = special::normal_box_mass(a, b));
        self.record(
            out,
            &[self, lower],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(&*u)
                            .for_each(|d, &a| *d *= special::normal_pdf(a));
                        d
                    }),
                    need[1].then(|| {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(&*l)
                            .for_each(|d, &b| *d *= -special::normal_pdf(b));
                        d
                    }),
                ]
            }),
        )
    }

    /// `σ(upper) - σ(lower)` elementwise, for same-shaped inputs.
    pub fn logistic_box_mass(self, lower: Var<'t>) -> Var<'t> {
        let (u, l) = (self.value(), lower.value());
        assert_eq!(u.shape(), l.shape(), "logistic_box_mass operands must agree");
        let mut out = Tensor::zeros(u.raw_dim());
        Zip::from(&mut out)
            .and(&*u)
            .and(&*l)
            .for_each(|o, &a, &b| *o = special::logistic_box_mass(a, b));
        self.record(
            out,
            &[self, lower],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(&*u)
                            .for_each(|d, &a| *d *= special::sigmoid_grad(a));
                        d
                    }),
                    need[1].then(|| {
                        let mut d = g.clone();
                        Zip::from(&mut d)
                            .and(&*l)
                            .for_each(|d, &b| *d *= -special::sigmoid_grad(b));
                        d
                    }),
                ]
            }),
        )
    }

    /// Forward value `replacement`, backward identity (straight-through).
    pub fn straight_through(self, replacement: Tensor) -> Var<'t> {
        assert_eq!(
            replacement.shape(),
            self.value().shape(),
            "straight-through replacement must keep the shape"
        );
        self.record(replacement, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    /// Same value, no gradient flowing back.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    // ---- reductions -------------------------------------------------------------

    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let dim = x.raw_dim();
        let out = Tensor::from_elem(IxDyn(&[]), x.sum());
        self.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let s = *g.iter().next().unwrap();
                vec![Some(Tensor::from_elem(dim.clone(), s))]
            }),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    pub fn sum_axis(self, axis: usize, keep_dim: bool) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let mut out = x.sum_axis(Axis(axis));
        if keep_dim {
            out = out.insert_axis(Axis(axis));
        }
        self.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let g = if keep_dim {
                    g.clone()
                } else {
                    g.clone().insert_axis(Axis(axis))
                };
                let full = g
                    .broadcast(IxDyn(&shape))
                    .expect("sum_axis gradient broadcast")
                    .to_owned();
                vec![Some(full)]
            }),
        )
    }

    pub fn mean_axis(self, axis: usize, keep_dim: bool) -> Var<'t> {
        let n = self.value().shape()[axis] as f64;
        self.sum_axis(axis, keep_dim).mul_scalar(1.0 / n)
    }

    // ---- shape manipulation -----------------------------------------------------

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|e| panic!("reshape {old:?} -> {shape:?}: {e}"));
        self.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let g = g
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&old))
                    .expect("reshape gradient");
                vec![Some(g)]
            }),
        )
    }

    pub fn permute(self, axes: &[usize]) -> Var<'t> {
        let x = self.value();
        let out = x
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .into_owned();
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let g = g
                    .view()
                    .permuted_axes(IxDyn(&inverse))
                    .as_standard_layout()
                    .into_owned();
                vec![Some(g)]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last(self) -> Var<'t> {
        let n = self.value().ndim();
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow out of range");
        let out = x
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        self.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut full = Tensor::zeros(IxDyn(&shape));
                full.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                    .assign(g);
                vec![Some(full)]
            }),
        )
    }

    /// Concatenates along `axis`.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("concat shapes");
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        parts[0].record(
            out,
            parts,
            Box::new(move |g, need| {
                let mut start = 0;
                lens.iter()
                    .zip(need)
                    .map(|(&len, &n)| {
                        let piece = n.then(|| {
                            g.slice_axis(Axis(axis), Slice::from(start..start + len))
                                .to_owned()
                        });
                        start += len;
                        piece
                    })
                    .collect()
            }),
        )
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::add(self, rhs)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::sub(self, rhs)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::mul(self, rhs)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        Var::div(self, rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}
