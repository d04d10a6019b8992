use autograd::gradcheck::directional_check;
use autograd::{Conv1dSpec, Tape, Tensor, Var};
use ndarray::{Dimension, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_shape_fn(IxDyn(shape), |_| scale * (rng.gen::<f64>() * 2.0 - 1.0))
}

/// Builds a scalar from the inputs, then checks the tape gradient along
/// several random directions.
fn check<F>(shapes: &[&[usize]], seed: u64, build: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s, 1.0)).collect();
    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&tape, &vars);
    let grads = tape.backward(out);
    let grad: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    let eval = |p: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var> = p.iter().map(|t| tape.constant(t.clone())).collect();
        build(&tape, &vars).item()
    };
    for _ in 0..5 {
        let dir: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s, 1.0)).collect();
        let c = directional_check(&eval, &point, &grad, &dir, 1e-4);
        assert!(c.rel_error < 1e-7, "{c:?}");
    }
}

fn weighted_sum<'t>(tape: &'t Tape, v: Var<'t>) -> Var<'t> {
    // A fixed non-uniform weighting so every output element matters
    // differently.
    let w = Tensor::from_shape_fn(IxDyn(&v.shape()), |idx: IxDyn| {
        let k: usize = idx.slice().iter().enumerate().map(|(i, x)| (i + 2) * x).sum();
        ((k % 7) as f64 - 3.0) * 0.37 + 0.11
    });
    (v * tape.constant(w)).sum()
}

#[test]
fn broadcasting_arithmetic() {
    check(&[&[3, 4], &[1, 4]], 1, |t, v| weighted_sum(t, v[0] + v[1]));
    check(&[&[3, 4], &[4]], 2, |t, v| weighted_sum(t, v[0] - v[1]));
    check(&[&[2, 3, 4], &[3, 1]], 3, |t, v| weighted_sum(t, v[0] * v[1]));
    check(&[&[2, 3], &[2, 3]], 4, |t, v| {
        weighted_sum(t, v[0] / v[1].square().add_scalar(0.5))
    });
}

#[test]
fn elementwise_functions() {
    check(&[&[5, 3]], 5, |t, v| weighted_sum(t, v[0].exp()));
    check(&[&[5, 3]], 6, |t, v| weighted_sum(t, v[0].square().add_scalar(0.1).ln()));
    check(&[&[5, 3]], 7, |t, v| weighted_sum(t, v[0].square().add_scalar(0.1).log2()));
    check(&[&[5, 3]], 8, |t, v| weighted_sum(t, v[0].square().add_scalar(0.2).sqrt()));
    check(&[&[5, 3]], 9, |t, v| weighted_sum(t, v[0].tanh()));
    check(&[&[5, 3]], 10, |t, v| weighted_sum(t, v[0].sigmoid()));
    check(&[&[5, 3]], 11, |t, v| weighted_sum(t, v[0].softplus()));
    check(&[&[5, 3]], 12, |t, v| weighted_sum(t, v[0].gelu()));
    check(&[&[5, 3]], 13, |t, v| weighted_sum(t, v[0].mul_scalar(3.0).add_scalar(-0.5)));
}

#[test]
fn box_masses() {
    check(&[&[4, 6], &[4, 6]], 14, |t, v| {
        let lower = v[0].mul_scalar(2.0);
        let upper = lower + v[1].square().add_scalar(0.3);
        weighted_sum(t, upper.normal_box_mass(lower).ln())
    });
    check(&[&[4, 6], &[4, 6]], 15, |t, v| {
        let lower = v[0].mul_scalar(3.0);
        let upper = lower + v[1].square().add_scalar(0.3);
        weighted_sum(t, upper.logistic_box_mass(lower).ln())
    });
}

#[test]
fn reductions_and_shapes() {
    check(&[&[2, 3, 4]], 16, |t, v| weighted_sum(t, v[0].sum_axis(1, false)));
    check(&[&[2, 3, 4]], 17, |t, v| weighted_sum(t, v[0].mean_axis(2, true)));
    check(&[&[2, 3, 4]], 18, |t, v| weighted_sum(t, v[0].permute(&[2, 0, 1])));
    check(&[&[2, 3, 4]], 19, |t, v| weighted_sum(t, v[0].reshape(&[6, 4]).transpose_last()));
    check(&[&[2, 5]], 20, |t, v| weighted_sum(t, v[0].narrow(1, 1, 3)));
    check(&[&[2, 3], &[2, 4]], 21, |t, v| weighted_sum(t, Var::concat(&[v[0], v[1]], 1)));
    check(&[&[3, 3]], 22, |_, v| v[0].square().mean());
}

#[test]
fn matrix_products() {
    check(&[&[2, 3, 4], &[4, 5]], 23, |t, v| weighted_sum(t, v[0].matmul(v[1])));
    check(&[&[3, 2, 4], &[3, 4, 5]], 24, |t, v| weighted_sum(t, v[0].bmm(v[1])));
}

#[test]
fn convolutions() {
    let same = Conv1dSpec { stride: 1, padding: 2 };
    let down = Conv1dSpec { stride: 2, padding: 2 };
    check(&[&[2, 3, 16], &[4, 3, 5], &[4]], 25, |t, v| {
        weighted_sum(t, v[0].conv1d(v[1], Some(v[2]), same))
    });
    check(&[&[2, 3, 16], &[4, 3, 5]], 26, |t, v| weighted_sum(t, v[0].conv1d(v[1], None, down)));
    check(&[&[2, 3, 8], &[3, 4, 5], &[4]], 27, |t, v| {
        let y = v[0].conv_transpose1d(v[1], Some(v[2]), down, 1);
        assert_eq!(y.shape(), vec![2, 4, 16]);
        weighted_sum(t, y)
    });
}

#[test]
fn fused_normalisations() {
    check(&[&[3, 6]], 28, |t, v| weighted_sum(t, v[0].layer_norm(1e-5)));
    check(&[&[2, 3, 5]], 29, |t, v| weighted_sum(t, v[0].softmax()));
    check(&[&[2, 20]], 30, |t, v| weighted_sum(t, v[0].unfold(8, 4)));
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> with the same weights.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = Conv1dSpec { stride: 2, padding: 2 };
    let x = random(&mut rng, &[2, 3, 16], 1.0);
    let w = random(&mut rng, &[4, 3, 5], 1.0);
    let y = random(&mut rng, &[2, 4, 8], 1.0);
    let tape = Tape::new();
    let cx = tape.constant(x.clone()).conv1d(tape.constant(w.clone()), None, spec);
    let ty = tape.constant(y.clone()).conv_transpose1d(tape.constant(w), None, spec, 1);
    let lhs = (&*cx.value() * &y).sum();
    let rhs = (&x * &*ty.value()).sum();
    assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn straight_through_and_clamp() {
    let tape = Tape::new();
    let x = tape.leaf(ndarray::arr1(&[0.3, 1.7, -2.2]).into_dyn());
    let q = x.straight_through(x.value().mapv(f64::round));
    assert_eq!(q.value().as_slice().unwrap(), &[0.0, 2.0, -2.0]);
    let c = x.clamp_min(0.5);
    let g = tape.backward(q.sum() + c.sum());
    assert_eq!(g.wrt(x).as_slice().unwrap(), &[1.0, 2.0, 1.0]);
}

#[test]
fn constants_get_no_gradient() {
    let tape = Tape::new();
    let a = tape.constant(ndarray::arr1(&[1.0, 2.0]).into_dyn());
    let b = tape.leaf(ndarray::arr1(&[3.0, 4.0]).into_dyn());
    let out = (a * b).sum();
    let g = tape.backward(out);
    assert!(g.get(a).is_none());
    assert_eq!(g.wrt(b).as_slice().unwrap(), &[1.0, 2.0]);
}
