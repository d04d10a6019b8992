use autograd::{Adam, ParamStore, Tape, Tensor};
use ndarray::IxDyn;
use proptest::prelude::*;

fn store(values: &[f64]) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("w", Tensor::from_shape_vec(IxDyn(&[values.len()]), values.to_vec()).unwrap());
    s
}

#[test]
fn adam_first_step_moves_each_weight_by_lr() {
    // With bias correction the first update is lr * g / (|g| + eps).
    let mut s = store(&[1.0, -2.0, 0.5]);
    let g = Tensor::from_shape_vec(IxDyn(&[3]), vec![4.0, -0.01, 1e-3]).unwrap();
    let mut adam = Adam::new(0.1);
    adam.step(&mut s, &[g]);
    let w = s.values()[0].as_slice().unwrap().to_vec();
    assert!((w[0] - 0.9).abs() < 1e-8);
    assert!((w[1] + 1.9).abs() < 1e-6);
    assert!((w[2] - 0.4).abs() < 1e-4);
    assert_eq!(adam.steps_taken(), 1);
}

#[test]
fn adam_minimises_a_quadratic() {
    let target = [3.0, -1.0, 0.25, 7.0];
    let mut s = store(&[0.0; 4]);
    let t = Tensor::from_shape_vec(IxDyn(&[4]), target.to_vec()).unwrap();
    let mut adam = Adam::new(0.05);
    for _ in 0..2000 {
        let tape = Tape::new();
        let p = s.bind(&tape);
        let w = p.get(s.id_of("w").unwrap());
        let loss = (w - tape.constant(t.clone())).square().sum();
        let g = tape.backward(loss);
        adam.step(&mut s, &p.gradients(&g));
    }
    for (a, b) in s.values()[0].iter().zip(&target) {
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn restored_adam_continues_identically() {
    let grads = |k: usize| vec![Tensor::from_shape_vec(IxDyn(&[2]), vec![k as f64 - 2.5, 0.3 * k as f64]).unwrap()];
    let mut a = Adam::new(0.01);
    let mut sa = store(&[1.0, 1.0]);
    for k in 0..3 {
        a.step(&mut sa, &grads(k));
    }
    let (m, v) = a.moments();
    let mut b = Adam::new(0.01);
    b.restore(a.steps_taken(), m.to_vec(), v.to_vec());
    let mut sb = sa.clone();
    for k in 3..6 {
        a.step(&mut sa, &grads(k));
        b.step(&mut sb, &grads(k));
    }
    assert_eq!(sa.values(), sb.values());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sum_of_squares_gradient_is_twice_the_input(v in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_shape_vec(IxDyn(&[v.len()]), v.clone()).unwrap());
        let g = tape.backward(x.square().sum());
        for (gi, vi) in g.wrt(x).iter().zip(&v) {
            prop_assert_eq!(*gi, 2.0 * vi);
        }
    }

    #[test]
    fn box_masses_are_probabilities(lo in -50.0f64..50.0, width in 0.0f64..20.0) {
        let tape = Tape::new();
        let c = |v: f64| tape.constant(Tensor::from_elem(IxDyn(&[1]), v));
        for m in [c(lo + width).normal_box_mass(c(lo)), c(lo + width).logistic_box_mass(c(lo))] {
            let m = m.item();
            prop_assert!((0.0..=1.0).contains(&m), "{}", m);
        }
    }

    #[test]
    fn mean_is_sum_over_count(v in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_shape_vec(IxDyn(&[v.len()]), v.clone()).unwrap());
        let m = x.mean().item();
        let s = x.sum().item();
        prop_assert!((m * v.len() as f64 - s).abs() <= 1e-9 * s.abs().max(1.0));
    }
}
