use autograd::gradcheck::directional_check;
use autograd::{Adam, Tape, Tensor};
use dsst::channel::ChannelState;
use dsst::checkpoint::Checkpoint;
use dsst::config::TrainConfig;
use dsst::corpus::{frame_batch, AudioClip, SpeechBatch};
use dsst::layers::{Activation, ParamBuilder};
use dsst::model::InferOptions;
use dsst::synth::speech_like;
use dsst::tensor::to_tensor;
use dsst::train::{smooth, Trainer};
use dsst::transform::{analyze, synthesize, AnalysisTransform, SynthesisTransform, TransformConfig};
use ndarray::{Array3, IxDyn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> TransformConfig {
    TransformConfig {
        channels: 4,
        residual_blocks: 1,
        kernel_size: 5,
        activation: Activation::Gelu,
    }
}

fn clips(n: usize) -> Vec<AudioClip> {
    (0..n)
        .map(|i| AudioClip::new(format!("c{i}"), speech_like(0.5, 100 + i as u64)))
        .collect()
}

#[test]
fn analysis_gradient_wrt_input_matches_finite_differences() {
    let mut pb = ParamBuilder::new(1);
    let ga = AnalysisTransform::new(&mut pb, "ga", &small());
    let params = pb.finish();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::from_shape_simple_fn(IxDyn(&[2, 1, 64]), || rng.gen_range(-0.5..0.5));

    let tape = Tape::new();
    let p = params.bind_frozen(&tape);
    let xv = tape.leaf(x.clone());
    let out = ga.forward(&p, xv).unwrap().mean();
    let grad = tape.backward(out).wrt(xv).clone();

    let f = |v: &[Tensor]| {
        let tape = Tape::new();
        let p = params.bind_frozen(&tape);
        ga.forward(&p, tape.constant(v[0].clone())).unwrap().mean().item()
    };
    for _ in 0..5 {
        let dir = Tensor::from_shape_simple_fn(x.raw_dim(), || rng.gen_range(-1.0..1.0));
        let c = directional_check(&f, std::slice::from_ref(&x), std::slice::from_ref(&grad), &[dir], 1e-5);
        assert!(c.rel_error <= 1e-6, "{c:?}");
    }
}

#[test]
fn overfitting_one_batch_lowers_time_mse() {
    let mut pb = ParamBuilder::new(2);
    let ga = AnalysisTransform::new(&mut pb, "ga", &small());
    let gs = SynthesisTransform::new(&mut pb, "gs", &small());
    let mut params = pb.finish();
    let batch = frame_batch(&clips(2), 4, 64, 9).unwrap();
    let mse = |params: &autograd::ParamStore| {
        let y = analyze(&batch, &ga, params).unwrap();
        let x_hat = synthesize(&y, &gs, params).unwrap();
        (&x_hat.frames - &batch.frames).mapv(|v| v * v).mean().unwrap()
    };
    let before = mse(&params);
    let mut adam = Adam::new(3e-3);
    for _ in 0..200 {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let x = tape.constant(to_tensor(&batch.frames));
        let y = ga.forward(&p, x).unwrap();
        let x_hat = gs.forward(&p, y).unwrap();
        let loss = (x_hat - x).square().mean();
        let g = tape.backward(loss);
        adam.step(&mut params, &p.gradients(&g));
    }
    let after = mse(&params);
    assert!(after < 0.5 * before, "{before} -> {after}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn latent_is_four_times_shorter(b in 1usize..4, units in 1usize..12, seed in 0u64..100) {
        let l = 16 * units;
        let mut pb = ParamBuilder::new(seed);
        let ga = AnalysisTransform::new(&mut pb, "ga", &small());
        let gs = SynthesisTransform::new(&mut pb, "gs", &small());
        let params = pb.finish();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = SpeechBatch::from_frames(Array3::from_shape_simple_fn((b, 1, l), || rng.gen_range(-1.0..1.0)));
        let y = analyze(&x, &ga, &params).unwrap();
        prop_assert_eq!(y.values.dim(), (b, 4, l / 4));
        let back = synthesize(&y, &gs, &params).unwrap();
        prop_assert_eq!(back.frames.dim(), (b, 1, l));
    }
}

#[test]
fn reloaded_checkpoint_reproduces_inference_exactly() {
    let mut t = Trainer::new(TrainConfig::tiny()).unwrap();
    let c = clips(3);
    t.run(&c, 3, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    t.checkpoint().save(&path).unwrap();
    let back = Trainer::from_checkpoint(Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.step, 3);

    let batch = frame_batch(&c, 6, t.cfg.model.frame_length, 1).unwrap();
    let opts = InferOptions {
        channel: ChannelState::block_fading(5.0, 6, 2, 3).unwrap(),
        snr_token: None,
        lambda: None,
        eta_y: t.cfg.eta_y,
        seed: 17,
        alloc: None,
    };
    let a = t.model.infer(&t.params, &batch, &opts).unwrap();
    let b = back.model.infer(&back.params, &batch, &opts).unwrap();
    assert_eq!(a.x_hat, b.x_hat);
    assert_eq!(a.alloc, b.alloc);
    assert_eq!(a.bits_y, b.bits_y);
}

#[test]
fn two_hundred_steps_lower_the_smoothed_loss() {
    let cfg = TrainConfig {
        seed: 3,
        ..TrainConfig::tiny()
    };
    let mut t = Trainer::new(cfg).unwrap();
    let recs = t.run(&clips(10), 200, None).unwrap();
    let loss: Vec<f64> = recs.iter().map(|r| r.loss.total).collect();
    let s = smooth(&loss, 20);
    assert!(loss.iter().all(|v| v.is_finite()));
    assert!(s[199] < s[0], "smoothed loss {} -> {}", s[0], s[199]);
}
