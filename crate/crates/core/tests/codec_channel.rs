use autograd::{Adam, Tape};
use dsst::channel::{equalize, sample_block_fading, transmit, ChannelKind, ChannelState, CsiTrace};
use dsst::jscc::{decode, encode, ChannelFrame, CodecConfig, JsccDecoder, JsccEncoder};
use dsst::layers::ParamBuilder;
use dsst::rate::{allocate_rate, RateAllocation};
use dsst::tensor::to_tensor;
use dsst::transform::LatentFeatures;
use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn codec() -> CodecConfig {
    CodecConfig {
        blocks: 1,
        d_model: 24,
        heads: 2,
        patch_len: 4,
        cond_width: 4,
        values: vec![2, 4, 8, 12],
        side_info: false,
        ..CodecConfig::default()
    }
}

fn latent(b: usize, seed: u64) -> LatentFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentFeatures {
        values: Array3::from_shape_simple_fn((b, 3, 8), || rng.gen_range(-2.0..2.0)),
    }
}

fn random_frame(rng: &mut ChaCha8Rng, frames: usize, width: usize) -> ChannelFrame {
    let k_bar: Vec<usize> = (0..frames).map(|_| rng.gen_range(1..=width)).collect();
    let s = Array2::from_shape_fn((frames, width), |(b, j)| {
        if j < k_bar[b] {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        } else {
            Complex64::default()
        }
    });
    ChannelFrame::new(s, k_bar).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn encoded_frames_are_masked_and_unit_power(
        bits in prop::collection::vec(0.0f64..40.0, 1..6),
        snr in -5.0f64..25.0,
        seed in 0u64..1000,
    ) {
        let cfg = codec();
        let mut pb = ParamBuilder::new(seed);
        let enc = JsccEncoder::new(&mut pb, "enc", &cfg, 3, 8).unwrap();
        let params = pb.finish();
        let alloc = allocate_rate(&bits, 0.5, &cfg.values).unwrap();
        prop_assert!(alloc.k_bar.iter().all(|k| cfg.values.contains(k)));
        prop_assert!(alloc.check(&cfg.values).is_ok());
        let f = encode(&latent(bits.len(), seed), &alloc, snr, &enc, &params).unwrap();
        prop_assert!((f.mean_power() - 1.0).abs() <= 1e-5);
        for ((b, j), v) in f.symbols.indexed_iter() {
            prop_assert_eq!(f.mask[[b, j]], j < alloc.k_bar[b]);
            if j >= alloc.k_bar[b] {
                prop_assert_eq!(*v, Complex64::default());
            }
        }
    }

    #[test]
    fn channel_keeps_padding_at_zero(frames in 1usize..20, width in 1usize..16, snr in -10.0f64..30.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_frame(&mut rng, frames, width);
        for state in [
            ChannelState::awgn(snr, frames),
            ChannelState::block_fading(snr, frames, 3, seed).unwrap(),
        ] {
            let r = transmit(&f, &state, seed).unwrap();
            let (e, _) = equalize(&r, &state).unwrap();
            for ((b, j), v) in e.symbols.indexed_iter() {
                if j >= f.k_bar[b] {
                    prop_assert_eq!(*v, Complex64::default());
                }
            }
        }
        prop_assert!(ChannelState::awgn(snr, frames).h.iter().all(|h| *h == Complex64::new(1.0, 0.0)));
    }
}

#[test]
fn noiseless_block_fading_is_inverted() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_frame(&mut rng, 500, 32);
    let state = ChannelState::block_fading(f64::INFINITY, 500, 1, 9).unwrap();
    let (e, stats) = equalize(&transmit(&f, &state, 0).unwrap(), &state).unwrap();
    let worst = e
        .symbols
        .iter()
        .zip(f.symbols.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert_eq!(stats.erased_symbols, 0);
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn rayleigh_power_is_unit() {
    let h = sample_block_fading(1_000_000, 1, 77).unwrap();
    let p = h.iter().map(|g| g.norm_sqr()).sum::<f64>() / h.len() as f64;
    assert!((p - 1.0).abs() <= 0.01, "{p}");
}

#[test]
fn traces_replay_from_csv_and_binary() {
    let dir = tempfile::tempdir().unwrap();
    let gains: Vec<Complex64> = (0..5).map(|i| Complex64::new(0.5 + i as f64 * 0.125, -0.25)).collect();
    let mut t = CsiTrace::new(gains.clone()).unwrap();
    t.carrier = "3.5GHz".into();
    t.scenario = "indoor".into();
    let csv = dir.path().join("t.csv");
    let bin = dir.path().join("t.csi");
    t.save_csv(&csv).unwrap();
    t.save_binary(&bin).unwrap();
    assert_eq!(CsiTrace::load(&csv).unwrap(), t);
    assert_eq!(CsiTrace::load(&bin).unwrap().gains, gains);
    let state = ChannelState::from_trace(10.0, &t, 7, 3);
    assert_eq!(state.kind, ChannelKind::Trace);
    let expect: Array1<Complex64> = (0..7).map(|i| gains[(3 + i) % 5]).collect();
    assert_eq!(state.h, expect);

    std::fs::write(&csv, "1.0,0.0\nnan,1.0\n").unwrap();
    assert!(CsiTrace::load(&csv).is_err());
    std::fs::write(&csv, "# carrier=x\n").unwrap();
    assert!(CsiTrace::load(&csv).is_err());
}

#[test]
fn training_the_codec_on_a_noiseless_link_lowers_latent_error() {
    let cfg = codec();
    let mut pb = ParamBuilder::new(5);
    let enc = JsccEncoder::new(&mut pb, "enc", &cfg, 3, 8).unwrap();
    let dec = JsccDecoder::new(&mut pb, "dec", &cfg, 3, 8).unwrap();
    let mut params = pb.finish();
    let y = latent(6, 1);
    let alloc = RateAllocation::uniform(6, 3, &cfg.values).unwrap();
    let eval_mse = |params: &autograd::ParamStore| {
        let f = encode(&y, &alloc, 20.0, &enc, params).unwrap();
        let state = ChannelState::awgn(f64::INFINITY, 6);
        let r = transmit(&f, &state, 0).unwrap();
        let out = decode(&r, &alloc, 20.0, None, &dec, params, 8).unwrap();
        (&out.values - &y.values).mapv(|v| v * v).mean().unwrap()
    };
    let before = eval_mse(&params);
    let mut adam = Adam::new(3e-3);
    for _ in 0..150 {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let target = tape.constant(to_tensor(&y.values));
        let sent = enc.forward(&p, target, &alloc, 20.0).unwrap();
        let y_hat = dec.forward(&p, sent.reals, &alloc, 20.0, None, 8).unwrap();
        let loss = (y_hat - target).square().mean();
        let g = tape.backward(loss);
        let grads = p.gradients(&g);
        adam.step(&mut params, &grads);
    }
    let after = eval_mse(&params);
    assert!(after < before, "{before} -> {after}");
}
