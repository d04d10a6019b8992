use dsst::entropy::{
    entropy_y, hyper_synthesize, likelihood_y, prior_bits, relax_or_round, EntropyConfig, EntropyModel,
    QuantMode, SIGMA_MIN,
};
use dsst::layers::ParamBuilder;
use dsst::model::SIDE_TAIL_MASS;
use dsst::rangecoder::CdfTable;
use dsst::rate::RateAllocation;
use dsst::side::{account_bandwidth, capacity_bits_per_symbol, decode_side, encode_side};
use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dyadic(v: i32) -> f64 {
    v as f64 / 256.0
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn likelihood_is_translation_invariant(
        y in prop::collection::vec(-4000i32..4000, 12),
        mu in prop::collection::vec(-4000i32..4000, 12),
        log_sigma in prop::collection::vec(-6.0f64..4.0, 12),
        c in -1000i32..1000,
    ) {
        let y = Array3::from_shape_fn((2, 2, 3), |(a, b, t)| dyadic(y[a * 6 + b * 3 + t]));
        let mu = Array3::from_shape_fn((2, 2, 3), |(a, b, t)| dyadic(mu[a * 6 + b * 3 + t]));
        let sigma = Array3::from_shape_fn((2, 2, 3), |(a, b, t)| log_sigma[a * 6 + b * 3 + t].exp());
        let p = likelihood_y(&y, &mu, &sigma).unwrap();
        let shift = c as f64;
        let q = likelihood_y(&(&y + shift), &(&mu + shift), &sigma).unwrap();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn frame_bits_are_sums_of_element_bits(
        vals in prop::collection::vec(-30.0f64..30.0, 3 * 4 * 5),
        sig in prop::collection::vec(0.01f64..20.0, 3 * 4 * 5),
    ) {
        let y = Array3::from_shape_vec((3, 4, 5), vals).unwrap();
        let sigma = Array3::from_shape_vec((3, 4, 5), sig).unwrap();
        let e = entropy_y(&y, &Array3::zeros((3, 4, 5)), &sigma).unwrap();
        for b in 0..3 {
            let s: f64 = e.bits_per_element.index_axis(ndarray::Axis(0), b).sum();
            prop_assert!((s - e.bits_per_frame[b]).abs() <= 1e-6 * s.abs().max(1.0));
        }
        prop_assert!(e.bits_per_element.iter().all(|&b| b >= 0.0));
    }

    #[test]
    fn side_roundtrip_and_length_bounds(
        scale in 0.2f64..30.0,
        b in 1usize..4,
        t in 1usize..12,
        seed in any::<u64>(),
    ) {
        let tables = laplace_tables(&[scale, 1.0, 0.3], 40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Array3::from_shape_fn((b, 3, t), |_| {
            if rng.gen_bool(0.05) { rng.gen_range(-100_000.0f64..100_000.0).round() }
            else { (rng.gen_range(-1.0f64..1.0) * scale).round() }
        });
        let bs = encode_side(&z, &tables).unwrap();
        prop_assert_eq!(decode_side(&bs.to_container(), &tables, [b, 3, t]).unwrap(), z);
        prop_assert!(bs.bit_length <= 8 * bs.bytes.len() as u64);
        prop_assert!(8 * (bs.bytes.len() as u64) < bs.bit_length + 8);
    }

    #[test]
    fn total_is_primary_plus_side(
        idx in prop::collection::vec(0usize..4, 1..50),
        bits in 0.0f64..1e5,
        snr in -10.0f64..40.0,
    ) {
        let alloc = RateAllocation::from_indices(idx, &[8, 16, 32, 64]).unwrap();
        let r = account_bandwidth(&alloc, bits, snr).unwrap();
        prop_assert_eq!(r.k_total, r.k_y + r.k_z);
        prop_assert_eq!(r.k_y, alloc.k_bar.iter().sum::<usize>());
        prop_assert_eq!(r.k_z, (bits / capacity_bits_per_symbol(snr)).ceil() as usize);
    }
}

fn laplace_tables(scales: &[f64], half: i32) -> Vec<CdfTable> {
    scales
        .iter()
        .map(|&s| {
            let w: Vec<f64> = (-half..=half).map(|k| (-(k as f64).abs() / s).exp()).collect();
            let tot: f64 = w.iter().sum();
            CdfTable::from_pmf(-half, &w.iter().map(|v| v / tot * (1.0 - 1e-6)).collect::<Vec<_>>()).unwrap()
        })
        .collect()
}

#[test]
fn extreme_deviations_stay_finite() {
    let n = 7;
    let y = Array3::from_shape_fn((1, 1, n), |(_, _, i)| [1e6, -1e6, 1e300, 3.0, 0.0, 1e-300, -7e5][i]);
    let mu = Array3::zeros((1, 1, n));
    let sigma = Array3::from_shape_fn((1, 1, n), |(_, _, i)| [1.0, 1.0, 1.0, 1e-12, 1e-300, 0.0, 0.7][i]);
    let e = entropy_y(&y, &mu, &sigma).unwrap();
    assert!(e.bits_per_element.iter().all(|b| b.is_finite() && *b >= 0.0), "{e:?}");
}

#[test]
fn relaxation_noise_is_centred_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = Array3::from_shape_fn((10, 10, 10_000), |(a, b, c)| (a * 31 + b * 7 + c) as f64 * 0.37);
    let r = relax_or_round(&z, QuantMode::Train, &mut rng);
    let d = &r - &z;
    assert!(d.iter().all(|&v| (-0.5..0.5).contains(&v)));
    assert!(d.mean().unwrap().abs() <= 3e-3);
    let q = relax_or_round(&z, QuantMode::Eval, &mut rng);
    assert!(q.iter().zip(&z).all(|(a, b)| *a == b.round()));
}

#[test]
fn hyper_synthesis_clamps_sigma() {
    let cfg = EntropyConfig {
        hyper_channels: 4,
        ..EntropyConfig::default()
    };
    let mut pb = ParamBuilder::new(4);
    let em = EntropyModel::new(&mut pb, 8, &cfg);
    let mut params = pb.finish();
    // Push the scale head far negative so raw sigma underflows.
    for v in params.values_mut() {
        v.mapv_inplace(|x| x * 50.0 - 3.0);
    }
    let z = Array3::from_shape_fn((2, 4, 4), |(a, b, c)| (a + b * c) as f64 - 5.0);
    let g = hyper_synthesize(&z, &em.hyper_synthesis, &params).unwrap();
    assert!(g.sigma.iter().all(|&s| s >= SIGMA_MIN && s.is_finite()));
    assert_eq!(g.mu.dim(), (2, 8, 16));
}

#[test]
fn prior_bits_predict_the_coded_length() {
    let cfg = EntropyConfig {
        hyper_channels: 4,
        ..EntropyConfig::default()
    };
    let mut pb = ParamBuilder::new(9);
    let em = EntropyModel::new(&mut pb, 8, &cfg);
    let params = pb.finish();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let normal = rand_distr::Normal::new(0.0, 6.0).unwrap();
    let z = Array3::from_shape_fn((25, 4, 100), |_| rng.sample::<f64, _>(normal).round());
    let estimate = prior_bits(&z, &em.prior, &params).unwrap().total();
    let tables = em.prior.cdf_tables(&params, SIDE_TAIL_MASS).unwrap();
    let coded = encode_side(&z, &tables).unwrap().bit_length as f64;
    assert!((coded / estimate - 1.0).abs() <= 0.02, "coded {coded} vs estimate {estimate}");
}

#[test]
fn zeros_under_a_peaked_table_are_nearly_free() {
    let mut pmf = vec![1e-4; 9];
    pmf[4] = 1.0 - 8e-4 - 1e-6;
    let tables = vec![CdfTable::from_pmf(-4, &pmf).unwrap(); 2];
    let z = Array3::zeros((4, 2, 256));
    let bs = encode_side(&z, &tables).unwrap();
    assert!((bs.bit_length as f64) / (z.len() as f64) < 0.1, "{}", bs.bit_length);
}

#[test]
fn ten_db_capacity_arithmetic() {
    let alloc = RateAllocation::from_indices(vec![0], &[8]).unwrap();
    let r = account_bandwidth(&alloc, 1000.0, 10.0).unwrap();
    assert!((r.capacity_bits_per_symbol - 11f64.log2()).abs() < 1e-12);
    assert_eq!(r.k_z, 290);
    assert_eq!(r.k_total, 298);
}
