use nalgebra::DVector;
use proptest::prelude::*;
use smmse::sampling::{monte_carlo, BallSampler};
use smmse::{CharacteristicVector, MomentTable, MultiIndex};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn samples_stay_inside_the_ball(
        p in proptest::collection::vec(0.2f64..6.0, 1..=6),
        seed in any::<u64>(),
    ) {
        let cv = CharacteristicVector::new(p).unwrap();
        let mut s = BallSampler::new(cv.clone(), seed);
        for _ in 0..500 {
            let x = s.sample();
            prop_assert!(cv.gauge(x.as_slice()) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn flipped_stream_is_negated(p in proptest::collection::vec(0.3f64..3.0, 1..=5), seed in any::<u64>()) {
        let cv = CharacteristicVector::new(p).unwrap();
        let mut a = BallSampler::new(cv.clone(), seed);
        let mut b = BallSampler::new(cv, seed).flipped();
        for _ in 0..50 {
            prop_assert_eq!(a.sample(), -b.sample());
        }
    }

    #[test]
    fn same_seed_same_stream(p in proptest::collection::vec(0.3f64..3.0, 1..=5), seed in any::<u64>()) {
        let cv = CharacteristicVector::new(p).unwrap();
        let mut a = BallSampler::new(cv.clone(), seed);
        let mut b = BallSampler::new(cv, seed);
        let xs: Vec<DVector<f64>> = (0..50).map(|_| a.sample()).collect();
        let ys: Vec<DVector<f64>> = (0..50).map(|_| b.sample()).collect();
        prop_assert_eq!(xs, ys);
    }
}

#[test]
fn even_moments_match_sample_averages() {
    let cases: [(&[f64], &[u32]); 6] = [
        (&[0.4, 0.4, 0.4], &[2, 0, 0]),
        (&[0.5, 1.5], &[2, 2]),
        (&[2.0, 2.0, 2.0, 2.0], &[4, 0, 0, 0]),
        (&[0.7, 3.0, 1.0], &[0, 2, 2]),
        (&[1.0, 1.0], &[0, 4]),
        (&[0.3, 0.9, 2.5, 1.2, 0.6], &[2, 0, 0, 2, 0]),
    ];
    for (k, (p, alpha)) in cases.iter().enumerate() {
        let cv = CharacteristicVector::new(p.to_vec()).unwrap();
        let closed = MomentTable::new(cv.clone())
            .monomial_moment(&MultiIndex::new(alpha.to_vec()))
            .unwrap();
        let mc = monte_carlo(&cv, k as u64, 1_000_000, |x| {
            Ok(x.iter()
                .zip(alpha.iter())
                .map(|(v, &a)| v.powi(a as i32))
                .product())
        })
        .unwrap();
        assert!(mc.contains(closed, 4.0), "case {k}: {closed} vs {mc:?}");
    }
}

#[test]
fn estimate_is_independent_of_thread_count() {
    let cv = CharacteristicVector::isotropic(0.6, 4).unwrap();
    let f = |x: &DVector<f64>| Ok(x[0] * x[0] + x[3].abs());
    let default = monte_carlo(&cv, 11, 50_001, f).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let single = pool.install(|| monte_carlo(&cv, 11, 50_001, f)).unwrap();
    assert_eq!(default, single);
    assert_eq!(default.samples, 50_001);
}
