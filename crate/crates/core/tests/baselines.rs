mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smmse::baselines::{
    feasibility_tolerance, l1_minimize, l1_vertex_enumeration, BasisPursuitConfig,
};
use smmse::sampling::BallSampler;
use smmse::CharacteristicVector;

use common::{l1_oracle, random_sensing_matrix};

fn l1(x: &DVector<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn basis_pursuit_is_feasible_and_optimal(
        seed in any::<u64>(),
        p in 0.3f64..2.0,
        n in 3usize..=6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..n);
        let a = random_sensing_matrix(&mut rng, m, n);
        let x_true = BallSampler::new(CharacteristicVector::isotropic(p, n).unwrap(), seed).sample();
        let y = a.measure(&x_true);
        let sol = l1_minimize(&a, &y, &BasisPursuitConfig::default()).unwrap();
        prop_assert!((a.matrix() * &sol.x - &y).norm() <= feasibility_tolerance(&y));
        prop_assert!(l1(&sol.x) <= l1(&x_true) + 1e-6);
        let best = l1_oracle(a.matrix(), &y);
        prop_assert!((l1(&sol.x) - best).abs() <= 1e-6 * best.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn vertex_enumeration_agrees_with_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sensing_matrix(&mut rng, 2, 5);
        let y = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let x = l1_vertex_enumeration(&a, &y).unwrap();
        let best = l1_oracle(a.matrix(), &y);
        prop_assert!((l1(&x) - best).abs() <= 1e-9 * best);
    }
}
