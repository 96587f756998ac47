use mixcomp_core::random::{random_density, random_density_rank, random_ensemble};
use mixcomp_core::states::{
    ensemble_density, holevo_quantity, product_ensemble, support_dim, von_neumann_entropy, SUPPORT_TOL,
};
use mixcomp_core::matstack::DEFAULT_MAX_DIM;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_is_additive(seed in any::<u64>(), d1 in 1usize..5, d2 in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut r, d1);
        let sigma = random_density(&mut r, d2);
        let joint = rho.tensor(&sigma, DEFAULT_MAX_DIM).unwrap();
        let lhs = von_neumann_entropy(&joint);
        let rhs = von_neumann_entropy(&rho) + von_neumann_entropy(&sigma);
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn holevo_lies_between_zero_and_entropy(seed in any::<u64>(), count in 1usize..5, d in 2usize..5) {
        let e = random_ensemble(&mut ChaCha8Rng::seed_from_u64(seed), count, d);
        let chi = holevo_quantity(&e);
        prop_assert!(chi >= -1e-9);
        prop_assert!(chi <= von_neumann_entropy(&ensemble_density(&e)) + 1e-9);
    }

    #[test]
    fn support_dominates_entropy(seed in any::<u64>(), d in 1usize..7, rank_frac in 0.0f64..1.0) {
        let rank = 1 + ((d - 1) as f64 * rank_frac).round() as usize;
        let rho = random_density_rank(&mut ChaCha8Rng::seed_from_u64(seed), d, rank);
        let s = support_dim(&rho, SUPPORT_TOL);
        prop_assert!((s as f64).log2() >= von_neumann_entropy(&rho) - 1e-6);
        prop_assert!(s <= rank);
    }

    #[test]
    fn product_ensemble_is_normalised(seed in any::<u64>(), count in 1usize..4, n in 1usize..4) {
        let e = random_ensemble(&mut ChaCha8Rng::seed_from_u64(seed), count, 2);
        let p = product_ensemble(&e, n, DEFAULT_MAX_DIM).unwrap();
        prop_assert_eq!(p.len(), count.pow(n as u32));
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let s = von_neumann_entropy(&ensemble_density(&p));
        prop_assert!((s - n as f64 * von_neumann_entropy(&ensemble_density(&e))).abs() < 1e-8);
    }
}
