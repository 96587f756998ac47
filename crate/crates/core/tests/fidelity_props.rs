use mixcomp_core::fidelity::{canonical_purification, fidelity, lemma_extension, optimal_purification};
use mixcomp_core::matstack::{partial_trace, tensor_product, ComplexMatrix};
use mixcomp_core::random::{random_density, random_density_rank, random_pure, random_unitary};
use mixcomp_core::states::DensityMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetric_and_bounded(seed in any::<u64>(), d in 2usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_density(&mut r, d), random_density(&mut r, d));
        let f = fidelity(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - fidelity(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn pure_state_identity(seed in any::<u64>(), d in 2usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut r, d);
        let psi = random_pure(&mut r, d);
        let want = ComplexMatrix::column(&psi).adjoint().matmul(rho.matrix()).unwrap()
            .matmul(&ComplexMatrix::column(&psi)).unwrap().get(0, 0).re;
        let f = fidelity(&rho, &DensityMatrix::pure(&psi).unwrap()).unwrap();
        prop_assert!((f - want).abs() < 1e-10);
    }

    #[test]
    fn unitary_invariance(seed in any::<u64>(), d in 2usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_density(&mut r, d), random_density(&mut r, d));
        let u = random_unitary(&mut r, d);
        let f = fidelity(&a, &b).unwrap();
        let g = fidelity(&a.conjugate_by(&u).unwrap(), &b.conjugate_by(&u).unwrap()).unwrap();
        prop_assert!((f - g).abs() < 1e-10);
    }

    #[test]
    fn partial_trace_does_not_lower_fidelity(seed in any::<u64>(), d in 2usize..4, da in 2usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_density(&mut r, d * da), random_density(&mut r, d * da));
        let ra = DensityMatrix::from_matrix(partial_trace(a.matrix(), &[d, da], &[0]).unwrap()).unwrap();
        let rb = DensityMatrix::from_matrix(partial_trace(b.matrix(), &[d, da], &[0]).unwrap()).unwrap();
        prop_assert!(fidelity(&ra, &rb).unwrap() - fidelity(&a, &b).unwrap() >= -1e-9);
    }

    #[test]
    fn uhlmann_overlap(seed in any::<u64>(), d in 2usize..4, rank in 1usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density_rank(&mut r, d, rank.min(d));
        let sigma = random_density(&mut r, d);
        let phi_prime = canonical_purification(&sigma).unwrap();
        let phi = optimal_purification(&rho, &phi_prime).unwrap();
        prop_assert!((phi.overlap(&phi_prime) - fidelity(&rho, &sigma).unwrap()).abs() < 1e-8);
        prop_assert!(phi.reduced_leading(1).matrix().approx_eq(rho.matrix(), 1e-9));
    }

    #[test]
    fn lemma_extension_keeps_fidelity(seed in any::<u64>(), d in 2usize..4, da in 1usize..4) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut r, d);
        let ext_prime = random_density(&mut r, d * da);
        let reduced = DensityMatrix::from_matrix(partial_trace(ext_prime.matrix(), &[d, da], &[0]).unwrap()).unwrap();
        let ext = lemma_extension(&rho, &ext_prime, &[d], &[da]).unwrap();
        let back = partial_trace(ext.matrix(), &[d, da], &[0]).unwrap();
        prop_assert!((&back - rho.matrix()).trace_norm() <= 1e-9);
        let lhs = fidelity(&ext, &ext_prime).unwrap();
        prop_assert!((lhs - fidelity(&rho, &reduced).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn classical_quantum_mixtures(seed in any::<u64>(), d in 2usize..4, p in 0.05f64..0.95) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rho: Vec<DensityMatrix> = (0..2).map(|_| random_density(&mut r, d)).collect();
        let sigma: Vec<DensityMatrix> = (0..2).map(|_| random_density(&mut r, d)).collect();
        let probs = [p, 1.0 - p];
        let mix = |states: &[DensityMatrix]| {
            let mut acc = ComplexMatrix::zeros(2 * d, 2 * d);
            for (i, s) in states.iter().enumerate() {
                let mut flag = [0.0; 2];
                flag[i] = probs[i];
                acc = &acc + &tensor_product(&ComplexMatrix::diag(&flag), s.matrix()).unwrap();
            }
            DensityMatrix::from_matrix(acc).unwrap()
        };
        let f = fidelity(&mix(&rho), &mix(&sigma)).unwrap();
        let root_avg: f64 = (0..2).map(|i| probs[i] * fidelity(&rho[i], &sigma[i]).unwrap().sqrt()).sum();
        prop_assert!(f >= root_avg * root_avg - 1e-9);
    }
}
