use mixcomp_core::extopt::ExtensionAssignment;
use mixcomp_core::matstack::DEFAULT_MAX_DIM;
use mixcomp_core::protocol::{
    extension_protocol, js_compress_sequence, js_protocol, typical_subspace, Sampling, SubspaceTarget,
};
use mixcomp_core::random::{random_density, random_ensemble};
use mixcomp_core::states::DensityMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn retained_mass_grows_with_cap(seed in any::<u64>(), d in 2usize..4, n in 1usize..5) {
        let rho = random_density(&mut ChaCha8Rng::seed_from_u64(seed), d);
        let total = d.pow(n as u32);
        let mut last = 0.0;
        for m in 1..=total {
            let ts = typical_subspace(&rho, n, SubspaceTarget::DimCap(m), DEFAULT_MAX_DIM).unwrap();
            prop_assert!(ts.retained_mass() >= last - 1e-15);
            last = ts.retained_mass();
        }
        prop_assert!((last - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mass_target_is_minimal(seed in any::<u64>(), n in 1usize..7, eps in 0.0f64..0.5) {
        let rho = random_density(&mut ChaCha8Rng::seed_from_u64(seed), 2);
        let ts = typical_subspace(&rho, n, SubspaceTarget::Mass(eps), DEFAULT_MAX_DIM).unwrap();
        prop_assert!(ts.retained_mass() >= 1.0 - eps - 1e-12);
        if ts.dim() > 1 {
            let smaller = typical_subspace(&rho, n, SubspaceTarget::DimCap(ts.dim() - 1), DEFAULT_MAX_DIM).unwrap();
            prop_assert!(smaller.retained_mass() < 1.0 - eps);
        }
    }

    #[test]
    fn relaxing_eps_never_hurts(seed in any::<u64>(), count in 1usize..4, n in 2usize..6) {
        let e = random_ensemble(&mut ChaCha8Rng::seed_from_u64(seed), count, 2);
        let sampling = Sampling::MonteCarlo { samples: 64, seed };
        let mut last = 0.0;
        for eps in [0.6, 0.4, 0.2, 0.1, 0.01] {
            let r = js_protocol(&e, n, SubspaceTarget::Mass(eps), sampling, DEFAULT_MAX_DIM).unwrap();
            prop_assert!(r.avg_fidelity >= last - 1e-9, "eps {}: {} < {}", eps, r.avg_fidelity, last);
            last = r.avg_fidelity;
        }
    }

    #[test]
    fn runs_respect_support_rate(seed in any::<u64>(), count in 1usize..4, n in 1usize..6, eps in 0.0f64..0.3) {
        let e = random_ensemble(&mut ChaCha8Rng::seed_from_u64(seed), count, 2);
        let r = js_protocol(&e, n, SubspaceTarget::Mass(eps), Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
        let support = r.bounds.iter().find(|b| b.name == "support-rate").unwrap();
        prop_assert!(support.applicable && support.satisfied);
        prop_assert!((r.rate - (r.channel_dim as f64).log2() / n as f64).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.avg_fidelity));
    }

    #[test]
    fn trivial_extension_is_inert(seed in any::<u64>(), count in 1usize..3, k in 1usize..4, eps in 0.0f64..0.3) {
        let e = random_ensemble(&mut ChaCha8Rng::seed_from_u64(seed), count, 2);
        let target = SubspaceTarget::Mass(eps);
        let js = js_protocol(&e, k, target, Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
        let a = ExtensionAssignment::trivial(&e, 2, 4);
        let ep = extension_protocol(&e, 1, &a, k, target, Sampling::Exact, DEFAULT_MAX_DIM).unwrap();
        prop_assert!((js.rate - ep.rate).abs() < 1e-9);
        prop_assert!((js.avg_fidelity - ep.avg_fidelity).abs() < 1e-9);
        prop_assert!(ep.bounds.iter().all(|b| b.passed()));
    }

    #[test]
    fn compressed_states_are_states(seed in any::<u64>(), n in 1usize..4, m in 1usize..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_density(&mut r, 2);
        let ts = typical_subspace(&rho, n, SubspaceTarget::DimCap(m), DEFAULT_MAX_DIM).unwrap();
        let seq = random_density(&mut r, 2usize.pow(n as u32));
        let out = js_compress_sequence(&seq, &ts).unwrap();
        prop_assert!(DensityMatrix::new(out.matrix().clone(), vec![out.dim()]).is_ok());
        let p = ts.projector().unwrap();
        let inside = p.matmul(out.matrix()).unwrap().matmul(&p).unwrap();
        prop_assert!(inside.approx_eq(out.matrix(), 1e-10));
    }
}
