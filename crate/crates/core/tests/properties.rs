use std::sync::Arc;

use hisq_core::algebra::{compress_r14, random_su3, reconstruct_r14, Complex3x3};
use hisq_core::dslash::{DslashSpec, Strategy as Blocking};
use hisq_core::fields::{random_link_pair, Layout, LinkStorage, NoiseKind, VectorBundle};
use hisq_core::lattice::LatticeGeometry;
use hisq_core::perfmodel::{arithmetic_intensity, asymptotic_intensity};
use hisq_core::real::Precision;
use hisq_core::rng::seeded;
use hisq_core::solver::{blas, cg_solve, CgConfig, FermionOperator};
use proptest::prelude::*;

fn strategy() -> impl proptest::strategy::Strategy<Value = Blocking> {
    prop_oneof![
        (1usize..7).prop_map(|k| Blocking::RegisterBlock { rhs_chunk: k }),
        (1usize..600).prop_map(|t| Blocking::CacheBlock { tile_sites: t }),
        (1usize..7, 1usize..600).prop_map(|(k, t)| Blocking::Combined { rhs_chunk: k, tile_sites: t }),
    ]
}

fn dims() -> impl proptest::strategy::Strategy<Value = [usize; 4]> {
    prop::sample::select(vec![[4, 4, 4, 4], [8, 4, 4, 4], [4, 6, 4, 8], [8, 4, 6, 4]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn r14_roundtrip_any_scale(seed in any::<u64>(), scale in 0.05f64..20.0) {
        let u: Complex3x3<f64> = random_su3(&mut seeded(seed));
        let n = u.scale(scale);
        let back = reconstruct_r14(&compress_r14(&n).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&n) <= 1e-14 * scale.max(1.0));
    }

    #[test]
    fn any_strategy_gives_identical_bits(
        seed in any::<u64>(),
        dims in dims(),
        strat in strategy(),
        split in any::<bool>(),
        n in 1usize..5,
        r14 in any::<bool>(),
    ) {
        let g = LatticeGeometry::new(dims).unwrap();
        let storage = if r14 { LinkStorage::R14 } else { LinkStorage::Full18 };
        let (fat, naik) = random_link_pair::<f32>(&g, storage, seed, 0.4).unwrap();
        let spec = DslashSpec::new(fat, naik).unwrap();
        let mut v = VectorBundle::new(&g, n, Layout::Soa).unwrap();
        v.fill_random_rhs(seed, NoiseKind::Gaussian);
        let mut reference = v.clone();
        spec.apply(&v, &mut reference).unwrap();
        let tuned = spec.with_strategy(strat).with_split_kernels(split);
        let mut w = v.clone();
        tuned.apply(&v, &mut w).unwrap();
        prop_assert!(w.bit_equal(&reference));
    }

    #[test]
    fn dslash_is_anti_hermitian(seed in any::<u64>(), dims in dims()) {
        let g = LatticeGeometry::new(dims).unwrap();
        let (fat, naik) = random_link_pair::<f64>(&g, LinkStorage::Full18, seed, 0.4).unwrap();
        let spec = DslashSpec::new(fat, naik).unwrap();
        let mut v = VectorBundle::new(&g, 2, Layout::Soa).unwrap();
        v.fill_random_rhs(seed ^ 1, NoiseKind::Gaussian);
        let mut w = v.clone();
        spec.apply(&v, &mut w).unwrap();
        let lhs = blas::dot(v.map(), v.rhs(0), w.rhs(1)).unwrap();
        let rhs = -blas::dot(v.map(), w.rhs(0), v.rhs(1)).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-11 * lhs.norm().max(1.0));
    }

    #[test]
    fn intensity_grows_towards_the_limit(n in 1usize..2000) {
        for p in [Precision::F32, Precision::F64] {
            for s in [LinkStorage::Full18, LinkStorage::R14] {
                let (a, b) = (arithmetic_intensity(n, s, p), arithmetic_intensity(n + 1, s, p));
                prop_assert!(a < b && b < asymptotic_intensity(p));
            }
            prop_assert!(arithmetic_intensity(n, LinkStorage::R14, p) > arithmetic_intensity(n, LinkStorage::Full18, p));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn cg_results_follow_the_rhs_order(seed in any::<u64>(), rotate in 1usize..3) {
        let g = LatticeGeometry::new([4, 4, 4, 4]).unwrap();
        let (fat, naik) = random_link_pair::<f64>(&g, LinkStorage::Full18, seed, 0.4).unwrap();
        let op = FermionOperator::new(DslashSpec::new(fat, naik).unwrap(), 0.5).unwrap();
        let mut b = VectorBundle::new(&g, 3, Layout::Soa).unwrap();
        b.fill_random_rhs(seed, NoiseKind::Gaussian);
        let cfg = CgConfig { tol: 1e-8, max_iter: 2000, precision: Precision::F64 };
        let (x, rep) = cg_solve(&op, &b, &cfg).unwrap();
        let (map, mut fields) = b.clone().into_parts();
        fields.rotate_left(rotate);
        let rotated = VectorBundle::from_parts(Arc::clone(&map), fields);
        let (xr, repr) = cg_solve(&op, &rotated, &cfg).unwrap();
        for i in 0..3 {
            let j = (i + rotate) % 3;
            prop_assert_eq!(xr.rhs(i), x.rhs(j));
            prop_assert_eq!(&repr.rhs[i], &rep.rhs[j]);
        }
    }
}
