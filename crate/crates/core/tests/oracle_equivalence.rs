use hisq_core::dslash::DslashSpec;
use hisq_core::fields::{random_link_pair, Layout, LinkField, LinkRole, LinkStorage, NoiseKind, VectorBundle};
use hisq_core::lattice::{LatticeGeometry, TemporalBc};
use hisq_core::oracle::{
    build_dense_dslash, dense_solve, dense_trace_chain, finite_difference_derivative, min_eigenvalue_exceeds,
    normal_matrix, DenseMatrix, C64,
};
use hisq_core::real::Precision;
use hisq_core::solver::{cg_solve, CgConfig, FermionOperator};
use hisq_core::traces::{estimate_chain, mu_weighted_dslash, ChainSpec, TraceConfig};

fn g4() -> LatticeGeometry {
    LatticeGeometry::new([4, 4, 4, 4]).unwrap()
}

fn spec(g: &LatticeGeometry, storage: LinkStorage, seed: u64) -> DslashSpec<f64> {
    let (fat, naik) = random_link_pair::<f64>(g, storage, seed, 0.4).unwrap();
    DslashSpec::new(fat, naik).unwrap()
}

fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn dense_of<F>(g: &LatticeGeometry, apply: F) -> DenseMatrix
where
    F: Fn(&VectorBundle<f64>, &mut VectorBundle<f64>),
{
    let n = 3 * g.volume();
    let mut cols = Vec::with_capacity(n);
    let mut e = VectorBundle::new(g, 1, Layout::Soa).unwrap();
    let mut out = e.clone();
    for j in 0..n {
        let mut unit = vec![C64::new(0.0, 0.0); n];
        unit[j] = C64::new(1.0, 0.0);
        e.set_site_major(0, &unit);
        apply(&e, &mut out);
        cols.push(out.to_site_major(0));
    }
    DenseMatrix::from_fn(n, |i, j| cols[j][i])
}

#[test]
fn kernel_matches_dense_matrix_on_random_vectors() {
    for (dims, storage, bc) in [
        ([4, 4, 4, 4], LinkStorage::Full18, TemporalBc::Antiperiodic),
        ([4, 4, 4, 4], LinkStorage::R14, TemporalBc::Antiperiodic),
        ([8, 4, 4, 4], LinkStorage::Full18, TemporalBc::Periodic),
    ] {
        let g = LatticeGeometry::with_bc(dims, bc).unwrap();
        let s = spec(&g, storage, 1);
        let dense = build_dense_dslash(&s, 0.0).unwrap();
        let mut v = VectorBundle::new(&g, 100, Layout::Soa).unwrap();
        v.fill_random_rhs(2, NoiseKind::Gaussian);
        let mut w = v.clone();
        s.apply(&v, &mut w).unwrap();
        for i in 0..100 {
            let expect = dense.matrix.mul_vec(&v.to_site_major(i)).unwrap();
            let err = rel_diff(&w.to_site_major(i), &expect);
            assert!(err <= 1e-12, "{dims:?} {storage} rhs {i}: {err}");
        }
    }
}

#[test]
fn dense_dslash_is_anti_hermitian() {
    let s = spec(&g4(), LinkStorage::Full18, 3);
    let d = build_dense_dslash(&s, 0.0).unwrap().matrix;
    assert!(d.add(&d.dagger()).unwrap().max_abs() <= 1e-12);
    assert!(d.max_abs() > 0.1);
}

#[test]
fn daggered_apply_is_the_adjoint() {
    let g = g4();
    let s = spec(&g, LinkStorage::Full18, 4);
    let d = dense_of(&g, |v, w| {
        s.apply(v, w).unwrap();
    });
    let dd = dense_of(&g, |v, w| {
        s.apply_daggered(v, w).unwrap();
    });
    assert!(dd.sub(&d.dagger()).unwrap().max_abs() <= 1e-12);
}

#[test]
fn chemical_potential_matches_dense() {
    let g = g4();
    let s = spec(&g, LinkStorage::Full18, 5);
    let mu = 0.2;
    let dense = build_dense_dslash(&s, mu).unwrap().matrix;
    let mut v = VectorBundle::new(&g, 3, Layout::Soa).unwrap();
    v.fill_random_rhs(6, NoiseKind::Gaussian);
    let mut w = v.clone();
    mu_weighted_dslash(&s, mu, 0, &v, &mut w).unwrap();
    for i in 0..3 {
        assert!(rel_diff(&w.to_site_major(i), &dense.mul_vec(&v.to_site_major(i)).unwrap()) <= 1e-12);
    }
}

#[test]
fn derivative_insertions_match_finite_differences() {
    let g = g4();
    let (fat, _) = random_link_pair::<f64>(&g, LinkStorage::Full18, 7, 0.4).unwrap();
    let naik = LinkField::new(&g, LinkRole::Naik, LinkStorage::Full18).unwrap();
    let zero_naik = DslashSpec::new(fat, naik).unwrap();
    let full = spec(&g, LinkStorage::Full18, 8);
    for (s, k, tol) in [(&zero_naik, 1, 1e-6), (&full, 1, 1e-6), (&full, 2, 1e-4)] {
        let fd = finite_difference_derivative(s, 0.0, k).unwrap();
        let kernel = dense_of(&g, |v, w| {
            mu_weighted_dslash(s, 0.0, k, v, w).unwrap();
        });
        let diff = kernel.sub(&fd).unwrap().max_abs();
        assert!(diff <= tol, "k={k}: {diff}");
    }
}

#[test]
fn normal_operator_matches_dense_and_is_bounded_below() {
    let g = g4();
    let m = 0.1;
    let s = spec(&g, LinkStorage::Full18, 9);
    let op = FermionOperator::new(s.clone(), m).unwrap();
    let a = dense_of(&g, |v, w| {
        op.apply_normal(v, w).unwrap();
    });
    let d = build_dense_dslash(&s, 0.0).unwrap();
    let expect = DenseMatrix::scaled_identity(a.dim(), C64::new(m * m, 0.0))
        .sub(&d.matrix.mul(&d.matrix).unwrap())
        .unwrap();
    assert!(a.sub(&expect).unwrap().max_abs() <= 1e-12);
    assert!(a.sub(&normal_matrix(&d, m)).unwrap().max_abs() <= 1e-12);
    assert!(min_eigenvalue_exceeds(&expect, 0.999 * m * m));
}

#[test]
fn cg_matches_dense_solve() {
    let g = g4();
    let m = 0.1;
    let s = spec(&g, LinkStorage::R14, 10);
    let op = FermionOperator::new(s.clone(), m).unwrap();
    let mut b = VectorBundle::new(&g, 4, Layout::Soa).unwrap();
    b.fill_random_rhs(11, NoiseKind::Gaussian);
    let cfg = CgConfig { tol: 1e-8, max_iter: 10_000, precision: Precision::F64 };
    let (x, report) = cg_solve(&op, &b, &cfg).unwrap();
    assert!(report.all_converged());
    let a = normal_matrix(&build_dense_dslash(&s, 0.0).unwrap(), m);
    for i in 0..4 {
        let (xd, cond) = dense_solve(&a, &b.to_site_major(i)).unwrap();
        assert!(cond.is_finite());
        assert!(rel_diff(&x.to_site_major(i), &xd) <= 1e-6);
    }
}

#[test]
fn stochastic_traces_agree_with_dense_traces() {
    let g = g4();
    let m = 0.5;
    let s = spec(&g, LinkStorage::Full18, 12);
    let op = FermionOperator::new(s.clone(), m).unwrap();
    let cg = CgConfig { tol: 1e-8, max_iter: 10_000, precision: Precision::F64 };
    for (chain, n) in [("inv", 200), ("d1,inv", 200), ("d2,inv", 100)] {
        let cfg = TraceConfig { n_vectors: n, batch: 8, noise: NoiseKind::Z2, seed: 13, keep_samples: false };
        let chain: ChainSpec = chain.parse().unwrap();
        let est = estimate_chain(&chain, &op, &cfg, &cg).unwrap();
        let exact = dense_trace_chain(&chain, &s, m).unwrap();
        let err = (est.mean - exact).norm();
        assert!(err <= 3.0 * est.stderr, "{chain}: {} vs {exact} (stderr {})", est.mean, est.stderr);
        if chain.to_string() != "d1,inv" {
            assert!(est.mean.im.abs() <= 3.0 * est.stderr, "{chain}: {}", est.mean);
        }
    }
}
