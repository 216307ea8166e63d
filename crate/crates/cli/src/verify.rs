//! Oracle suite on a small lattice in f64.

use std::io::Write;

use anyhow::Context;
use hisq_core::algebra::{compress_r14, random_su3, reconstruct_r14, Complex3x3};
use hisq_core::dslash::{candidate_grid, Autotuner, DslashSpec, TransferStats};
use hisq_core::fields::{Layout, LinkStorage, NoiseKind, VectorBundle};
use hisq_core::lattice::LatticeGeometry;
use hisq_core::oracle::{
    build_dense_dslash, dense_solve, dense_trace_chain, normal_matrix, DenseMatrix, MAX_ORACLE_VOLUME, C64,
};
use hisq_core::perfmodel::{round2, REFERENCE_FULL, REFERENCE_R14, REFERENCE_RHS};
use hisq_core::real::{Precision, Real};
use hisq_core::rng::seeded;
use hisq_core::solver::{cg_solve, CgConfig, FermionOperator};
use hisq_core::traces::{estimate_chain, ChainSpec, TraceConfig};
use rand::Rng;

use crate::args::{GlobalOpts, VerifyOpts};
use crate::common::{self, Failure};

const DEFAULT_LATTICE: [usize; 4] = [4, 4, 4, 4];
const DSLASH_TOL: f64 = 1e-12;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

pub fn run(g: &GlobalOpts, opts: &VerifyOpts) -> Result<(), Failure> {
    let geom = common::geometry(g, DEFAULT_LATTICE)?;
    if geom.volume() > MAX_ORACLE_VOLUME {
        return common::usage(format!("verify needs at most {MAX_ORACLE_VOLUME} sites, {geom} has {}", geom.volume()));
    }
    if opts.nvec == 0 {
        return common::usage("--nvec must be at least 1");
    }
    let spec = common::build_spec::<f64>(g, &geom, LinkStorage::Full18)?;
    let spec = &spec;
    let seed = g.seed;
    let suite: Vec<(&'static str, Box<dyn Fn() -> anyhow::Result<Check> + '_>)> = vec![
        ("dslash-vs-dense", Box::new(|| dslash_equivalence(spec, seed))),
        ("dense-anti-hermitian", Box::new(|| dense_anti_hermiticity(spec))),
        ("kernel-anti-hermitian", Box::new(|| kernel_anti_hermiticity(spec))),
        ("daggered-vs-dense-adjoint", Box::new(|| daggered_adjoint(spec, seed))),
        ("normal-operator-vs-dense", Box::new(|| normal_operator(spec, seed))),
        ("cg-vs-dense", Box::new(|| cg_vs_dense(spec, seed))),
        ("zero-link-trace", Box::new(|| zero_link_trace(&geom))),
        ("stochastic-trace", Box::new(|| stochastic_trace(spec, seed, opts.nvec))),
        ("r14-roundtrip-f32", Box::new(|| Ok(r14_roundtrip::<f32>(seed, 1e-6)))),
        ("r14-roundtrip-f64", Box::new(|| Ok(r14_roundtrip::<f64>(seed, 1e-14)))),
        ("reference-intensity", Box::new(|| Ok(reference_intensity(g)))),
        ("transfer-accounting", Box::new(transfer_accounting)),
        ("tuning-equivalence", Box::new(|| tuning_equivalence(g, &geom))),
    ];
    // An error inside a check is a failed check, not an aborted suite.
    let checks: Vec<Check> = suite
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, format!("error: {e:#}"))))
        .collect();
    let mut out = common::output(g)?;
    let mut failed = 0;
    for c in &checks {
        failed += usize::from(!c.pass);
        let tag = if c.pass { "PASS" } else { "FAIL" };
        common::write_line(&mut out, &format!("{tag} {}: {}", c.name, c.detail))?;
    }
    out.flush().context("flushing output")?;
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

fn random_bundle(geom: &LatticeGeometry, n: usize, seed: u64) -> anyhow::Result<VectorBundle<f64>> {
    let mut v = VectorBundle::new(geom, n, Layout::Soa)?;
    v.fill_random_rhs(seed, NoiseKind::Gaussian);
    Ok(v)
}

fn dslash_equivalence(spec: &DslashSpec<f64>, seed: u64) -> anyhow::Result<Check> {
    let dense = build_dense_dslash(spec, 0.0)?;
    let v = random_bundle(spec.geometry(), 100, seed)?;
    let mut w = v.clone();
    spec.apply(&v, &mut w)?;
    let mut worst = 0.0f64;
    for i in 0..v.n_rhs() {
        let expect = dense.matrix.mul_vec(&v.to_site_major(i))?;
        worst = worst.max(rel_err(&w.to_site_major(i), &expect));
    }
    Ok(check("dslash-vs-dense", worst <= DSLASH_TOL, format!("max relative error {worst:.2e} over 100 vectors")))
}

fn dense_anti_hermiticity(spec: &DslashSpec<f64>) -> anyhow::Result<Check> {
    let d = build_dense_dslash(spec, 0.0)?.matrix;
    let dev = d.add(&d.dagger())?.max_abs();
    Ok(check("dense-anti-hermitian", dev <= DSLASH_TOL, format!("max |D + D†| = {dev:.2e}")))
}

/// The kernel's own matrix, one unit vector per column.
fn kernel_matrix(spec: &DslashSpec<f64>) -> anyhow::Result<DenseMatrix> {
    let geom = spec.geometry();
    let dim = 3 * geom.volume();
    let mut m = DenseMatrix::zeros(dim);
    const BLOCK: usize = 64;
    let mut col = 0;
    while col < dim {
        let n = BLOCK.min(dim - col);
        let mut e = VectorBundle::<f64>::new(geom, n, Layout::Soa)?;
        for i in 0..n {
            let mut unit = vec![C64::new(0.0, 0.0); dim];
            unit[col + i] = C64::new(1.0, 0.0);
            e.set_site_major(i, &unit);
        }
        let mut w = e.clone();
        spec.apply(&e, &mut w)?;
        for i in 0..n {
            for (row, x) in w.to_site_major(i).into_iter().enumerate() {
                m.set(row, col + i, x);
            }
        }
        col += n;
    }
    Ok(m)
}

fn kernel_anti_hermiticity(spec: &DslashSpec<f64>) -> anyhow::Result<Check> {
    let k = kernel_matrix(spec)?;
    let dev = k.add(&k.dagger())?.max_abs();
    Ok(check("kernel-anti-hermitian", dev <= DSLASH_TOL, format!("max |D + D†| = {dev:.2e}")))
}

fn daggered_adjoint(spec: &DslashSpec<f64>, seed: u64) -> anyhow::Result<Check> {
    let dagger = build_dense_dslash(spec, 0.0)?.matrix.dagger();
    let v = random_bundle(spec.geometry(), 8, seed ^ 0x5a)?;
    let mut w = v.clone();
    spec.apply_daggered(&v, &mut w)?;
    let mut worst = 0.0f64;
    for i in 0..v.n_rhs() {
        worst = worst.max(rel_err(&w.to_site_major(i), &dagger.mul_vec(&v.to_site_major(i))?));
    }
    Ok(check("daggered-vs-dense-adjoint", worst <= DSLASH_TOL, format!("max relative error {worst:.2e}")))
}

fn normal_operator(spec: &DslashSpec<f64>, seed: u64) -> anyhow::Result<Check> {
    let mass = 0.1;
    let dense = normal_matrix(&build_dense_dslash(spec, 0.0)?, mass);
    let op = FermionOperator::new(spec.clone(), mass)?;
    let v = random_bundle(spec.geometry(), 4, seed ^ 0xa5)?;
    let mut w = v.clone();
    op.apply_normal(&v, &mut w)?;
    let mut worst = 0.0f64;
    for i in 0..v.n_rhs() {
        worst = worst.max(rel_err(&w.to_site_major(i), &dense.mul_vec(&v.to_site_major(i))?));
    }
    Ok(check("normal-operator-vs-dense", worst <= DSLASH_TOL, format!("max relative error {worst:.2e}")))
}

fn cg_vs_dense(spec: &DslashSpec<f64>, seed: u64) -> anyhow::Result<Check> {
    let mass = 0.1;
    let tol = 1e-10;
    let dense = normal_matrix(&build_dense_dslash(spec, 0.0)?, mass);
    let op = FermionOperator::new(spec.clone(), mass)?;
    let cfg = CgConfig { tol, max_iter: 10_000, precision: Precision::F64 };
    let b = random_bundle(spec.geometry(), 4, seed ^ 0xc6)?;
    let (x, report) = cg_solve(&op, &b, &cfg)?;
    let mut worst = 0.0f64;
    let mut bitwise = true;
    for i in 0..b.n_rhs() {
        let (exact, _) = dense_solve(&dense, &b.to_site_major(i))?;
        worst = worst.max(rel_err(&x.to_site_major(i), &exact));
        let single = VectorBundle::from_parts(b.map().clone(), vec![b.rhs(i).to_vec()]);
        let (xs, _) = cg_solve(&op, &single, &cfg)?;
        bitwise &= xs.rhs(0).iter().zip(x.rhs(i)).all(|(a, c)| a.to_bits() == c.to_bits());
    }
    let true_res = report.rhs.iter().map(|r| r.true_residual).fold(0.0, f64::max);
    let pass = report.all_converged() && worst <= 1e-6 && true_res <= 2.0 * tol && bitwise;
    Ok(check(
        "cg-vs-dense",
        pass,
        format!("max relative error {worst:.2e}, true residual {true_res:.2e}, bundled==single {bitwise}"),
    ))
}

fn zero_link_trace(geom: &LatticeGeometry) -> anyhow::Result<Check> {
    let spec = DslashSpec::<f64>::new(
        hisq_core::fields::LinkField::new(geom, hisq_core::fields::LinkRole::Smeared, LinkStorage::Full18)?,
        hisq_core::fields::LinkField::new(geom, hisq_core::fields::LinkRole::Naik, LinkStorage::Full18)?,
    )?;
    let mass = 2.0;
    let op = FermionOperator::new(spec, mass)?;
    let cfg = TraceConfig { n_vectors: 4, batch: 4, noise: NoiseKind::Z2, seed: 1, keep_samples: true };
    let est = estimate_chain(&ChainSpec::parse("inv", 0.0)?, &op, &cfg, &CgConfig::for_precision(Precision::F64))?;
    let expect = 3.0 * geom.volume() as f64 / mass;
    let exact = est.samples.iter().flatten().all(|s| s.re == expect && s.im == 0.0) && est.stderr == 0.0;
    Ok(check("zero-link-trace", exact, format!("mean {:?} ± {} (expected {expect:?} ± 0)", est.mean.re, est.stderr)))
}

fn stochastic_trace(spec: &DslashSpec<f64>, seed: u64, nvec: usize) -> anyhow::Result<Check> {
    let mass = 0.5;
    let chain = ChainSpec::parse("inv", 0.0)?;
    let exact = dense_trace_chain(&chain, spec, mass)?;
    let op = FermionOperator::new(spec.clone(), mass)?;
    let cfg = TraceConfig { n_vectors: nvec, batch: 4, noise: NoiseKind::Z2, seed, keep_samples: false };
    let cg = CgConfig { tol: 1e-8, max_iter: 10_000, precision: Precision::F64 };
    let est = estimate_chain(&chain, &op, &cfg, &cg)?;
    let dev = (est.mean.re - exact.re).abs();
    let pass = dev <= 3.0 * est.stderr;
    Ok(check(
        "stochastic-trace",
        pass,
        format!("estimate {:.4} ± {:.4}, dense {:.4}, N = {nvec}", est.mean.re, est.stderr, exact.re),
    ))
}

fn r14_roundtrip<T: Real>(seed: u64, tol: f64) -> Check {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..10_000 {
        let s: f64 = rng.random_range(0.5..2.0);
        let n: Complex3x3<T> = random_su3::<T, _>(&mut rng).scale(T::of_f64(s));
        match compress_r14(&n).and_then(|c| reconstruct_r14(&c)) {
            Ok(back) => worst = worst.max(back.max_abs_diff(&n)),
            Err(_) => failures += 1,
        }
    }
    let name = if T::PRECISION == Precision::F32 { "r14-roundtrip-f32" } else { "r14-roundtrip-f64" };
    check(name, failures == 0 && worst <= tol, format!("max error {worst:.2e} over 10000 links"))
}

fn reference_intensity(g: &GlobalOpts) -> Check {
    let model = common::cost_model(g);
    let mut worst = 0.0f64;
    for (i, &n) in REFERENCE_RHS.iter().enumerate() {
        for (storage, reference) in [(LinkStorage::Full18, REFERENCE_FULL[i]), (LinkStorage::R14, REFERENCE_R14[i])] {
            let ai = round2(model.arithmetic_intensity(n, storage, Precision::F32));
            worst = worst.max((ai - reference).abs());
        }
    }
    check("reference-intensity", worst <= 0.005, format!("max deviation {worst:.3} over 14 entries"))
}

fn transfer_accounting() -> anyhow::Result<Check> {
    let mut mismatches = 0;
    let mut cases = 0;
    for dims in [[4, 4, 4, 4], [8, 4, 4, 4], [8, 8, 8, 8]] {
        let geom = LatticeGeometry::new(dims)?;
        let v = geom.volume() as u64;
        for storage in [LinkStorage::Full18, LinkStorage::R14] {
            let (fat, naik) = hisq_core::fields::random_link_pair::<f32>(&geom, storage, 3, 0.4)?;
            let spec = DslashSpec::new(fat, naik)?;
            for n in [1usize, 2, 4, 8] {
                let x = VectorBundle::<f32>::new(&geom, n, Layout::Soa)?;
                let mut y = x.clone();
                let stats = spec.apply(&x, &mut y)?;
                let (p, nn, ln) = (4u64, n as u64, storage.reals() as u64);
                let expect = TransferStats {
                    flops: v * nn * 1146,
                    bytes_links: v * (8 * 18 + 8 * ln) * p,
                    bytes_vectors_in: v * nn * 96 * p,
                    bytes_vectors_out: v * nn * 6 * p,
                    ..stats
                };
                cases += 1;
                mismatches += usize::from(stats != expect);
            }
        }
    }
    Ok(check("transfer-accounting", mismatches == 0, format!("{mismatches} mismatches in {cases} cases")))
}

fn tuning_equivalence(g: &GlobalOpts, geom: &LatticeGeometry) -> anyhow::Result<Check> {
    let spec = common::build_spec::<f32>(g, geom, LinkStorage::R14)?;
    let v = {
        let mut v = VectorBundle::<f32>::new(geom, 4, Layout::Soa)?;
        v.fill_random_rhs(g.seed, NoiseKind::Gaussian);
        v
    };
    let mut reference = v.clone();
    spec.apply(&v, &mut reference)?;
    let grid = candidate_grid(geom.volume(), 4);
    let best = Autotuner::new().tune(&spec, &v, &grid, 1)?.best;
    let mut identical = 0;
    for c in &grid {
        let mut w = v.clone();
        spec.clone().with_strategy(c.strategy).with_split_kernels(c.split_kernels).apply(&v, &mut w)?;
        identical += usize::from(w.bit_equal(&reference));
    }
    Ok(check(
        "tuning-equivalence",
        identical == grid.len(),
        format!("{identical}/{} candidates bit-identical, tuned choice {best}", grid.len()),
    ))
}
