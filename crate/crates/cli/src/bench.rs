use std::io::Write;
use std::time::{Duration, Instant};

use anyhow::Context;
use chrono::Utc;
use hisq_core::dslash::{candidate_grid, Autotuner, Candidate, DslashSpec};
use hisq_core::fields::{LinkStorage, NoiseKind, VectorBundle};
use hisq_core::lattice::LatticeGeometry;
use hisq_core::perfmodel::{roofline_predict, DeviceSpec, StorageSelection};
use hisq_core::real::{Precision, Real};
use hisq_core::solver::{cg_solve, CgConfig, FermionOperator};

use crate::args::{CgOpts, GlobalOpts};
use crate::common::{self, Failure};

const DEFAULT_LATTICE: [usize; 4] = [8, 8, 8, 8];
const DEFAULT_RHS: [usize; 7] = [1, 2, 3, 4, 5, 6, 8];

pub const DSLASH_HEADER: &str = "timestamp,lattice,n_rhs,precision,storage,layout,strategy,split,repetitions,\
median_s,min_s,gflops,model_ai,device,predicted_gflops,checksum";

pub const CG_HEADER: &str = "timestamp,lattice,n_rhs,precision,storage,layout,strategy,split,mass,tol,\
iterations,rhs_iterations,converged,median_s,min_s,median_per_iteration_s,gflops,checksum";

/// Settings shared by both benchmarks, validated before anything is allocated.
struct Plan {
    geom: LatticeGeometry,
    rhs: Vec<usize>,
    storages: Vec<LinkStorage>,
    fixed: Option<Candidate>,
    device: Option<DeviceSpec>,
}

fn plan(g: &GlobalOpts) -> Result<Plan, Failure> {
    let geom = common::geometry(g, DEFAULT_LATTICE)?;
    common::check_layout(g, &geom)?;
    if g.repetitions == 0 {
        return common::usage("--repetitions must be at least 1");
    }
    let fixed = common::fixed_strategy(g)?.map(|strategy| Candidate { strategy, split_kernels: g.split_kernels });
    let rhs = g.rhs.as_ref().map(|r| r.0.clone()).unwrap_or_else(|| DEFAULT_RHS.to_vec());
    let storages = g.reconstruct.unwrap_or(StorageSelection::Full).storages();
    let device = common::device(g)?;
    Ok(Plan { geom, rhs, storages, fixed, device })
}

/// Required bytes for the largest rhs count; refuses sizes that cannot be addressed.
fn check_memory<T: Real>(plan: &Plan, storage: LinkStorage, vectors_per_rhs: usize) -> Result<u64, Failure> {
    let n_max = plan.rhs.iter().copied().max().unwrap_or(1);
    let need = common::required_bytes::<T>(&plan.geom, storage, vectors_per_rhs * n_max);
    if need > isize::MAX as u64 {
        return common::usage(format!("lattice {} needs {:.1} GiB", plan.geom, common::gib(need)));
    }
    Ok(need)
}

fn candidate_for<T: Real>(
    plan: &Plan,
    tuner: &mut Autotuner,
    spec: &DslashSpec<T>,
    input: &VectorBundle<T>,
) -> anyhow::Result<Candidate> {
    match plan.fixed {
        Some(c) => Ok(c),
        None => {
            let grid = candidate_grid(plan.geom.volume(), input.n_rhs());
            Ok(tuner.tune(spec, input, &grid, 3)?.best)
        }
    }
}

fn time_reps(g: &GlobalOpts, mut f: impl FnMut() -> anyhow::Result<()>) -> anyhow::Result<(Duration, Duration)> {
    for _ in 0..g.warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(g.repetitions);
    for _ in 0..g.repetitions {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed());
    }
    let min = *times.iter().min().expect("repetitions ≥ 1");
    Ok((common::median(&mut times), min))
}

pub fn dslash(g: &GlobalOpts) -> Result<(), Failure> {
    match g.precision {
        Precision::F32 => dslash_typed::<f32>(g),
        Precision::F64 => dslash_typed::<f64>(g),
    }
}

fn dslash_typed<T: Real>(g: &GlobalOpts) -> Result<(), Failure> {
    let plan = plan(g)?;
    let need = plan
        .storages
        .iter()
        .map(|&s| check_memory::<T>(&plan, s, 2))
        .try_fold(0, |a, b| b.map(|b| a.max(b)))?;
    let oom = || format!("allocating fields for {} ({:.2} GiB needed)", plan.geom, common::gib(need));
    let mut out = common::output(g)?;
    common::write_line(&mut out, DSLASH_HEADER)?;
    let model = common::cost_model(g);
    let mut tuner = Autotuner::new();
    for &storage in &plan.storages {
        let base = common::build_spec::<T>(g, &plan.geom, storage)
            .with_context(oom)?;
        for &n in &plan.rhs {
            let mut input = VectorBundle::<T>::new(&plan.geom, n, g.layout).with_context(oom)?;
            input.fill_random_rhs(g.seed, NoiseKind::Gaussian);
            let mut output = VectorBundle::<T>::new(&plan.geom, n, g.layout).with_context(oom)?;
            let cand = candidate_for(&plan, &mut tuner, &base, &input)?;
            let mut spec = base.clone().with_strategy(cand.strategy).with_split_kernels(cand.split_kernels);
            spec.count_transfers = true;
            let stats = spec.apply(&input, &mut output).context("applying dslash")?;
            spec.count_transfers = false;
            let (median, min) = time_reps(g, || {
                spec.apply(&input, &mut output)?;
                Ok(())
            })?;
            let gflops = stats.flops as f64 / median.as_secs_f64() / 1e9;
            let ai = model.arithmetic_intensity(n, storage, T::PRECISION);
            let (device, predicted) = match &plan.device {
                Some(d) => (d.name.clone(), format!("{:.1}", roofline_predict(d, n, storage, T::PRECISION, false).map_err(anyhow::Error::from)?)),
                None => (String::new(), String::new()),
            };
            let line = format!(
                "{},{},{},{},{},{},{},{},{},{:.6e},{:.6e},{:.3},{:.4},{},{},{:016x}",
                Utc::now().to_rfc3339(),
                plan.geom,
                n,
                T::PRECISION,
                storage,
                g.layout,
                cand.strategy,
                cand.split_kernels,
                g.repetitions,
                median.as_secs_f64(),
                min.as_secs_f64(),
                gflops,
                ai,
                device,
                predicted,
                output.checksum(),
            );
            common::write_line(&mut out, &line)?;
        }
    }
    out.flush().context("flushing output")?;
    Ok(())
}

pub fn cg(g: &GlobalOpts, opts: &CgOpts) -> Result<(), Failure> {
    match g.precision {
        Precision::F32 => cg_typed::<f32>(g, opts),
        Precision::F64 => cg_typed::<f64>(g, opts),
    }
}

fn cg_typed<T: Real>(g: &GlobalOpts, opts: &CgOpts) -> Result<(), Failure> {
    let plan = plan(g)?;
    if !(opts.mass > 0.0) || !opts.mass.is_finite() {
        return common::usage("--mass must be positive");
    }
    let mut cfg = CgConfig::for_precision(T::PRECISION);
    cfg.max_iter = opts.max_iter;
    if let Some(tol) = opts.tol {
        cfg.tol = tol;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    // x, b, r, p, Ap and two scratch bundles per rhs.
    let need = plan
        .storages
        .iter()
        .map(|&s| check_memory::<T>(&plan, s, 7))
        .try_fold(0, |a, b| b.map(|b| a.max(b)))?;
    let oom = || format!("allocating fields for {} ({:.2} GiB needed)", plan.geom, common::gib(need));
    let mut out = common::output(g)?;
    common::write_line(&mut out, CG_HEADER)?;
    let mut tuner = Autotuner::new();
    for &storage in &plan.storages {
        let base = common::build_spec::<T>(g, &plan.geom, storage)
            .with_context(oom)?;
        for &n in &plan.rhs {
            let mut b = VectorBundle::<T>::new(&plan.geom, n, g.layout).with_context(oom)?;
            if !opts.zero_source {
                b.fill_random_rhs(g.seed, NoiseKind::Gaussian);
            }
            let cand = candidate_for(&plan, &mut tuner, &base, &b)?;
            let spec = base.clone().with_strategy(cand.strategy).with_split_kernels(cand.split_kernels);
            let op = FermionOperator::new(spec, opts.mass).map_err(|e| Failure::Usage(e.to_string()))?;
            let mut last = None;
            let (median, min) = time_reps(g, || {
                last = Some(cg_solve(&op, &b, &cfg)?);
                Ok(())
            })?;
            let (x, report) = last.expect("at least one timed solve");
            let per_rhs: Vec<String> = report.rhs.iter().map(|r| r.iterations.to_string()).collect();
            let per_iter = if report.iterations > 0 { median.as_secs_f64() / report.iterations as f64 } else { 0.0 };
            let gflops = (report.stats.flops + report.stats.aux_flops) as f64 / median.as_secs_f64() / 1e9;
            let line = format!(
                "{},{},{},{},{},{},{},{},{},{:e},{},{},{},{:.6e},{:.6e},{:.6e},{:.3},{:016x}",
                Utc::now().to_rfc3339(),
                plan.geom,
                n,
                T::PRECISION,
                storage,
                g.layout,
                cand.strategy,
                cand.split_kernels,
                opts.mass,
                cfg.tol,
                report.iterations,
                per_rhs.join(";"),
                report.all_converged(),
                median.as_secs_f64(),
                min.as_secs_f64(),
                per_iter,
                gflops,
                x.checksum(),
            );
            common::write_line(&mut out, &line)?;
        }
    }
    out.flush().context("flushing output")?;
    Ok(())
}
