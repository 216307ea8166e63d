use std::io::Write;

use anyhow::Context;
use hisq_core::fields::LinkStorage;
use hisq_core::real::{Precision, Real};
use hisq_core::solver::{CgConfig, FermionOperator};
use hisq_core::traces::{estimate_chain, ChainSpec, TraceConfig, TraceEstimate};

use crate::args::{GlobalOpts, TraceOpts};
use crate::common::{self, Failure};

const DEFAULT_LATTICE: [usize; 4] = [4, 4, 4, 4];

pub const SUMMARY_HEADER: &str = "chain,mu,mass,n_vectors,mean_re,mean_im,stderr,cg_iterations";

pub fn run(g: &GlobalOpts, opts: &TraceOpts) -> Result<(), Failure> {
    match g.precision {
        Precision::F32 => run_typed::<f32>(g, opts),
        Precision::F64 => run_typed::<f64>(g, opts),
    }
}

fn run_typed<T: Real>(g: &GlobalOpts, opts: &TraceOpts) -> Result<(), Failure> {
    let geom = common::geometry(g, DEFAULT_LATTICE)?;
    let chain = ChainSpec::parse(&opts.chain, opts.mu).map_err(|e| Failure::Usage(e.to_string()))?;
    if opts.nvec == 0 || opts.batch == 0 {
        return common::usage("--nvec and --batch must be at least 1");
    }
    if !(opts.mass > 0.0) || !opts.mass.is_finite() || !opts.mu.is_finite() {
        return common::usage("--mass must be positive and --mu finite");
    }
    let mut cg = CgConfig::for_precision(T::PRECISION);
    cg.max_iter = opts.max_iter;
    if let Some(tol) = opts.tol {
        cg.tol = tol;
    }
    cg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let strategy = common::fixed_strategy(g)?.unwrap_or_default();

    let storage = match g.reconstruct {
        Some(sel) if sel.storages() == [LinkStorage::R14] => LinkStorage::R14,
        _ => LinkStorage::Full18,
    };
    let spec = common::build_spec::<T>(g, &geom, storage)?.with_strategy(strategy);
    let op = FermionOperator::new(spec, opts.mass).map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = TraceConfig {
        n_vectors: opts.nvec,
        batch: opts.batch,
        noise: opts.noise,
        seed: g.seed,
        keep_samples: opts.samples.is_some(),
    };
    let est = estimate_chain(&chain, &op, &cfg, &cg).map_err(anyhow::Error::from)?;

    eprintln!("Tr[{chain}] = {:?} ± {} (N = {})", est.mean.re, est.stderr, est.n_vectors);
    let mut out = common::output(g)?;
    common::write_line(&mut out, SUMMARY_HEADER)?;
    common::write_line(&mut out, &summary_row(&chain, opts.mass, &est))?;
    out.flush().context("flushing output")?;
    if let Some(path) = &opts.samples {
        std::fs::write(path, est.samples_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn summary_row(chain: &ChainSpec, mass: f64, est: &TraceEstimate) -> String {
    // The chain is quoted because it contains commas.
    format!(
        "\"{chain}\",{},{},{},{:?},{:?},{:?},{}",
        chain.mu, mass, est.n_vectors, est.mean.re, est.mean.im, est.stderr, est.cg_iterations
    )
}
