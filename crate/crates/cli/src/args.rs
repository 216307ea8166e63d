use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hisq_core::fields::{Layout, NoiseKind};
use hisq_core::lattice::LatticeGeometry;
use hisq_core::perfmodel::StorageSelection;
use hisq_core::real::Precision;

#[derive(Parser, Debug)]
#[command(name = "hisq", version, about = "Multi-rhs HISQ Dslash benchmarks, verification and model queries")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Time the Dslash or the CG inverter.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the dense-oracle verification suite.
    Verify(VerifyOpts),
    /// Query the intensity and roofline model.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Stochastic trace of an operator chain.
    Trace(TraceOpts),
}

#[derive(Subcommand, Debug)]
pub enum BenchCommand {
    Dslash,
    Cg(CgOpts),
}

#[derive(Subcommand, Debug)]
pub enum ModelCommand {
    /// Arithmetic intensity per rhs count and link storage.
    Intensity,
    /// Roofline predictions for catalog devices.
    Roofline,
    /// List the device catalog.
    Devices,
    /// (GFlop/s)/W.
    Efficiency {
        #[arg(long)]
        gflops: f64,
        #[arg(long)]
        watts: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyKind {
    Register,
    Cache,
    Combined,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultKind {
    /// Backward smeared hop added instead of subtracted.
    FlipBackwardSign,
    /// Model charges 16 reals per compressed Naik link.
    NaikReals16,
}

#[derive(Args, Debug)]
pub struct GlobalOpts {
    /// Lattice extents, e.g. 16x16x16x16.
    #[arg(long, global = true)]
    pub lattice: Option<LatticeGeometry>,
    /// Rhs counts: comma list and/or inclusive ranges, e.g. 1..4,6,8.
    #[arg(long, global = true, value_parser = parse_rhs_list)]
    pub rhs: Option<RhsList>,
    #[arg(long, global = true, default_value = "f32")]
    pub precision: Precision,
    #[arg(long, global = true, default_value = "soa")]
    pub layout: Layout,
    #[arg(long, global = true, value_enum, default_value = "register")]
    pub strategy: StrategyKind,
    #[arg(long, global = true, default_value_t = 4)]
    pub rhs_chunk: usize,
    #[arg(long, global = true, default_value_t = 256)]
    pub tile: usize,
    #[arg(long, global = true)]
    pub split_kernels: bool,
    /// Naik link storage: full, r14 or both.
    #[arg(long, global = true)]
    pub reconstruct: Option<StorageSelection>,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 50)]
    pub repetitions: usize,
    #[arg(long, global = true, default_value_t = 5)]
    pub warmup: usize,
    /// Scale of the random Naik links.
    #[arg(long, global = true, default_value_t = 0.4)]
    pub naik_scale: f64,
    /// Device name for predicted GFlop/s columns.
    #[arg(long, global = true)]
    pub device: Option<String>,
    /// Extra device definitions (`name key=value` lines).
    #[arg(long, global = true)]
    pub device_config: Option<PathBuf>,
    /// All links zero.
    #[arg(long, global = true)]
    pub zero_links: bool,
    #[arg(long, global = true, hide = true, value_enum)]
    pub inject_fault: Option<FaultKind>,
}

#[derive(Args, Debug)]
pub struct CgOpts {
    #[arg(long, default_value_t = 0.1)]
    pub mass: f64,
    /// Relative residual target (default 1e-6 in f32, 1e-10 in f64).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Solve with b = 0.
    #[arg(long)]
    pub zero_source: bool,
}

#[derive(Args, Debug)]
pub struct VerifyOpts {
    /// Noise vectors of the trace check.
    #[arg(long, default_value_t = 200)]
    pub nvec: usize,
}

#[derive(Args, Debug)]
pub struct TraceOpts {
    /// Insertions left to right, e.g. d1,inv,d1,inv.
    #[arg(long, default_value = "inv")]
    pub chain: String,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 500)]
    pub nvec: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mass: f64,
    #[arg(long, default_value = "z2")]
    pub noise: NoiseKind,
    /// Noise vectors inverted per bundle.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// Per-vector samples CSV.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RhsList(pub Vec<usize>);

fn parse_rhs_list(s: &str) -> Result<RhsList, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        let num = |t: &str| t.parse::<usize>().map_err(|_| format!("bad rhs count '{t}'"));
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty rhs range '{part}'"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.contains(&0) {
        return Err("rhs counts must be at least 1".into());
    }
    Ok(RhsList(out))
}
