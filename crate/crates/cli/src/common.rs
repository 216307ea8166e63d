use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::time::Duration;

use anyhow::Context;
use hisq_core::dslash::{DslashSpec, Strategy};
use hisq_core::fields::{random_link_pair, LayoutMap, LinkField, LinkRole, LinkStorage};
use hisq_core::lattice::LatticeGeometry;
use hisq_core::perfmodel::{CostModel, DeviceCatalog, DeviceSpec};
use hisq_core::real::Real;

use crate::args::{FaultKind, GlobalOpts, StrategyKind};

pub enum Failure {
    Usage(String),
    /// Number of failed checks.
    Verification(usize),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

pub fn output(g: &GlobalOpts) -> Result<Box<dyn Write>, Failure> {
    match &g.output {
        None => Ok(Box::new(io::stdout().lock())),
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

pub fn write_line(out: &mut dyn Write, line: &str) -> Result<(), Failure> {
    writeln!(out, "{line}").context("writing output")?;
    Ok(())
}

pub fn geometry(g: &GlobalOpts, default: [usize; 4]) -> Result<LatticeGeometry, Failure> {
    match g.lattice {
        Some(geom) => Ok(geom),
        None => LatticeGeometry::new(default).map_err(|e| Failure::Usage(e.to_string())),
    }
}

/// Fixed strategies are validated up front; `Auto` resolves later per shape.
pub fn fixed_strategy(g: &GlobalOpts) -> Result<Option<Strategy>, Failure> {
    let s = match g.strategy {
        StrategyKind::Register => Strategy::RegisterBlock { rhs_chunk: g.rhs_chunk },
        StrategyKind::Cache => Strategy::CacheBlock { tile_sites: g.tile },
        StrategyKind::Combined => Strategy::Combined { rhs_chunk: g.rhs_chunk, tile_sites: g.tile },
        StrategyKind::Auto => return Ok(None),
    };
    s.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(Some(s))
}

pub fn check_layout(g: &GlobalOpts, geom: &LatticeGeometry) -> Result<(), Failure> {
    LayoutMap::new(geom, g.layout).map(|_| ()).map_err(|e| Failure::Usage(e.to_string()))
}

pub fn cost_model(g: &GlobalOpts) -> CostModel {
    let mut m = CostModel::default();
    if g.inject_fault == Some(FaultKind::NaikReals16) {
        m.naik_r14_reals = 16;
    }
    m
}

pub fn catalog(g: &GlobalOpts) -> Result<DeviceCatalog, Failure> {
    let mut c = DeviceCatalog::default();
    if let Some(path) = &g.device_config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        c.extend_from_config(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(c)
}

pub fn device(g: &GlobalOpts) -> Result<Option<DeviceSpec>, Failure> {
    match &g.device {
        None => Ok(None),
        Some(name) => {
            let c = catalog(g)?;
            c.lookup(name).map(|d| Some(d.clone())).map_err(|e| Failure::Usage(e.to_string()))
        }
    }
}

/// Bytes needed for the links and `n_vectors` fields.
pub fn required_bytes<T: Real>(geom: &LatticeGeometry, storage: LinkStorage, n_vectors: usize) -> u64 {
    let v = geom.volume() as u64;
    let p = T::PRECISION.bytes();
    4 * v * (18 + storage.reals() as u64) * p + n_vectors as u64 * 6 * v * p
}

pub fn gib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 30) as f64
}

/// Operator with random (or zero) links from `--seed`.
pub fn build_spec<T: Real>(g: &GlobalOpts, geom: &LatticeGeometry, storage: LinkStorage) -> anyhow::Result<DslashSpec<T>> {
    let (fat, naik) = if g.zero_links {
        (
            LinkField::new(geom, LinkRole::Smeared, LinkStorage::Full18)?,
            LinkField::new(geom, LinkRole::Naik, storage)?,
        )
    } else {
        random_link_pair::<T>(geom, storage, g.seed, g.naik_scale)?
    };
    let mut spec = DslashSpec::new(fat, naik)?.with_split_kernels(g.split_kernels);
    if g.inject_fault == Some(FaultKind::FlipBackwardSign) {
        spec.fault = Some(hisq_core::dslash::Fault::FlipBackwardSmearedSign);
    }
    Ok(spec)
}

pub fn median(times: &mut [Duration]) -> Duration {
    times.sort_unstable();
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2
    }
}
