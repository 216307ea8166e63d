//! The HISQ Dslash on bundles of right-hand sides.
//!
//! For every site `x` and rhs `i`:
//!
//! ```text
//! w_x = Σ_μ [ X_{x,μ} v_{x+μ} − X†_{x−μ,μ} v_{x−μ} ] + Σ_μ [ N_{x,μ} v_{x+3μ} − N†_{x−3μ,μ} v_{x−3μ} ]
//! ```
//!
//! with boundary signs from the neighbor table applied to the hopped vectors.
//! The smeared part and the Naik part are each summed with μ ascending,
//! forward before backward, and then added. Every strategy, layout and the
//! split-kernel mode use exactly this order, so their outputs are
//! bit-identical.

mod autotune;
mod kernel;

use std::ops::{Add, AddAssign};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::R14_RECONSTRUCT_FLOPS;
use crate::fields::{LayoutMap, LinkField, LinkRole, LinkStorage, VectorBundle, VECTOR_REALS};
use crate::lattice::{build_neighbor_table, LatticeGeometry, NeighborTable, NDIM};
use crate::perfmodel::CostModel;
use crate::real::{Precision, Real};

pub use autotune::{candidate_grid, Autotuner, Candidate, TuneKey, TuneResult};
pub use kernel::HopCoefficients;

#[derive(Debug, Error, PartialEq)]
pub enum DslashError {
    #[error("link field geometry {found:?} differs from operator geometry {expected:?}")]
    LinkGeometry { expected: [usize; 4], found: [usize; 4] },
    #[error("expected a {expected:?} link field, got {found:?}")]
    LinkRole { expected: LinkRole, found: LinkRole },
    #[error("vector geometry {found:?} differs from operator geometry {expected:?}")]
    GeometryMismatch { expected: [usize; 4], found: [usize; 4] },
    #[error("input has {input} rhs but output has {output}")]
    RhsMismatch { input: usize, output: usize },
    #[error("field {index} has {found} reals, layout needs {expected}")]
    FieldLength { index: usize, expected: usize, found: usize },
    #[error("input and output buffers overlap")]
    Aliased,
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("autotune needs at least one candidate and one repetition")]
    EmptyCandidates,
}

/// Loop organization of one application.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Per site, links are loaded once and applied to `rhs_chunk` vectors.
    RegisterBlock { rhs_chunk: usize },
    /// Per tile of sites, all rhs are processed one after the other while
    /// the tile's links stay in cache.
    CacheBlock { tile_sites: usize },
    /// Tiles of sites, and register blocking over rhs chunks inside a tile.
    Combined { rhs_chunk: usize, tile_sites: usize },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::RegisterBlock { rhs_chunk: 4 }
    }
}

impl Strategy {
    pub fn validate(&self) -> Result<(), DslashError> {
        let (chunk, tile) = self.chunk_and_tile();
        if chunk == 0 || tile == 0 {
            return Err(DslashError::InvalidStrategy(format!("{self} needs rhs_chunk ≥ 1 and tile_sites ≥ 1")));
        }
        Ok(())
    }

    /// `(rhs_chunk, tile_sites)` of the common loop nest: tiles of sites,
    /// rhs chunks inside a tile, sites inside a chunk, rhs inside a site.
    pub fn chunk_and_tile(&self) -> (usize, usize) {
        match *self {
            Strategy::RegisterBlock { rhs_chunk } => (rhs_chunk, 1),
            Strategy::CacheBlock { tile_sites } => (1, tile_sites),
            Strategy::Combined { rhs_chunk, tile_sites } => (rhs_chunk, tile_sites),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::RegisterBlock { rhs_chunk } => write!(f, "register-k{rhs_chunk}"),
            Strategy::CacheBlock { tile_sites } => write!(f, "cache-t{tile_sites}"),
            Strategy::Combined { rhs_chunk, tile_sites } => write!(f, "combined-k{rhs_chunk}-t{tile_sites}"),
        }
    }
}

/// Deliberate defects for mutation testing of the verification suite.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The backward smeared hop is added instead of subtracted.
    FlipBackwardSmearedSign,
}

/// Exact flop and byte counts of one application under the ideal-cache model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferStats {
    pub flops: u64,
    pub bytes_links: u64,
    pub bytes_vectors_in: u64,
    pub bytes_vectors_out: u64,
    /// Extra output traffic of the split-kernel mode (second pass).
    pub split_extra_bytes: u64,
    /// Flops spent decompressing r14 links; not part of `flops`.
    pub reconstruct_flops: u64,
    /// Flops outside the Dslash model (negation, linear algebra).
    pub aux_flops: u64,
}

impl TransferStats {
    /// Closed-form model for `volume` sites and `n_rhs` vectors.
    pub fn model(volume: usize, n_rhs: usize, storage: LinkStorage, precision: Precision) -> Self {
        let m = CostModel::default();
        let (v, n) = (volume as u64, n_rhs as u64);
        TransferStats {
            flops: v * n * m.flops_per_site_per_rhs,
            bytes_links: v * m.link_bytes(storage, precision),
            bytes_vectors_in: v * n * m.vector_in_bytes_per_rhs(precision),
            bytes_vectors_out: v * n * m.vector_out_bytes_per_rhs(precision),
            ..Default::default()
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_links + self.bytes_vectors_in + self.bytes_vectors_out
    }

    pub fn arithmetic_intensity(&self) -> f64 {
        self.flops as f64 / self.total_bytes() as f64
    }
}

impl Add for TransferStats {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        TransferStats {
            flops: self.flops + o.flops,
            bytes_links: self.bytes_links + o.bytes_links,
            bytes_vectors_in: self.bytes_vectors_in + o.bytes_vectors_in,
            bytes_vectors_out: self.bytes_vectors_out + o.bytes_vectors_out,
            split_extra_bytes: self.split_extra_bytes + o.split_extra_bytes,
            reconstruct_flops: self.reconstruct_flops + o.reconstruct_flops,
            aux_flops: self.aux_flops + o.aux_flops,
        }
    }
}

impl AddAssign for TransferStats {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Links, hop table and execution settings of the operator.
#[derive(Clone, Debug)]
pub struct DslashSpec<T> {
    geometry: LatticeGeometry,
    neighbors: Arc<NeighborTable>,
    fat: Arc<LinkField<T>>,
    naik: Arc<LinkField<T>>,
    pub strategy: Strategy,
    pub split_kernels: bool,
    pub count_transfers: bool,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl<T: Real> DslashSpec<T> {
    pub fn new(fat: LinkField<T>, naik: LinkField<T>) -> Result<Self, DslashError> {
        Self::from_shared(Arc::new(fat), Arc::new(naik))
    }

    pub fn from_shared(fat: Arc<LinkField<T>>, naik: Arc<LinkField<T>>) -> Result<Self, DslashError> {
        let geometry = *fat.geometry();
        if naik.geometry() != &geometry {
            return Err(DslashError::LinkGeometry { expected: geometry.dims(), found: naik.geometry().dims() });
        }
        if fat.role() != LinkRole::Smeared {
            return Err(DslashError::LinkRole { expected: LinkRole::Smeared, found: fat.role() });
        }
        if naik.role() != LinkRole::Naik {
            return Err(DslashError::LinkRole { expected: LinkRole::Naik, found: naik.role() });
        }
        Ok(DslashSpec {
            geometry,
            neighbors: Arc::new(build_neighbor_table(&geometry)),
            fat,
            naik,
            strategy: Strategy::default(),
            split_kernels: false,
            count_transfers: true,
            fault: None,
        })
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_split_kernels(mut self, split: bool) -> Self {
        self.split_kernels = split;
        self
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn neighbors(&self) -> &NeighborTable {
        &self.neighbors
    }

    pub fn fat(&self) -> &LinkField<T> {
        &self.fat
    }

    pub fn naik(&self) -> &LinkField<T> {
        &self.naik
    }

    pub fn naik_storage(&self) -> LinkStorage {
        self.naik.storage()
    }

    /// `w = D v` on every vector of the bundle.
    pub fn apply(&self, input: &VectorBundle<T>, output: &mut VectorBundle<T>) -> Result<TransferStats, DslashError> {
        check_bundles(&self.geometry, input, output)?;
        let inputs: Vec<&[T]> = input.fields().iter().map(Vec::as_slice).collect();
        let map = Arc::clone(input.map());
        let mut outputs: Vec<&mut [T]> = output.fields_mut().iter_mut().map(Vec::as_mut_slice).collect();
        self.apply_fields(&map, &inputs, &mut outputs)
    }

    /// `w = D† v = −D v`. The negation is counted in `aux_flops`.
    pub fn apply_daggered(
        &self,
        input: &VectorBundle<T>,
        output: &mut VectorBundle<T>,
    ) -> Result<TransferStats, DslashError> {
        let mut stats = self.apply(input, output)?;
        for field in output.fields_mut() {
            for x in field.iter_mut() {
                *x = -*x;
            }
        }
        if self.count_transfers {
            stats.aux_flops += (self.geometry.volume() * VECTOR_REALS * input.n_rhs()) as u64;
        }
        Ok(stats)
    }

    /// `D` applied to raw fields sharing `map`; the entry point used by the
    /// solver to run on the active subset of a bundle.
    pub fn apply_fields(
        &self,
        map: &LayoutMap,
        inputs: &[&[T]],
        outputs: &mut [&mut [T]],
    ) -> Result<TransferStats, DslashError> {
        let coeffs = HopCoefficients::standard(self.fault);
        self.apply_with(&coeffs, map, inputs, outputs)
    }

    /// Dslash with arbitrary real hop coefficients (chemical potential and
    /// its derivatives).
    pub fn apply_with(
        &self,
        coeffs: &HopCoefficients<T>,
        map: &LayoutMap,
        inputs: &[&[T]],
        outputs: &mut [&mut [T]],
    ) -> Result<TransferStats, DslashError> {
        self.strategy.validate()?;
        check_fields(&self.geometry, map, inputs, outputs)?;
        kernel::run(self, coeffs, map, inputs, outputs);
        Ok(self.stats(inputs.len()))
    }

    fn stats(&self, n_rhs: usize) -> TransferStats {
        if !self.count_transfers {
            return TransferStats::default();
        }
        let volume = self.geometry.volume();
        let mut stats = TransferStats::model(volume, n_rhs, self.naik.storage(), T::PRECISION);
        if self.split_kernels {
            stats.split_extra_bytes = stats.bytes_vectors_out;
        }
        if self.naik.storage() == LinkStorage::R14 {
            let (chunk, _) = self.strategy.chunk_and_tile();
            let chunks = n_rhs.div_ceil(chunk.min(n_rhs.max(1))) as u64;
            stats.reconstruct_flops = volume as u64 * chunks * (2 * NDIM as u64) * R14_RECONSTRUCT_FLOPS;
        }
        stats
    }
}

fn check_bundles<T: Real>(
    geometry: &LatticeGeometry,
    input: &VectorBundle<T>,
    output: &VectorBundle<T>,
) -> Result<(), DslashError> {
    for b in [input.geometry(), output.geometry()] {
        if b != geometry {
            return Err(DslashError::GeometryMismatch { expected: geometry.dims(), found: b.dims() });
        }
    }
    if input.n_rhs() != output.n_rhs() {
        return Err(DslashError::RhsMismatch { input: input.n_rhs(), output: output.n_rhs() });
    }
    if input.layout() != output.layout() {
        return Err(DslashError::InvalidStrategy(format!(
            "input layout {} differs from output layout {}",
            input.layout(),
            output.layout()
        )));
    }
    Ok(())
}

fn check_fields<T: Real>(
    geometry: &LatticeGeometry,
    map: &LayoutMap,
    inputs: &[&[T]],
    outputs: &[&mut [T]],
) -> Result<(), DslashError> {
    if map.geometry() != geometry {
        return Err(DslashError::GeometryMismatch { expected: geometry.dims(), found: map.geometry().dims() });
    }
    if inputs.len() != outputs.len() {
        return Err(DslashError::RhsMismatch { input: inputs.len(), output: outputs.len() });
    }
    let expected = map.len();
    for (index, len) in inputs.iter().map(|f| f.len()).chain(outputs.iter().map(|f| f.len())).enumerate() {
        if len != expected {
            return Err(DslashError::FieldLength { index, expected, found: len });
        }
    }
    // Safe callers cannot alias a shared and a mutable slice; the check
    // guards slices assembled from raw parts.
    for out in outputs.iter() {
        let o = out.as_ptr_range();
        for inp in inputs {
            let i = inp.as_ptr_range();
            if o.start < i.end && i.start < o.end {
                return Err(DslashError::Aliased);
            }
        }
    }
    Ok(())
}
