//! Four-dimensional lattice geometry, site indexing and hop tables.
//!
//! Sites are numbered lexicographically with `x` fastest:
//! `idx = x + Nx·(y + Ny·(z + Nz·t))`. Spatial directions are always
//! periodic; the temporal direction is periodic or antiperiodic.
//!
//! Every extent must be even and at least 4. With an extent of exactly 4 a
//! hop of +3 lands on the same site as a hop of −1; the two still travel
//! through different links, so the operator stays well defined.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of lattice directions (x, y, z, t).
pub const NDIM: usize = 4;

/// Hops per site per direction: +1, −1, +3, −3.
pub const HOPS_PER_DIR: usize = 4;

/// Total hops stored per site.
pub const HOPS_PER_SITE: usize = NDIM * HOPS_PER_DIR;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("lattice extent {extent} in direction {dir} must be even and at least 4")]
    BadExtent { dir: usize, extent: usize },
    #[error("coordinate {coord} in direction {dir} outside [0, {extent})")]
    OutOfBounds { dir: usize, coord: usize, extent: usize },
    #[error("cannot parse lattice '{0}' (expected NXxNYxNZxNT)")]
    Parse(String),
    #[error("lattice volume {0} exceeds the 32-bit site index range")]
    TooLarge(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemporalBc {
    Periodic,
    Antiperiodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn index(self) -> usize {
        match self {
            Parity::Even => 0,
            Parity::Odd => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SiteCoords {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub t: usize,
}

impl SiteCoords {
    pub const fn new(x: usize, y: usize, z: usize, t: usize) -> Self {
        SiteCoords { x, y, z, t }
    }

    pub fn as_array(&self) -> [usize; NDIM] {
        [self.x, self.y, self.z, self.t]
    }

    pub fn from_array(c: [usize; NDIM]) -> Self {
        SiteCoords::new(c[0], c[1], c[2], c[3])
    }

    pub fn parity(&self) -> Parity {
        parity(self)
    }
}

/// Even iff the coordinate sum is even.
pub fn parity(c: &SiteCoords) -> Parity {
    if (c.x + c.y + c.z + c.t) % 2 == 0 {
        Parity::Even
    } else {
        Parity::Odd
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeGeometry {
    dims: [usize; NDIM],
    temporal_bc: TemporalBc,
}

impl LatticeGeometry {
    /// Geometry with the default antiperiodic temporal boundary.
    pub fn new(dims: [usize; NDIM]) -> Result<Self, LatticeError> {
        Self::with_bc(dims, TemporalBc::Antiperiodic)
    }

    pub fn with_bc(dims: [usize; NDIM], temporal_bc: TemporalBc) -> Result<Self, LatticeError> {
        for (dir, &extent) in dims.iter().enumerate() {
            if extent < 4 || extent % 2 != 0 {
                return Err(LatticeError::BadExtent { dir, extent });
            }
        }
        let volume = dims.iter().product::<usize>();
        if volume > u32::MAX as usize {
            return Err(LatticeError::TooLarge(volume));
        }
        Ok(LatticeGeometry { dims, temporal_bc })
    }

    pub fn dims(&self) -> [usize; NDIM] {
        self.dims
    }

    pub fn extent(&self, dir: usize) -> usize {
        self.dims[dir]
    }

    pub fn volume(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn temporal_bc(&self) -> TemporalBc {
        self.temporal_bc
    }

    pub fn site_index(&self, c: &SiteCoords) -> Result<usize, LatticeError> {
        site_index(c, self)
    }

    /// Inverse of [`site_index`]; `idx` must be below the volume.
    pub fn coords(&self, idx: usize) -> SiteCoords {
        let [nx, ny, nz, _] = self.dims;
        let x = idx % nx;
        let rest = idx / nx;
        let y = rest % ny;
        let rest = rest / ny;
        SiteCoords::new(x, y, rest % nz, rest / nz)
    }

    pub fn site_parity(&self, idx: usize) -> Parity {
        parity(&self.coords(idx))
    }
}

impl fmt::Display for LatticeGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [x, y, z, t] = self.dims;
        write!(f, "{x}x{y}x{z}x{t}")
    }
}

impl FromStr for LatticeGeometry {
    type Err = LatticeError;

    /// Parses `NXxNYxNZxNT`, e.g. `32x32x32x8`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(['x', 'X']).collect();
        if parts.len() != NDIM {
            return Err(LatticeError::Parse(s.to_string()));
        }
        let mut dims = [0usize; NDIM];
        for (d, p) in dims.iter_mut().zip(parts) {
            *d = p.parse().map_err(|_| LatticeError::Parse(s.to_string()))?;
        }
        LatticeGeometry::new(dims)
    }
}

/// Lexicographic index with `x` fastest.
pub fn site_index(c: &SiteCoords, geom: &LatticeGeometry) -> Result<usize, LatticeError> {
    let coords = c.as_array();
    for dir in 0..NDIM {
        if coords[dir] >= geom.dims[dir] {
            return Err(LatticeError::OutOfBounds {
                dir,
                coord: coords[dir],
                extent: geom.dims[dir],
            });
        }
    }
    let [nx, ny, nz, _] = geom.dims;
    Ok(c.x + nx * (c.y + ny * (c.z + nz * c.t)))
}

/// Kind of hop within one direction, in the pinned accumulation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HopKind {
    Forward1 = 0,
    Backward1 = 1,
    Forward3 = 2,
    Backward3 = 3,
}

impl HopKind {
    pub const ALL: [HopKind; HOPS_PER_DIR] = [
        HopKind::Forward1,
        HopKind::Backward1,
        HopKind::Forward3,
        HopKind::Backward3,
    ];

    /// Signed hop length.
    pub fn displacement(self) -> isize {
        match self {
            HopKind::Forward1 => 1,
            HopKind::Backward1 => -1,
            HopKind::Forward3 => 3,
            HopKind::Backward3 => -3,
        }
    }

    pub fn is_forward(self) -> bool {
        matches!(self, HopKind::Forward1 | HopKind::Forward3)
    }

    pub fn is_naik(self) -> bool {
        matches!(self, HopKind::Forward3 | HopKind::Backward3)
    }

    pub fn reverse(self) -> HopKind {
        match self {
            HopKind::Forward1 => HopKind::Backward1,
            HopKind::Backward1 => HopKind::Forward1,
            HopKind::Forward3 => HopKind::Backward3,
            HopKind::Backward3 => HopKind::Forward3,
        }
    }
}

/// Target site of a hop and the boundary sign picked up on the way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hop {
    pub site: u32,
    /// `true` when the boundary phase is −1.
    pub negate: bool,
}

impl Hop {
    pub fn phase(&self) -> f64 {
        if self.negate {
            -1.0
        } else {
            1.0
        }
    }
}

/// Hop targets for every site, direction and hop kind.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    geometry: LatticeGeometry,
    hops: Vec<Hop>,
}

impl NeighborTable {
    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    #[inline(always)]
    pub fn hop(&self, site: usize, dir: usize, kind: HopKind) -> Hop {
        self.hops[site * HOPS_PER_SITE + dir * HOPS_PER_DIR + kind as usize]
    }

    /// All 16 hops of a site, ordered by direction then [`HopKind`].
    #[inline(always)]
    pub fn site_hops(&self, site: usize) -> &[Hop; HOPS_PER_SITE] {
        self.hops[site * HOPS_PER_SITE..(site + 1) * HOPS_PER_SITE]
            .try_into()
            .expect("16 hops per site")
    }
}

/// Builds the hop table. At most one boundary crossing is possible per hop
/// because every extent is at least 4.
pub fn build_neighbor_table(geom: &LatticeGeometry) -> NeighborTable {
    let volume = geom.volume();
    let mut hops = Vec::with_capacity(volume * HOPS_PER_SITE);
    for site in 0..volume {
        let c = geom.coords(site).as_array();
        for dir in 0..NDIM {
            let n = geom.dims[dir] as isize;
            for kind in HopKind::ALL {
                let raw = c[dir] as isize + kind.displacement();
                let wrapped = raw.rem_euclid(n);
                let crosses = raw != wrapped;
                let mut target = c;
                target[dir] = wrapped as usize;
                let idx = site_index(&SiteCoords::from_array(target), geom)
                    .expect("wrapped coordinates are in bounds");
                let negate = crosses
                    && dir == NDIM - 1
                    && geom.temporal_bc == TemporalBc::Antiperiodic;
                hops.push(Hop { site: idx as u32, negate });
            }
        }
    }
    NeighborTable { geometry: *geom, hops }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g4() -> LatticeGeometry {
        LatticeGeometry::new([4, 4, 4, 4]).unwrap()
    }

    #[test]
    fn site_index_examples() {
        let g = g4();
        assert_eq!(site_index(&SiteCoords::new(0, 0, 0, 0), &g), Ok(0));
        assert_eq!(site_index(&SiteCoords::new(1, 0, 0, 0), &g), Ok(1));
        assert_eq!(site_index(&SiteCoords::new(0, 0, 0, 1), &g), Ok(64));
    }

    #[test]
    fn site_index_rejects_out_of_bounds() {
        let g = g4();
        assert_eq!(
            site_index(&SiteCoords::new(0, 4, 0, 0), &g),
            Err(LatticeError::OutOfBounds { dir: 1, coord: 4, extent: 4 })
        );
    }

    #[test]
    fn parity_examples() {
        assert_eq!(parity(&SiteCoords::new(0, 0, 0, 0)), Parity::Even);
        assert_eq!(parity(&SiteCoords::new(1, 0, 0, 0)), Parity::Odd);
        assert_eq!(parity(&SiteCoords::new(1, 1, 0, 0)), Parity::Even);
    }

    #[test]
    fn geometry_validation() {
        assert!(LatticeGeometry::new([4, 4, 4, 2]).is_err());
        assert!(LatticeGeometry::new([5, 4, 4, 4]).is_err());
        assert!(LatticeGeometry::new([6, 4, 8, 4]).is_ok());
        assert_eq!(g4().volume(), 256);
    }

    #[test]
    fn parse_lattice_flag() {
        let g: LatticeGeometry = "32x32x32x8".parse().unwrap();
        assert_eq!(g.dims(), [32, 32, 32, 8]);
        assert_eq!(g.to_string(), "32x32x32x8");
        assert!("32x32x8".parse::<LatticeGeometry>().is_err());
        assert!("3x4x4x4".parse::<LatticeGeometry>().is_err());
    }

    #[test]
    fn neighbor_examples() {
        let periodic = LatticeGeometry::with_bc([4; 4], TemporalBc::Periodic).unwrap();
        let t = build_neighbor_table(&periodic);
        let h = t.hop(3, 0, HopKind::Forward1);
        assert_eq!((h.site, h.phase()), (0, 1.0));

        let g = g4();
        let t = build_neighbor_table(&g);
        let from = site_index(&SiteCoords::new(0, 0, 0, 3), &g).unwrap();
        let h = t.hop(from, 3, HopKind::Forward1);
        assert_eq!((h.site, h.phase()), (0, -1.0));

        let from = site_index(&SiteCoords::new(0, 0, 0, 2), &g).unwrap();
        let h = t.hop(from, 3, HopKind::Forward3);
        assert_eq!(h.site as usize, site_index(&SiteCoords::new(0, 0, 0, 1), &g).unwrap());
        assert_eq!(h.phase(), -1.0);
    }

    #[test]
    fn spatial_wrap_never_negates() {
        let g = LatticeGeometry::new([4, 6, 4, 8]).unwrap();
        let t = build_neighbor_table(&g);
        for site in 0..g.volume() {
            for dir in 0..3 {
                for kind in HopKind::ALL {
                    assert!(!t.hop(site, dir, kind).negate);
                }
            }
        }
    }

    fn dims_strategy() -> impl Strategy<Value = [usize; 4]> {
        prop::array::uniform4(prop::sample::select(vec![4usize, 6, 8]))
    }

    proptest! {
        #[test]
        fn hops_are_involutions_and_flip_parity(dims in dims_strategy(), anti in any::<bool>()) {
            let bc = if anti { TemporalBc::Antiperiodic } else { TemporalBc::Periodic };
            let g = LatticeGeometry::with_bc(dims, bc).unwrap();
            let t = build_neighbor_table(&g);
            for site in 0..g.volume() {
                for dir in 0..NDIM {
                    for kind in HopKind::ALL {
                        let there = t.hop(site, dir, kind);
                        let back = t.hop(there.site as usize, dir, kind.reverse());
                        prop_assert_eq!(back.site as usize, site);
                        prop_assert_eq!(there.phase() * back.phase(), 1.0);
                        prop_assert_ne!(g.site_parity(site), g.site_parity(there.site as usize));
                    }
                }
            }
        }

        #[test]
        fn site_index_is_a_bijection(dims in dims_strategy()) {
            let g = LatticeGeometry::new(dims).unwrap();
            let mut seen = vec![false; g.volume()];
            for idx in 0..g.volume() {
                let c = g.coords(idx);
                prop_assert_eq!(site_index(&c, &g).unwrap(), idx);
                prop_assert!(!seen[idx]);
                seen[idx] = true;
            }
        }
    }
}
