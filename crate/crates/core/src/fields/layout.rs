//! Memory layouts for color-vector fields.
//!
//! A field of `V` color vectors holds `6V` reals: three colors, each with a
//! real and an imaginary component (`comp = 2·color + reim`).
//!
//! * `Soa`: one array per component, `offset = comp·V + site`.
//! * `Fused(W)`: sites of equal parity along an `x` row are grouped into
//!   blocks of `W`; each block stores `6` component rows of `W` lanes, so one
//!   vector register holds one component of `W` sites. A site with
//!   coordinate `x` sits in lane `(x/2) mod W` of block `(x/2)/W`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::lattice::{LatticeGeometry, Parity};

/// Reals per color vector.
pub const VECTOR_REALS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    Soa,
    /// Site fusion with the given width (4, 8 or 16).
    Fused(usize),
}

impl Layout {
    pub const ALL: [Layout; 4] = [Layout::Soa, Layout::Fused(4), Layout::Fused(8), Layout::Fused(16)];

    /// Code stored in field file headers.
    pub fn code(self) -> u8 {
        match self {
            Layout::Soa => 0,
            Layout::Fused(4) => 1,
            Layout::Fused(8) => 2,
            Layout::Fused(16) => 3,
            Layout::Fused(_) => u8::MAX,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Layout::Soa),
            1 => Some(Layout::Fused(4)),
            2 => Some(Layout::Fused(8)),
            3 => Some(Layout::Fused(16)),
            _ => None,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Soa => f.write_str("soa"),
            Layout::Fused(w) => write!(f, "fused{w}"),
        }
    }
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soa" => Ok(Layout::Soa),
            "fused4" => Ok(Layout::Fused(4)),
            "fused8" => Ok(Layout::Fused(8)),
            "fused16" => Ok(Layout::Fused(16)),
            other => Err(format!("unknown layout '{other}' (expected soa|fused4|fused8|fused16)")),
        }
    }
}

/// Precomputed site → storage offset map for one geometry and layout.
#[derive(Clone, Debug)]
pub struct LayoutMap {
    geometry: LatticeGeometry,
    layout: Layout,
    stride: usize,
    base: Vec<u32>,
}

impl LayoutMap {
    pub fn new(geometry: &LatticeGeometry, layout: Layout) -> Result<Self, FieldError> {
        let volume = geometry.volume();
        let (stride, base) = match layout {
            Layout::Soa => (volume, (0..volume as u32).collect()),
            Layout::Fused(width) => {
                let nx = geometry.extent(0);
                let half = nx / 2;
                if !matches!(width, 4 | 8 | 16) || half % width != 0 {
                    return Err(FieldError::FusionWidth { width, x_extent: nx });
                }
                let blocks_per_row = half / width;
                let base = (0..volume)
                    .map(|site| {
                        let c = geometry.coords(site);
                        let row = site / nx;
                        let parity = geometry.site_parity(site).index();
                        let h = c.x / 2;
                        let block = (row * 2 + parity) * blocks_per_row + h / width;
                        (block * VECTOR_REALS * width + h % width) as u32
                    })
                    .collect();
                (width, base)
            }
        };
        Ok(LayoutMap { geometry: *geometry, layout, stride, base })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Distance between consecutive components of one site.
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Reals in one field.
    pub fn len(&self) -> usize {
        VECTOR_REALS * self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Offset of the first component of `site`.
    #[inline(always)]
    pub fn base(&self, site: usize) -> usize {
        self.base[site] as usize
    }

    #[inline(always)]
    pub fn offset(&self, site: usize, comp: usize) -> usize {
        self.base(site) + comp * self.stride
    }

    /// Lane and parity of a site under a fused layout (test helper for the index map).
    pub fn lane_of(&self, site: usize) -> Option<(usize, Parity)> {
        match self.layout {
            Layout::Soa => None,
            Layout::Fused(w) => {
                let c = self.geometry.coords(site);
                Some(((c.x / 2) % w, self.geometry.site_parity(site)))
            }
        }
    }
}
