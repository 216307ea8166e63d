//! Link fields and multi right-hand-side vector bundles.

mod io;
mod layout;

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    compress_r14, random_su3, reconstruct_r14_unchecked, AlgebraError, ColorVector, Complex3x3,
    R14Link, FULL_LINK_REALS, R14_LINK_REALS,
};
use crate::lattice::{LatticeGeometry, NDIM};
use crate::real::{Precision, Real};
use crate::rng::{stream, Domain};

pub use io::{
    decode_header, encode_header, fnv1a64, read_bundle, read_link_field, write_bundle,
    write_link_field, FieldFileHeader, FieldKind, FORMAT_VERSION, HEADER_LEN, MAGIC,
};
pub use layout::{Layout, LayoutMap, VECTOR_REALS};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("fusion width {width} does not divide half the x extent ({x_extent}/2)")]
    FusionWidth { width: usize, x_extent: usize },
    #[error("smeared links must use full 18-real storage")]
    SmearedCompressed,
    #[error("link ({dir}, {site}) cannot be stored compressed: {source}")]
    Compression {
        dir: usize,
        site: usize,
        #[source]
        source: AlgebraError,
    },
    #[error("could not allocate {bytes} bytes for field storage")]
    Allocation { bytes: usize },
    #[error("geometry mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: [usize; 4], found: [usize; 4] },
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("field kind mismatch: expected {expected:?}, found code {found}")]
    KindMismatch { expected: FieldKind, found: u8 },
    #[error("precision mismatch: expected {expected}, found code {found}")]
    PrecisionMismatch { expected: Precision, found: u8 },
    #[error("unknown storage code {0}")]
    BadStorage(u8),
    #[error("payload checksum mismatch: header {expected:#018x}, computed {found:#018x}")]
    ChecksumMismatch { expected: u64, found: u64 },
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid compressed link in file at ({dir}, {site})")]
    InvalidLink { dir: usize, site: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Zero-filled vector, reporting the requested size instead of aborting on OOM.
pub fn try_zeroed<T: Real>(len: usize) -> Result<Vec<T>, FieldError> {
    let mut v = Vec::new();
    v.try_reserve_exact(len)
        .map_err(|_| FieldError::Allocation { bytes: len * std::mem::size_of::<T>() })?;
    v.resize(len, T::zero());
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkStorage {
    Full18,
    R14,
}

impl LinkStorage {
    pub fn reals(self) -> usize {
        match self {
            LinkStorage::Full18 => FULL_LINK_REALS,
            LinkStorage::R14 => R14_LINK_REALS,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            LinkStorage::Full18 => 0,
            LinkStorage::R14 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LinkStorage::Full18),
            1 => Some(LinkStorage::R14),
            _ => None,
        }
    }
}

impl std::fmt::Display for LinkStorage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LinkStorage::Full18 => "full",
            LinkStorage::R14 => "r14",
        })
    }
}

impl std::str::FromStr for LinkStorage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "full18" => Ok(LinkStorage::Full18),
            "r14" => Ok(LinkStorage::R14),
            other => Err(format!("unknown reconstruct '{other}' (expected full|r14)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkRole {
    /// Fat7-smeared nearest-neighbor links.
    Smeared,
    /// Third-nearest-neighbor links.
    Naik,
}

/// One 3×3 link per site and direction, stored direction-major.
#[derive(Clone, Debug)]
pub struct LinkField<T> {
    geometry: LatticeGeometry,
    role: LinkRole,
    storage: LinkStorage,
    data: Vec<T>,
}

impl<T: Real> LinkField<T> {
    /// Zero links. A zero Naik field under r14 is stored with unit scale so
    /// that it decompresses to rows of zeros; see [`LinkField::zeroed`].
    pub fn new(
        geometry: &LatticeGeometry,
        role: LinkRole,
        storage: LinkStorage,
    ) -> Result<Self, FieldError> {
        if role == LinkRole::Smeared && storage == LinkStorage::R14 {
            return Err(FieldError::SmearedCompressed);
        }
        let len = NDIM * geometry.volume() * storage.reals();
        let mut field = LinkField { geometry: *geometry, role, storage, data: try_zeroed(len)? };
        if storage == LinkStorage::R14 {
            field.data.par_chunks_mut(R14_LINK_REALS).for_each(|l| l[12] = T::one());
        }
        Ok(field)
    }

    /// Alias of [`LinkField::new`]; every link is the zero matrix.
    pub fn zeroed(
        geometry: &LatticeGeometry,
        role: LinkRole,
        storage: LinkStorage,
    ) -> Result<Self, FieldError> {
        Self::new(geometry, role, storage)
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn role(&self) -> LinkRole {
        self.role
    }

    pub fn storage(&self) -> LinkStorage {
        self.storage
    }

    pub fn raw_data(&self) -> &[T] {
        &self.data
    }

    #[inline(always)]
    fn link_offset(&self, dir: usize, site: usize) -> usize {
        (dir * self.geometry.volume() + site) * self.storage.reals()
    }

    /// Stored reals of one link (18 or 14).
    #[inline(always)]
    pub fn raw(&self, dir: usize, site: usize) -> &[T] {
        let off = self.link_offset(dir, site);
        &self.data[off..off + self.storage.reals()]
    }

    /// Full matrix of one link, decompressing r14 storage.
    #[inline(always)]
    pub fn link(&self, dir: usize, site: usize) -> Complex3x3<T> {
        let raw = self.raw(dir, site);
        match self.storage {
            LinkStorage::Full18 => Complex3x3::from_reals(raw),
            LinkStorage::R14 => reconstruct_r14_unchecked(&R14Link::from_reals(raw)),
        }
    }

    pub fn set_link(&mut self, dir: usize, site: usize, m: &Complex3x3<T>) -> Result<(), FieldError> {
        let off = self.link_offset(dir, site);
        match self.storage {
            LinkStorage::Full18 => {
                self.data[off..off + FULL_LINK_REALS].copy_from_slice(&m.to_reals());
            }
            LinkStorage::R14 => {
                let c = compress_r14(m)
                    .map_err(|source| FieldError::Compression { dir, site, source })?;
                self.data[off..off + R14_LINK_REALS].copy_from_slice(&c.reals);
            }
        }
        Ok(())
    }

    /// Smeared links become random SU(3); Naik links become `scale·SU(3)`.
    /// Each link has its own random stream, so the result depends only on
    /// `seed`.
    pub fn fill_random_links(&mut self, seed: u64, scale: f64) -> Result<(), FieldError> {
        let (domain, factor) = match self.role {
            LinkRole::Smeared => (Domain::SmearedLinks, 1.0),
            LinkRole::Naik => (Domain::NaikLinks, scale),
        };
        let storage = self.storage;
        let volume = self.geometry.volume();
        self.data
            .par_chunks_mut(storage.reals())
            .enumerate()
            .try_for_each(|(id, chunk)| {
                let mut rng = stream(seed, domain, id as u64);
                let u: Complex3x3<T> = random_su3::<f64, _>(&mut rng).scale(factor).cast();
                match storage {
                    LinkStorage::Full18 => chunk.copy_from_slice(&u.to_reals()),
                    LinkStorage::R14 => {
                        let c = compress_r14(&u).map_err(|source| FieldError::Compression {
                            dir: id / volume,
                            site: id % volume,
                            source,
                        })?;
                        chunk.copy_from_slice(&c.reals);
                    }
                }
                Ok(())
            })
    }

    pub(crate) fn from_raw(
        geometry: LatticeGeometry,
        role: LinkRole,
        storage: LinkStorage,
        data: Vec<T>,
    ) -> Self {
        LinkField { geometry, role, storage, data }
    }
}

/// Convenience: a random smeared field and a random Naik field.
pub fn random_link_pair<T: Real>(
    geometry: &LatticeGeometry,
    naik_storage: LinkStorage,
    seed: u64,
    naik_scale: f64,
) -> Result<(LinkField<T>, LinkField<T>), FieldError> {
    let mut fat = LinkField::new(geometry, LinkRole::Smeared, LinkStorage::Full18)?;
    fat.fill_random_links(seed, 1.0)?;
    let mut naik = LinkField::new(geometry, LinkRole::Naik, naik_storage)?;
    naik.fill_random_links(seed, naik_scale)?;
    Ok((fat, naik))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Independent standard normal real and imaginary parts.
    Gaussian,
    /// Real ±1 per complex component.
    Z2,
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "z2" => Ok(NoiseKind::Z2),
            other => Err(format!("unknown noise '{other}' (expected z2|gaussian)")),
        }
    }
}

#[inline(always)]
pub fn load_vector<T: Real>(map: &LayoutMap, data: &[T], site: usize) -> ColorVector<T> {
    let b = map.base(site);
    let s = map.stride();
    ColorVector {
        c: [
            Complex::new(data[b], data[b + s]),
            Complex::new(data[b + 2 * s], data[b + 3 * s]),
            Complex::new(data[b + 4 * s], data[b + 5 * s]),
        ],
    }
}

#[inline(always)]
pub fn store_vector<T: Real>(map: &LayoutMap, data: &mut [T], site: usize, v: &ColorVector<T>) {
    let b = map.base(site);
    let s = map.stride();
    for (k, z) in v.c.iter().enumerate() {
        data[b + 2 * k * s] = z.re;
        data[b + (2 * k + 1) * s] = z.im;
    }
}

/// `n` color-vector fields sharing geometry and layout.
#[derive(Clone, Debug)]
pub struct VectorBundle<T> {
    map: Arc<LayoutMap>,
    rhs: Vec<Vec<T>>,
}

impl<T: Real> VectorBundle<T> {
    pub fn new(geometry: &LatticeGeometry, n_rhs: usize, layout: Layout) -> Result<Self, FieldError> {
        Self::with_map(Arc::new(LayoutMap::new(geometry, layout)?), n_rhs)
    }

    pub fn with_map(map: Arc<LayoutMap>, n_rhs: usize) -> Result<Self, FieldError> {
        let rhs = (0..n_rhs).map(|_| try_zeroed(map.len())).collect::<Result<_, _>>()?;
        Ok(VectorBundle { map, rhs })
    }

    /// Builds a bundle from existing storage; each vector must have `map.len()` reals.
    pub fn from_parts(map: Arc<LayoutMap>, rhs: Vec<Vec<T>>) -> Self {
        assert!(rhs.iter().all(|v| v.len() == map.len()), "field length must match layout");
        VectorBundle { map, rhs }
    }

    pub fn into_parts(self) -> (Arc<LayoutMap>, Vec<Vec<T>>) {
        (self.map, self.rhs)
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        self.map.geometry()
    }

    pub fn layout(&self) -> Layout {
        self.map.layout()
    }

    pub fn map(&self) -> &Arc<LayoutMap> {
        &self.map
    }

    pub fn n_rhs(&self) -> usize {
        self.rhs.len()
    }

    pub fn rhs(&self, i: usize) -> &[T] {
        &self.rhs[i]
    }

    pub fn rhs_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.rhs[i]
    }

    pub fn fields(&self) -> &[Vec<T>] {
        &self.rhs
    }

    pub fn fields_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.rhs
    }

    pub fn get(&self, rhs: usize, site: usize) -> ColorVector<T> {
        load_vector(&self.map, &self.rhs[rhs], site)
    }

    pub fn set(&mut self, rhs: usize, site: usize, v: &ColorVector<T>) {
        store_vector(&self.map, &mut self.rhs[rhs], site, v)
    }

    /// Fills every vector; vector `i` uses noise stream `first_index + i`.
    pub fn fill_random_rhs(&mut self, seed: u64, noise: NoiseKind) {
        self.fill_random_rhs_from(seed, noise, 0)
    }

    /// Like [`VectorBundle::fill_random_rhs`] but numbering the vectors from
    /// `first_index`, so a batch of a longer sequence reproduces exactly the
    /// vectors a sequential fill would give.
    pub fn fill_random_rhs_from(&mut self, seed: u64, noise: NoiseKind, first_index: u64) {
        let volume = self.geometry().volume();
        let map = Arc::clone(&self.map);
        for (i, field) in self.rhs.iter_mut().enumerate() {
            let vector_id = first_index + i as u64;
            let site_major: Vec<ColorVector<T>> = (0..volume)
                .into_par_iter()
                .map(|site| {
                    let mut rng = stream(seed, Domain::Noise, vector_id * volume as u64 + site as u64);
                    random_color_vector(&mut rng, noise)
                })
                .collect();
            for (site, v) in site_major.iter().enumerate() {
                store_vector(&map, field, site, v);
            }
        }
    }

    /// Value-preserving permutation into another layout.
    pub fn convert_layout(&self, target: Layout) -> Result<Self, FieldError> {
        let map = Arc::new(LayoutMap::new(self.geometry(), target)?);
        let mut out = VectorBundle::with_map(Arc::clone(&map), self.n_rhs())?;
        for (src, dst) in self.rhs.iter().zip(out.rhs.iter_mut()) {
            for site in 0..self.geometry().volume() {
                store_vector(&map, dst, site, &load_vector(&self.map, src, site));
            }
        }
        Ok(out)
    }

    /// Complex vector of length `3V` ordered `(site, color)`, widened to f64.
    pub fn to_site_major(&self, rhs: usize) -> Vec<Complex<f64>> {
        let mut out = Vec::with_capacity(3 * self.geometry().volume());
        for site in 0..self.geometry().volume() {
            let v = self.get(rhs, site);
            out.extend(v.c.iter().map(|z| Complex::new(z.re.as_f64(), z.im.as_f64())));
        }
        out
    }

    pub fn set_site_major(&mut self, rhs: usize, values: &[Complex<f64>]) {
        assert_eq!(values.len(), 3 * self.geometry().volume());
        for site in 0..self.geometry().volume() {
            let z = |k: usize| {
                let c = values[3 * site + k];
                Complex::new(T::of_f64(c.re), T::of_f64(c.im))
            };
            let v = ColorVector::new(z(0), z(1), z(2));
            self.set(rhs, site, &v);
        }
    }

    /// True when both bundles hold bit-identical values at every site.
    pub fn bit_equal(&self, other: &Self) -> bool {
        if self.geometry() != other.geometry() || self.n_rhs() != other.n_rhs() {
            return false;
        }
        (0..self.n_rhs()).all(|i| {
            (0..self.geometry().volume()).all(|site| {
                let (a, b) = (self.get(i, site), other.get(i, site));
                a.c.iter()
                    .zip(b.c.iter())
                    .all(|(x, y)| x.re.bits() == y.re.bits() && x.im.bits() == y.im.bits())
            })
        })
    }

    /// FNV-1a over the site-major little-endian bytes of every vector.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.n_rhs() * self.map.len() * 8);
        for i in 0..self.n_rhs() {
            for site in 0..self.geometry().volume() {
                for z in self.get(i, site).c {
                    z.re.write_le(&mut bytes);
                    z.im.write_le(&mut bytes);
                }
            }
        }
        fnv1a64(&bytes)
    }
}

fn random_color_vector<T: Real, R: Rng>(rng: &mut R, noise: NoiseKind) -> ColorVector<T> {
    let mut v = ColorVector::zero();
    for z in v.c.iter_mut() {
        *z = match noise {
            NoiseKind::Gaussian => {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(T::of_f64(re), T::of_f64(im))
            }
            NoiseKind::Z2 => {
                let sign = if rng.random::<bool>() { T::one() } else { -T::one() };
                Complex::new(sign, T::zero())
            }
        };
    }
    v
}
