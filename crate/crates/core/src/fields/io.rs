//! Binary field files.
//!
//! Little-endian throughout. Header (39 bytes):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 0..4  | magic `HQFD`                              |
//! | 4..8  | format version, u32                       |
//! | 8     | kind: 0 = link, 1 = vector                |
//! | 9     | storage: link 0 = full18, 1 = r14; vector layout 0 = soa, 1/2/3 = fused4/8/16 |
//! | 10    | precision: 0 = f32, 1 = f64               |
//! | 11..27| dims, 4 × u32                             |
//! | 27..31| n_rhs, u32 (0 for link files)             |
//! | 31..39| FNV-1a 64 checksum of the payload         |
//!
//! Link payload: direction-major, site-minor, 18 or 14 reals per link.
//! Vector payload: each right-hand side in turn, raw storage order of its layout.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{FieldError, Layout, LayoutMap, LinkField, LinkRole, LinkStorage, VectorBundle};
use crate::lattice::{LatticeGeometry, NDIM};
use crate::real::Real;

pub const MAGIC: [u8; 4] = *b"HQFD";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 39;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Link = 0,
    Vector = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldFileHeader {
    pub version: u32,
    pub kind: u8,
    pub storage: u8,
    pub precision: u8,
    pub dims: [u32; 4],
    pub n_rhs: u32,
    pub checksum: u64,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub fn encode_header(h: &FieldFileHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..4].copy_from_slice(&MAGIC);
    out[4..8].copy_from_slice(&h.version.to_le_bytes());
    out[8] = h.kind;
    out[9] = h.storage;
    out[10] = h.precision;
    for (i, d) in h.dims.iter().enumerate() {
        out[11 + 4 * i..15 + 4 * i].copy_from_slice(&d.to_le_bytes());
    }
    out[27..31].copy_from_slice(&h.n_rhs.to_le_bytes());
    out[31..39].copy_from_slice(&h.checksum.to_le_bytes());
    out
}

/// Parses and validates magic and version.
pub fn decode_header(bytes: &[u8]) -> Result<FieldFileHeader, FieldError> {
    if bytes.len() < HEADER_LEN {
        return Err(FieldError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FieldError::BadMagic(magic));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(FieldError::UnsupportedVersion(version));
    }
    Ok(FieldFileHeader {
        version,
        kind: bytes[8],
        storage: bytes[9],
        precision: bytes[10],
        dims: [u32_at(11), u32_at(15), u32_at(19), u32_at(23)],
        n_rhs: u32_at(27),
        checksum: u64::from_le_bytes(bytes[31..39].try_into().expect("8 bytes")),
    })
}

fn dims_u32(g: &LatticeGeometry) -> [u32; 4] {
    g.dims().map(|d| d as u32)
}

fn write_file(path: &Path, mut header: FieldFileHeader, payload: &[u8]) -> Result<(), FieldError> {
    header.checksum = fnv1a64(payload);
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
    bytes.extend_from_slice(&encode_header(&header));
    bytes.extend_from_slice(payload);
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads, checks header fields common to both kinds and verifies the checksum.
fn read_checked<T: Real>(
    path: &Path,
    geometry: &LatticeGeometry,
    kind: FieldKind,
) -> Result<(FieldFileHeader, Vec<u8>), FieldError> {
    let mut bytes = fs::read(path)?;
    let header = decode_header(&bytes)?;
    if header.kind != kind as u8 {
        return Err(FieldError::KindMismatch { expected: kind, found: header.kind });
    }
    if header.precision != T::PRECISION.code() {
        return Err(FieldError::PrecisionMismatch { expected: T::PRECISION, found: header.precision });
    }
    let expected = dims_u32(geometry);
    if header.dims != expected {
        return Err(FieldError::DimensionMismatch {
            expected: geometry.dims(),
            found: header.dims.map(|d| d as usize),
        });
    }
    let payload = bytes.split_off(HEADER_LEN);
    let found = fnv1a64(&payload);
    if found != header.checksum {
        return Err(FieldError::ChecksumMismatch { expected: header.checksum, found });
    }
    Ok((header, payload))
}

fn decode_reals<T: Real>(payload: &[u8], count: usize) -> Result<Vec<T>, FieldError> {
    let p = T::PRECISION.bytes() as usize;
    if payload.len() != count * p {
        return Err(FieldError::Truncated { expected: count * p, found: payload.len() });
    }
    Ok(payload.chunks_exact(p).map(T::read_le).collect())
}

pub fn write_link_field<T: Real>(path: impl AsRef<Path>, field: &LinkField<T>) -> Result<(), FieldError> {
    let mut payload = Vec::with_capacity(field.raw_data().len() * T::PRECISION.bytes() as usize);
    for &x in field.raw_data() {
        x.write_le(&mut payload);
    }
    let header = FieldFileHeader {
        version: FORMAT_VERSION,
        kind: FieldKind::Link as u8,
        storage: field.storage().code(),
        precision: T::PRECISION.code(),
        dims: dims_u32(field.geometry()),
        n_rhs: 0,
        checksum: 0,
    };
    write_file(path.as_ref(), header, &payload)
}

/// The role is not part of the file; the caller states which field it expects.
pub fn read_link_field<T: Real>(
    path: impl AsRef<Path>,
    geometry: &LatticeGeometry,
    role: LinkRole,
) -> Result<LinkField<T>, FieldError> {
    let (header, payload) = read_checked::<T>(path.as_ref(), geometry, FieldKind::Link)?;
    let storage = LinkStorage::from_code(header.storage).ok_or(FieldError::BadStorage(header.storage))?;
    if role == LinkRole::Smeared && storage == LinkStorage::R14 {
        return Err(FieldError::SmearedCompressed);
    }
    let data = decode_reals::<T>(&payload, NDIM * geometry.volume() * storage.reals())?;
    if storage == LinkStorage::R14 {
        let volume = geometry.volume();
        if let Some(bad) = data.chunks_exact(storage.reals()).position(|l| !(l[12] > T::zero())) {
            return Err(FieldError::InvalidLink { dir: bad / volume, site: bad % volume });
        }
    }
    Ok(LinkField::from_raw(*geometry, role, storage, data))
}

pub fn write_bundle<T: Real>(path: impl AsRef<Path>, bundle: &VectorBundle<T>) -> Result<(), FieldError> {
    let p = T::PRECISION.bytes() as usize;
    let mut payload = Vec::with_capacity(bundle.n_rhs() * bundle.map().len() * p);
    for field in bundle.fields() {
        for &x in field {
            x.write_le(&mut payload);
        }
    }
    let header = FieldFileHeader {
        version: FORMAT_VERSION,
        kind: FieldKind::Vector as u8,
        storage: bundle.layout().code(),
        precision: T::PRECISION.code(),
        dims: dims_u32(bundle.geometry()),
        n_rhs: bundle.n_rhs() as u32,
        checksum: 0,
    };
    write_file(path.as_ref(), header, &payload)
}

pub fn read_bundle<T: Real>(
    path: impl AsRef<Path>,
    geometry: &LatticeGeometry,
) -> Result<VectorBundle<T>, FieldError> {
    let (header, payload) = read_checked::<T>(path.as_ref(), geometry, FieldKind::Vector)?;
    let layout = Layout::from_code(header.storage).ok_or(FieldError::BadStorage(header.storage))?;
    let map = Arc::new(LayoutMap::new(geometry, layout)?);
    let n = header.n_rhs as usize;
    let all = decode_reals::<T>(&payload, n * map.len())?;
    let rhs = if n == 0 { Vec::new() } else { all.chunks_exact(map.len()).map(<[T]>::to_vec).collect() };
    Ok(VectorBundle::from_parts(map, rhs))
}
