use rayon::prelude::*;

use super::{DslashSpec, Fault};
use crate::algebra::{mat_dagger_vec, mat_vec, ColorVector, Complex3x3};
use crate::fields::{load_vector, LayoutMap, LinkField};
use crate::lattice::{Hop, HopKind, HOPS_PER_DIR, HOPS_PER_SITE, NDIM};
use crate::real::Real;

/// Real coefficient of every `(direction, hop kind)` term.
///
/// The standard operator uses `+1` for forward and `−1` for backward hops;
/// those are applied as additions and subtractions. Any other table is
/// applied by scaling the hopped term, and zero entries drop the term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopCoefficients<T> {
    pub coeff: [[T; HOPS_PER_DIR]; NDIM],
    unit: bool,
}

impl<T: Real> HopCoefficients<T> {
    pub(crate) fn standard(fault: Option<Fault>) -> Self {
        let one = T::one();
        let mut coeff = [[one, -one, one, -one]; NDIM];
        if fault == Some(Fault::FlipBackwardSmearedSign) {
            for row in coeff.iter_mut() {
                row[HopKind::Backward1 as usize] = one;
            }
        }
        HopCoefficients { coeff, unit: true }
    }

    pub fn weighted(coeff: [[T; HOPS_PER_DIR]; NDIM]) -> Self {
        HopCoefficients { coeff, unit: false }
    }

    /// k-th derivative in `mu` of the operator with chemical potential `mu`.
    ///
    /// Temporal hops of signed length `d` carry `±d^k e^{d·mu}` (the sign is
    /// the usual backward minus); spatial hops are kept only for `k = 0`.
    /// `mu = 0, k = 0` gives the standard table.
    pub fn chemical(mu: f64, k: u32) -> Self {
        if mu == 0.0 && k == 0 {
            return Self::standard(None);
        }
        let mut coeff = [[T::zero(); HOPS_PER_DIR]; NDIM];
        if k == 0 {
            for row in coeff.iter_mut().take(NDIM - 1) {
                *row = [T::one(), -T::one(), T::one(), -T::one()];
            }
        }
        for kind in HopKind::ALL {
            let d = kind.displacement() as f64;
            let sign = if kind.is_forward() { 1.0 } else { -1.0 };
            coeff[NDIM - 1][kind as usize] = T::of_f64(sign * d.powi(k as i32) * (d * mu).exp());
        }
        Self::weighted(coeff)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Part {
    Smeared,
    Naik,
}

impl Part {
    fn kinds(self) -> [HopKind; 2] {
        match self {
            Part::Smeared => [HopKind::Forward1, HopKind::Backward1],
            Part::Naik => [HopKind::Forward3, HopKind::Backward3],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pass {
    /// Both parts, `w = smeared + naik`.
    Full,
    /// Split mode, first pass: `w = smeared`.
    Smeared,
    /// Split mode, second pass: `w = w + naik`.
    NaikAccumulate,
}

/// Output base pointers shared across worker threads.
#[derive(Clone, Copy)]
struct OutPtr<T>(*mut T);

// SAFETY: the pointers are only dereferenced at offsets of the site being
// processed. The layout map is a bijection from (site, component) to
// offsets and every site belongs to exactly one tile, so no two threads
// touch the same element.
unsafe impl<T: Send> Send for OutPtr<T> {}
unsafe impl<T: Send> Sync for OutPtr<T> {}

/// Both links needed for one direction of a part: the forward link at `x`
/// and the backward link at the hop target.
type PartLinks<T> = [Complex3x3<T>; 2 * NDIM];

#[inline(always)]
fn load_links<T: Real>(field: &LinkField<T>, site: usize, hops: &[Hop; HOPS_PER_SITE], part: Part) -> PartLinks<T> {
    let back = part.kinds()[1] as usize;
    let mut links = [Complex3x3::zero(); 2 * NDIM];
    for mu in 0..NDIM {
        links[2 * mu] = field.link(mu, site);
        links[2 * mu + 1] = field.link(mu, hops[mu * HOPS_PER_DIR + back].site as usize);
    }
    links
}

#[inline(always)]
fn part_sum<T: Real>(
    links: &PartLinks<T>,
    hops: &[Hop; HOPS_PER_SITE],
    coeffs: &HopCoefficients<T>,
    part: Part,
    map: &LayoutMap,
    input: &[T],
) -> ColorVector<T> {
    let mut acc: Option<ColorVector<T>> = None;
    for mu in 0..NDIM {
        for (j, kind) in part.kinds().into_iter().enumerate() {
            let c = coeffs.coeff[mu][kind as usize];
            if c == T::zero() {
                continue;
            }
            let hop = hops[mu * HOPS_PER_DIR + kind as usize];
            let v = load_vector(map, input, hop.site as usize);
            let mv = if j == 0 {
                mat_vec(&links[2 * mu], &v)
            } else {
                mat_dagger_vec(&links[2 * mu + 1], &v)
            };
            acc = Some(if coeffs.unit {
                let negative = (c < T::zero()) ^ hop.negate;
                match (acc, negative) {
                    (None, false) => mv,
                    (None, true) => -mv,
                    (Some(a), false) => a + mv,
                    (Some(a), true) => a - mv,
                }
            } else {
                let term = mv.scale(if hop.negate { -c } else { c });
                match acc {
                    None => term,
                    Some(a) => a + term,
                }
            });
        }
    }
    acc.unwrap_or_default()
}

/// # Safety
/// `out` must point to a field of `map.len()` elements and no other thread
/// may access the components of `site` concurrently.
#[inline(always)]
unsafe fn store_raw<T: Real>(out: OutPtr<T>, map: &LayoutMap, site: usize, v: &ColorVector<T>) {
    let b = map.base(site);
    let s = map.stride();
    for (k, z) in v.c.iter().enumerate() {
        *out.0.add(b + 2 * k * s) = z.re;
        *out.0.add(b + (2 * k + 1) * s) = z.im;
    }
}

/// # Safety
/// Same contract as [`store_raw`].
#[inline(always)]
unsafe fn load_raw<T: Real>(out: OutPtr<T>, map: &LayoutMap, site: usize) -> ColorVector<T> {
    let b = map.base(site);
    let s = map.stride();
    let mut v = ColorVector::zero();
    for (k, z) in v.c.iter_mut().enumerate() {
        z.re = *out.0.add(b + 2 * k * s);
        z.im = *out.0.add(b + (2 * k + 1) * s);
    }
    v
}

/// Sites per parallel task floor, so tiny tiles do not become tiny tasks.
const MIN_SITES_PER_TASK: usize = 256;

pub(super) fn run<T: Real>(
    spec: &DslashSpec<T>,
    coeffs: &HopCoefficients<T>,
    map: &LayoutMap,
    inputs: &[&[T]],
    outputs: &mut [&mut [T]],
) {
    let outs: Vec<OutPtr<T>> = outputs.iter_mut().map(|o| OutPtr(o.as_mut_ptr())).collect();
    if spec.split_kernels {
        sweep(spec, coeffs, map, inputs, &outs, Pass::Smeared);
        sweep(spec, coeffs, map, inputs, &outs, Pass::NaikAccumulate);
    } else {
        sweep(spec, coeffs, map, inputs, &outs, Pass::Full);
    }
}

fn sweep<T: Real>(
    spec: &DslashSpec<T>,
    coeffs: &HopCoefficients<T>,
    map: &LayoutMap,
    inputs: &[&[T]],
    outs: &[OutPtr<T>],
    pass: Pass,
) {
    let volume = spec.geometry().volume();
    let n = inputs.len();
    let (chunk, tile) = spec.strategy.chunk_and_tile();
    let chunk = chunk.min(n.max(1));
    let n_tiles = volume.div_ceil(tile);
    let min_tiles = MIN_SITES_PER_TASK.div_ceil(tile).max(1);
    let neighbors = spec.neighbors();

    (0..n_tiles)
        .into_par_iter()
        .with_min_len(min_tiles)
        .for_each_init(
            || vec![ColorVector::<T>::zero(); chunk],
            |partial, t| {
                let sites = t * tile..((t + 1) * tile).min(volume);
                for c0 in (0..n).step_by(chunk) {
                    let c1 = (c0 + chunk).min(n);
                    for x in sites.clone() {
                        let hops = neighbors.site_hops(x);
                        match pass {
                            Pass::Full => {
                                let links = load_links(spec.fat(), x, hops, Part::Smeared);
                                for i in c0..c1 {
                                    partial[i - c0] = part_sum(&links, hops, coeffs, Part::Smeared, map, inputs[i]);
                                }
                                let links = load_links(spec.naik(), x, hops, Part::Naik);
                                for i in c0..c1 {
                                    let w = partial[i - c0] + part_sum(&links, hops, coeffs, Part::Naik, map, inputs[i]);
                                    // SAFETY: `x` is owned by this tile (see `OutPtr`).
                                    unsafe { store_raw(outs[i], map, x, &w) };
                                }
                            }
                            Pass::Smeared => {
                                let links = load_links(spec.fat(), x, hops, Part::Smeared);
                                for i in c0..c1 {
                                    let w = part_sum(&links, hops, coeffs, Part::Smeared, map, inputs[i]);
                                    // SAFETY: `x` is owned by this tile.
                                    unsafe { store_raw(outs[i], map, x, &w) };
                                }
                            }
                            Pass::NaikAccumulate => {
                                let links = load_links(spec.naik(), x, hops, Part::Naik);
                                for i in c0..c1 {
                                    let b = part_sum(&links, hops, coeffs, Part::Naik, map, inputs[i]);
                                    // SAFETY: `x` is owned by this tile.
                                    unsafe {
                                        let a = load_raw(outs[i], map, x);
                                        store_raw(outs[i], map, x, &(a + b));
                                    }
                                }
                            }
                        }
                    }
                }
            },
        );
}
