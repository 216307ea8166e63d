//! Color algebra: 3×3 complex link matrices, 3-component color vectors,
//! random SU(3) generation and 14-real compression of scaled-unitary links.

use std::ops::{Add, Neg, Sub};

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::real::Real;

/// Flops of one complex multiply.
pub const COMPLEX_MUL_FLOPS: u64 = 6;
/// Flops of one complex add.
pub const COMPLEX_ADD_FLOPS: u64 = 2;
/// One 3×3 matrix times color vector: 9 multiplies and 6 adds.
pub const MAT_VEC_FLOPS: u64 = 9 * COMPLEX_MUL_FLOPS + 6 * COMPLEX_ADD_FLOPS;
/// Adding two color vectors.
pub const COLOR_ADD_FLOPS: u64 = 3 * COMPLEX_ADD_FLOPS;
/// `y += a·x` on a color vector with complex `a`.
pub const COLOR_AXPY_FLOPS: u64 = 3 * (COMPLEX_MUL_FLOPS + COMPLEX_ADD_FLOPS);
/// Rebuilding the third row of an r14 link (cross product, conjugation, phase and scale).
pub const R14_RECONSTRUCT_FLOPS: u64 = 3 * (2 * COMPLEX_MUL_FLOPS + COMPLEX_ADD_FLOPS) + 3 * COMPLEX_MUL_FLOPS;

/// Reals in an uncompressed link.
pub const FULL_LINK_REALS: usize = 18;
/// Reals in an r14-compressed link.
pub const R14_LINK_REALS: usize = 14;

/// Relative tolerance on `N†N = s²·I` accepted by [`compress_r14`].
pub const R14_UNITARITY_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum AlgebraError {
    #[error("matrix is not scaled-unitary: |N†N - s²I| reaches {deviation:.3e} at ({row},{col}) (s² = {scale_sq:.6e})")]
    NotScaledUnitary { deviation: f64, row: usize, col: usize, scale_sq: f64 },
    #[error("r14 scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Row-major 3×3 complex matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complex3x3<T> {
    pub m: [Complex<T>; 9],
}

/// Three complex color components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorVector<T> {
    pub c: [Complex<T>; 3],
}

impl<T: Real> Default for Complex3x3<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> Complex3x3<T> {
    pub fn zero() -> Self {
        Complex3x3 { m: [Complex::new(T::zero(), T::zero()); 9] }
    }

    pub fn identity() -> Self {
        Self::diagonal(Complex::new(T::one(), T::zero()))
    }

    pub fn diagonal(d: Complex<T>) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            out.m[4 * i] = d;
        }
        out
    }

    #[inline(always)]
    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.m[3 * row + col]
    }

    #[inline(always)]
    pub fn set(&mut self, row: usize, col: usize, v: Complex<T>) {
        self.m[3 * row + col] = v;
    }

    pub fn row(&self, row: usize) -> [Complex<T>; 3] {
        [self.m[3 * row], self.m[3 * row + 1], self.m[3 * row + 2]]
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> Self {
        let mut out = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                out.m[3 * r + c] = self.m[3 * c + r].conj();
            }
        }
        out
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let mut out = Self::zero();
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..3 {
                    acc = acc + self.get(r, k) * rhs.get(k, c);
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for e in out.m.iter_mut() {
            *e = *e * s;
        }
        out
    }

    pub fn det(&self) -> Complex<T> {
        let g = |r, c| self.get(r, c);
        g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
            - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
            + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0))
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (*a - *b).norm().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Interleaved `(re, im)` in row-major order.
    pub fn to_reals(&self) -> [T; FULL_LINK_REALS] {
        let mut out = [T::zero(); FULL_LINK_REALS];
        for (i, z) in self.m.iter().enumerate() {
            out[2 * i] = z.re;
            out[2 * i + 1] = z.im;
        }
        out
    }

    pub fn from_reals(r: &[T]) -> Self {
        let mut out = Self::zero();
        for i in 0..9 {
            out.m[i] = Complex::new(r[2 * i], r[2 * i + 1]);
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Complex3x3<U> {
        let mut out = Complex3x3::<U>::zero();
        for (o, z) in out.m.iter_mut().zip(self.m.iter()) {
            *o = Complex::new(U::of_f64(z.re.as_f64()), U::of_f64(z.im.as_f64()));
        }
        out
    }
}

impl<T: Real> Default for ColorVector<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> ColorVector<T> {
    pub fn zero() -> Self {
        ColorVector { c: [Complex::new(T::zero(), T::zero()); 3] }
    }

    pub fn new(c0: Complex<T>, c1: Complex<T>, c2: Complex<T>) -> Self {
        ColorVector { c: [c0, c1, c2] }
    }

    /// Multiply by a real scalar.
    #[inline(always)]
    pub fn scale(self, s: T) -> Self {
        ColorVector { c: [self.c[0] * s, self.c[1] * s, self.c[2] * s] }
    }

    /// Squared Euclidean norm.
    pub fn norm_sqr(&self) -> T {
        self.c.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr())
    }

    /// `self† · other`.
    pub fn dot(&self, other: &Self) -> Complex<T> {
        self.c
            .iter()
            .zip(other.c.iter())
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b)
    }
}

impl<T: Real> Add for ColorVector<T> {
    type Output = Self;

    #[inline(always)]
    fn add(self, o: Self) -> Self {
        ColorVector { c: [self.c[0] + o.c[0], self.c[1] + o.c[1], self.c[2] + o.c[2]] }
    }
}

impl<T: Real> Sub for ColorVector<T> {
    type Output = Self;

    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        ColorVector { c: [self.c[0] - o.c[0], self.c[1] - o.c[1], self.c[2] - o.c[2]] }
    }
}

impl<T: Real> Neg for ColorVector<T> {
    type Output = Self;

    #[inline(always)]
    fn neg(self) -> Self {
        ColorVector { c: [-self.c[0], -self.c[1], -self.c[2]] }
    }
}

/// `M·v`.
#[inline(always)]
pub fn mat_vec<T: Real>(m: &Complex3x3<T>, v: &ColorVector<T>) -> ColorVector<T> {
    let row = |r: usize| m.m[3 * r] * v.c[0] + m.m[3 * r + 1] * v.c[1] + m.m[3 * r + 2] * v.c[2];
    ColorVector { c: [row(0), row(1), row(2)] }
}

/// `M†·v` without forming `M†`.
#[inline(always)]
pub fn mat_dagger_vec<T: Real>(m: &Complex3x3<T>, v: &ColorVector<T>) -> ColorVector<T> {
    let col = |c: usize| {
        m.m[c].conj() * v.c[0] + m.m[3 + c].conj() * v.c[1] + m.m[6 + c].conj() * v.c[2]
    };
    ColorVector { c: [col(0), col(1), col(2)] }
}

fn gaussian_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex<f64> {
    Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Random SU(3) matrix: Gram-Schmidt on three Gaussian complex rows, then the
/// third row is rotated so the determinant is exactly one (up to rounding).
/// Generation runs in f64 and the result is cast to the working precision.
pub fn random_su3<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Complex3x3<T> {
    random_su3_f64(rng).cast()
}

fn random_su3_f64<R: Rng + ?Sized>(rng: &mut R) -> Complex3x3<f64> {
    loop {
        let mut rows = [[Complex::new(0.0, 0.0); 3]; 3];
        for row in rows.iter_mut() {
            for z in row.iter_mut() {
                *z = gaussian_complex(rng);
            }
        }
        let mut degenerate = false;
        for i in 0..3 {
            // Two projection passes keep the rows orthogonal to rounding even
            // when the random draws are nearly dependent.
            for _ in 0..2 {
                for j in 0..i {
                    let proj: Complex<f64> =
                        (0..3).map(|k| rows[j][k].conj() * rows[i][k]).sum();
                    for k in 0..3 {
                        let sub = proj * rows[j][k];
                        rows[i][k] -= sub;
                    }
                }
            }
            let norm = rows[i].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm < 1e-6 {
                degenerate = true;
                break;
            }
            for z in rows[i].iter_mut() {
                *z /= norm;
            }
        }
        if degenerate {
            continue;
        }
        let mut u = Complex3x3 { m: [Complex::new(0.0, 0.0); 9] };
        for r in 0..3 {
            for c in 0..3 {
                u.set(r, c, rows[r][c]);
            }
        }
        let phase = u.det().conj() / u.det().norm();
        for c in 0..3 {
            let z = u.get(2, c) * phase;
            u.set(2, c, z);
        }
        return u;
    }
}

/// A scaled-unitary link stored as two rows, scale and determinant phase.
///
/// Layout: `[row0 (re,im)×3, row1 (re,im)×3, s, φ]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct R14Link<T> {
    pub reals: [T; R14_LINK_REALS],
}

impl<T: Real> R14Link<T> {
    pub fn scale(&self) -> T {
        self.reals[12]
    }

    pub fn det_phase(&self) -> T {
        self.reals[13]
    }

    pub fn from_reals(r: &[T]) -> Self {
        let mut reals = [T::zero(); R14_LINK_REALS];
        reals.copy_from_slice(&r[..R14_LINK_REALS]);
        R14Link { reals }
    }
}

/// Compresses `N = s·W` (W unitary) into 14 reals.
pub fn compress_r14<T: Real>(n: &Complex3x3<T>) -> Result<R14Link<T>, AlgebraError> {
    let nd: Complex3x3<f64> = n.cast();
    let gram = nd.dagger().mul(&nd);
    let scale_sq = (0..3).map(|i| gram.get(i, i).re).sum::<f64>() / 3.0;
    let tol = R14_UNITARITY_TOL * scale_sq.max(f64::MIN_POSITIVE);
    let mut worst = (0.0, 0, 0);
    for r in 0..3 {
        for c in 0..3 {
            let target = if r == c { scale_sq } else { 0.0 };
            let dev = (gram.get(r, c) - Complex::new(target, 0.0)).norm();
            if dev > worst.0 {
                worst = (dev, r, c);
            }
        }
    }
    if !(scale_sq > 0.0) || !(worst.0 <= tol) {
        return Err(AlgebraError::NotScaledUnitary {
            deviation: worst.0,
            row: worst.1,
            col: worst.2,
            scale_sq,
        });
    }
    let s = scale_sq.sqrt();
    let phi = nd.det().arg();
    let mut reals = [T::zero(); R14_LINK_REALS];
    reals[..12].copy_from_slice(&n.to_reals()[..12]);
    reals[12] = T::of_f64(s);
    reals[13] = T::of_f64(phi);
    Ok(R14Link { reals })
}

/// Rebuilds the full link: row 2 = (e^{iφ}/s)·conj(row0 × row1).
pub fn reconstruct_r14<T: Real>(c: &R14Link<T>) -> Result<Complex3x3<T>, AlgebraError> {
    let s = c.scale();
    if !(s > T::zero()) {
        return Err(AlgebraError::NonPositiveScale(s.as_f64()));
    }
    Ok(reconstruct_r14_unchecked(c))
}

/// [`reconstruct_r14`] without the scale check, for hot loops over fields
/// whose links were validated on construction.
#[inline(always)]
pub fn reconstruct_r14_unchecked<T: Real>(c: &R14Link<T>) -> Complex3x3<T> {
    let r = &c.reals;
    let a = [
        Complex::new(r[0], r[1]),
        Complex::new(r[2], r[3]),
        Complex::new(r[4], r[5]),
    ];
    let b = [
        Complex::new(r[6], r[7]),
        Complex::new(r[8], r[9]),
        Complex::new(r[10], r[11]),
    ];
    let (sin, cos) = r[13].sin_cos();
    let factor = Complex::new(cos, sin) / r[12];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    Complex3x3 {
        m: [
            a[0],
            a[1],
            a[2],
            b[0],
            b[1],
            b[2],
            factor * cross[0].conj(),
            factor * cross[1].conj(),
            factor * cross[2].conj(),
        ],
    }
}
