//! Dense reference for tiny lattices.
//!
//! The Dslash matrix is assembled here from the links and the coordinates
//! directly; nothing in this module uses the neighbor table or the blocked
//! kernels, so agreement with them is a real cross-check.

use num_complex::Complex;
use rayon::prelude::*;
use thiserror::Error;

use crate::dslash::DslashSpec;
use crate::lattice::{LatticeGeometry, SiteCoords, TemporalBc, NDIM};
use crate::real::Real;
use crate::traces::{ChainSpec, Insertion};

pub type C64 = Complex<f64>;

/// Largest volume the dense oracle accepts.
pub const MAX_ORACLE_VOLUME: usize = 4096;
/// Steps of the central finite differences in `mu`.
pub const FD_STEP_FIRST: f64 = 1e-6;
pub const FD_STEP_SECOND: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("volume {volume} exceeds the dense oracle limit of {MAX_ORACLE_VOLUME} sites")]
    TooLarge { volume: usize },
    #[error("matrix is singular to working precision (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("matrix is not Hermitian positive definite (column {column})")]
    NotPositiveDefinite { column: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("finite differences are provided for orders 1 and 2, got {0}")]
    UnsupportedOrder(u32),
}

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<C64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, C64::new(1.0, 0.0))
    }

    pub fn scaled_identity(n: usize, s: C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        let data = (0..n * n).map(|k| f(k / n, k % n)).collect();
        DenseMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    fn add_at(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.n + j] += v;
    }

    fn check(&self, other: usize) -> Result<(), OracleError> {
        if self.n != other {
            return Err(OracleError::DimensionMismatch { left: self.n, right: other });
        }
        Ok(())
    }

    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>, OracleError> {
        self.check(v.len())?;
        Ok(self.data.par_chunks(self.n).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect())
    }

    pub fn mul(&self, other: &DenseMatrix) -> Result<DenseMatrix, OracleError> {
        self.check(other.n)?;
        let n = self.n;
        let mut out = Self::zeros(n);
        out.data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for (o, b) in row.iter_mut().zip(&other.data[k * n..(k + 1) * n]) {
                    *o += a * b;
                }
            }
        });
        Ok(out)
    }

    pub fn dagger(&self) -> DenseMatrix {
        Self::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    pub fn scale(&self, s: C64) -> DenseMatrix {
        DenseMatrix { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix, OracleError> {
        self.check(other.n)?;
        Ok(DenseMatrix { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix, OracleError> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Largest element modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.n).map(|j| (0..self.n).map(|i| self.get(i, j).norm()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Dense operator on a lattice, with the mass and chemical potential it was
/// built for.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub matrix: DenseMatrix,
    pub geometry: LatticeGeometry,
    pub mass: Option<f64>,
    pub mu: f64,
}

fn guard(geometry: &LatticeGeometry) -> Result<(), OracleError> {
    if geometry.volume() > MAX_ORACLE_VOLUME {
        return Err(OracleError::TooLarge { volume: geometry.volume() });
    }
    Ok(())
}

/// Site reached from `c` by `d` steps in direction `mu`, and the boundary
/// sign picked up on the way.
fn step(geometry: &LatticeGeometry, c: &SiteCoords, mu: usize, d: i64) -> (usize, f64) {
    let dims = geometry.dims();
    let mut a = c.as_array();
    let n = dims[mu] as i64;
    let raw = a[mu] as i64 + d;
    let wraps = raw.div_euclid(n);
    a[mu] = raw.rem_euclid(n) as usize;
    let antiperiodic = mu == NDIM - 1 && geometry.temporal_bc() == TemporalBc::Antiperiodic;
    let sign = if antiperiodic && wraps % 2 != 0 { -1.0 } else { 1.0 };
    let idx = a[0] + dims[0] * (a[1] + dims[1] * (a[2] + dims[2] * a[3]));
    (idx, sign)
}

/// `∂ᵏD/∂μᵏ` at chemical potential `mu` as a dense `3V × 3V` matrix, placed
/// link by link. `k = 0` is the Dslash itself.
pub fn build_dense_dslash_order<T: Real>(spec: &DslashSpec<T>, mu: f64, k: u32) -> Result<DenseOperator, OracleError> {
    let g = *spec.geometry();
    guard(&g)?;
    let v = g.volume();
    let mut d = DenseMatrix::zeros(3 * v);
    for x in 0..v {
        let c = g.coords(x);
        for dir in 0..NDIM {
            let temporal = dir == NDIM - 1;
            if !temporal && k > 0 {
                continue;
            }
            for (len, field) in [(1i64, spec.fat()), (3, spec.naik())] {
                // w_x += f · U_{x,dir} v_{x+len}
                let (y, sy) = step(&g, &c, dir, len);
                // w_x −= b · U†_{x−len,dir} v_{x−len}
                let (z, sz) = step(&g, &c, dir, -len);
                let (f, b) = if temporal {
                    let l = len as f64;
                    (l.powi(k as i32) * (l * mu).exp(), (-l).powi(k as i32) * (-l * mu).exp())
                } else {
                    (1.0, 1.0)
                };
                let u = field.link(dir, x);
                let w = field.link(dir, z);
                for a in 0..3 {
                    for bb in 0..3 {
                        let uf = u.get(a, bb);
                        d.add_at(3 * x + a, 3 * y + bb, C64::new(uf.re.as_f64(), uf.im.as_f64()) * (sy * f));
                        let ub = w.get(bb, a);
                        d.add_at(3 * x + a, 3 * z + bb, -C64::new(ub.re.as_f64(), -ub.im.as_f64()) * (sz * b));
                    }
                }
            }
        }
    }
    Ok(DenseOperator { matrix: d, geometry: g, mass: None, mu })
}

/// Dense Dslash at chemical potential `mu`.
pub fn build_dense_dslash<T: Real>(spec: &DslashSpec<T>, mu: f64) -> Result<DenseOperator, OracleError> {
    build_dense_dslash_order(spec, mu, 0)
}

/// `∂ᵏD/∂μᵏ` by central differences of the dense Dslash (orders 1 and 2).
pub fn finite_difference_derivative<T: Real>(
    spec: &DslashSpec<T>,
    mu: f64,
    order: u32,
) -> Result<DenseMatrix, OracleError> {
    let at = |m: f64| build_dense_dslash(spec, m).map(|d| d.matrix);
    match order {
        1 => {
            let h = FD_STEP_FIRST;
            Ok(at(mu + h)?.sub(&at(mu - h)?)?.scale(C64::new(0.5 / h, 0.0)))
        }
        2 => {
            let h = FD_STEP_SECOND;
            let two_mid = at(mu)?.scale(C64::new(2.0, 0.0));
            Ok(at(mu + h)?.add(&at(mu - h)?)?.sub(&two_mid)?.scale(C64::new(1.0 / (h * h), 0.0)))
        }
        k => Err(OracleError::UnsupportedOrder(k)),
    }
}

/// `M = m + D`.
pub fn fermion_matrix(d: &DenseOperator, mass: f64) -> DenseOperator {
    let n = d.matrix.dim();
    let matrix = d.matrix.add(&DenseMatrix::scaled_identity(n, C64::new(mass, 0.0))).expect("same dimension");
    DenseOperator { matrix, geometry: d.geometry, mass: Some(mass), mu: d.mu }
}

/// `M†M` for `M = m + D`.
pub fn normal_matrix(d: &DenseOperator, mass: f64) -> DenseMatrix {
    let m = fermion_matrix(d, mass).matrix;
    m.dagger().mul(&m).expect("same dimension")
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct LuFactor {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactor {
    pub fn new(a: &DenseMatrix) -> Result<Self, OracleError> {
        let n = a.dim();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu.get(i, k).norm().total_cmp(&lu.get(j, k).norm()))
                .expect("non-empty range");
            if lu.get(p, k).norm() <= scale * f64::EPSILON * n as f64 {
                return Err(OracleError::Singular { pivot: k });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu.get(k, k);
            let (top, rest) = lu.data.split_at_mut((k + 1) * n);
            let row_k = &top[k * n..];
            rest.par_chunks_mut(n).for_each(|row| {
                let f = row[k] / pivot;
                row[k] = f;
                if f != C64::new(0.0, 0.0) {
                    for j in k + 1..n {
                        row[j] -= f * row_k[j];
                    }
                }
            });
        }
        Ok(LuFactor { lu, perm })
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>, OracleError> {
        let n = self.lu.dim();
        self.lu.check(b.len())?;
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: C64 = (0..i).map(|j| self.lu.get(i, j) * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: C64 = (i + 1..n).map(|j| self.lu.get(i, j) * x[j]).sum();
            x[i] = (x[i] - s) / self.lu.get(i, i);
        }
        Ok(x)
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.lu.dim();
        let cols: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![C64::new(0.0, 0.0); n];
                e[j] = C64::new(1.0, 0.0);
                self.solve(&e).expect("dimension checked")
            })
            .collect();
        DenseMatrix::from_fn(n, |i, j| cols[j][i])
    }
}

/// Solution of `A x = b` and the 1-norm condition number `‖A‖₁‖A⁻¹‖₁`.
pub fn dense_solve(a: &DenseMatrix, b: &[C64]) -> Result<(Vec<C64>, f64), OracleError> {
    let lu = LuFactor::new(a)?;
    let x = lu.solve(b)?;
    let cond = a.norm_1() * lu.inverse().norm_1();
    Ok((x, cond))
}

/// Cholesky factor `L` of a Hermitian positive definite matrix (`A = L L†`).
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix, OracleError> {
    let n = a.dim();
    let mut l = DenseMatrix::zeros(n);
    for j in 0..n {
        let s: f64 = (0..j).map(|k| l.get(j, k).norm_sqr()).sum();
        let d = a.get(j, j).re - s;
        if !(d > 0.0) {
            return Err(OracleError::NotPositiveDefinite { column: j });
        }
        let d = d.sqrt();
        l.set(j, j, C64::new(d, 0.0));
        for i in j + 1..n {
            let s: C64 = (0..j).map(|k| l.get(i, k) * l.get(j, k).conj()).sum();
            l.set(i, j, (a.get(i, j) - s) / d);
        }
    }
    Ok(l)
}

/// True if every eigenvalue of the Hermitian matrix `a` exceeds `bound`.
pub fn min_eigenvalue_exceeds(a: &DenseMatrix, bound: f64) -> bool {
    let shifted = a.sub(&DenseMatrix::scaled_identity(a.dim(), C64::new(bound, 0.0))).expect("same dimension");
    cholesky(&shifted).is_ok()
}

/// `Tr(chain)` with `M = m + D(μ)` and analytic `μ`-derivatives, by dense
/// products.
pub fn dense_trace_chain<T: Real>(chain: &ChainSpec, spec: &DslashSpec<T>, mass: f64) -> Result<C64, OracleError> {
    let d = build_dense_dslash(spec, chain.mu)?;
    let m = fermion_matrix(&d, mass);
    let inverse = LuFactor::new(&m.matrix)?.inverse();
    let mut product: Option<DenseMatrix> = None;
    for ins in chain.insertions() {
        let factor = match *ins {
            Insertion::Inverse => inverse.clone(),
            Insertion::Derivative(k) => build_dense_dslash_order(spec, chain.mu, k)?.matrix,
        };
        product = Some(match product {
            None => factor,
            Some(p) => p.mul(&factor)?,
        });
    }
    Ok(product.map(|p| p.trace()).unwrap_or_default())
}

/// `Tr(A₁ A₂ … )` for explicit matrices.
pub fn trace_of_product(factors: &[&DenseMatrix]) -> Result<C64, OracleError> {
    let Some((first, rest)) = factors.split_first() else {
        return Ok(C64::new(0.0, 0.0));
    };
    let mut p = (*first).clone();
    for f in rest {
        p = p.mul(f)?;
    }
    Ok(p.trace())
}
