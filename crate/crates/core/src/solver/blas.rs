//! BLAS-1 kernels on single-rhs fields.
//!
//! Reductions accumulate in f64 over fixed chunks and combine the chunk sums
//! pairwise, so results do not depend on the thread count.

use num_complex::Complex;
use rayon::prelude::*;

use super::SolverError;
use crate::fields::{load_vector, LayoutMap};
use crate::real::Real;

/// Reals per leaf of the reduction tree.
pub const REDUCTION_CHUNK: usize = 1024;
/// Elementwise kernels below this length run on one thread.
const PAR_MIN: usize = 1 << 14;

fn same_len(a: usize, b: usize) -> Result<(), SolverError> {
    if a != b {
        return Err(SolverError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

/// Pairwise sum of `parts` in a fixed order.
pub fn tree_sum<S: Copy + std::ops::Add<Output = S>>(mut parts: Vec<S>, zero: S) -> S {
    if parts.is_empty() {
        return zero;
    }
    while parts.len() > 1 {
        parts = parts.chunks(2).map(|p| if p.len() == 2 { p[0] + p[1] } else { p[0] }).collect();
    }
    parts[0]
}

fn reduce<T: Real>(x: &[T], y: &[T], leaf: impl Fn(&[T], &[T]) -> f64 + Sync) -> f64 {
    let parts: Vec<f64> = x
        .par_chunks(REDUCTION_CHUNK)
        .zip(y.par_chunks(REDUCTION_CHUNK))
        .map(|(a, b)| leaf(a, b))
        .collect();
    tree_sum(parts, 0.0)
}

fn elementwise<T: Real>(x: &[T], y: &mut [T], f: impl Fn(T, T) -> T + Sync + Send) {
    if y.len() < PAR_MIN {
        y.iter_mut().zip(x).for_each(|(b, &a)| *b = f(a, *b));
    } else {
        y.par_iter_mut().zip(x.par_iter()).for_each(|(b, &a)| *b = f(a, *b));
    }
}

/// `y ← α x + y`.
pub fn axpy<T: Real>(alpha: f64, x: &[T], y: &mut [T]) -> Result<(), SolverError> {
    same_len(x.len(), y.len())?;
    let a = T::of_f64(alpha);
    elementwise(x, y, |xi, yi| a * xi + yi);
    Ok(())
}

/// `y ← x + β y`.
pub fn xpay<T: Real>(x: &[T], beta: f64, y: &mut [T]) -> Result<(), SolverError> {
    same_len(x.len(), y.len())?;
    let b = T::of_f64(beta);
    elementwise(x, y, |xi, yi| xi + b * yi);
    Ok(())
}

/// `y ← x − y`, returning `‖y‖²`.
pub fn xmy_norm<T: Real>(x: &[T], y: &mut [T]) -> Result<f64, SolverError> {
    same_len(x.len(), y.len())?;
    elementwise(x, y, |xi, yi| xi - yi);
    Ok(norm_sqr(y))
}

/// `x ← α x`.
pub fn scale<T: Real>(alpha: f64, x: &mut [T]) {
    let a = T::of_f64(alpha);
    if x.len() < PAR_MIN {
        x.iter_mut().for_each(|v| *v = a * *v);
    } else {
        x.par_iter_mut().for_each(|v| *v = a * *v);
    }
}

pub fn norm_sqr<T: Real>(x: &[T]) -> f64 {
    reduce(x, x, |a, _| a.iter().map(|v| v.as_f64() * v.as_f64()).sum())
}

/// `Re(x† y)`: the real dot product of the underlying real vectors.
pub fn re_dot<T: Real>(x: &[T], y: &[T]) -> Result<f64, SolverError> {
    same_len(x.len(), y.len())?;
    Ok(reduce(x, y, |a, b| a.iter().zip(b).map(|(p, q)| p.as_f64() * q.as_f64()).sum()))
}

/// Complex `x† y` over the sites of `map`.
pub fn dot<T: Real>(map: &LayoutMap, x: &[T], y: &[T]) -> Result<Complex<f64>, SolverError> {
    same_len(x.len(), map.len())?;
    same_len(y.len(), map.len())?;
    let sites_per_leaf = REDUCTION_CHUNK / 6;
    let volume = map.geometry().volume();
    let parts: Vec<Complex<f64>> = (0..volume.div_ceil(sites_per_leaf))
        .into_par_iter()
        .map(|leaf| {
            let mut acc = Complex::new(0.0, 0.0);
            for site in leaf * sites_per_leaf..((leaf + 1) * sites_per_leaf).min(volume) {
                let (a, b) = (load_vector(map, x, site), load_vector(map, y, site));
                for (p, q) in a.c.iter().zip(b.c.iter()) {
                    let (pr, pi, qr, qi) = (p.re.as_f64(), p.im.as_f64(), q.re.as_f64(), q.im.as_f64());
                    acc += Complex::new(pr * qr + pi * qi, pr * qi - pi * qr);
                }
            }
            acc
        })
        .collect();
    Ok(tree_sum(parts, Complex::new(0.0, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{Layout, NoiseKind, VectorBundle};
    use crate::lattice::LatticeGeometry;

    fn bundle(layout: Layout, noise: NoiseKind, seed: u64) -> VectorBundle<f64> {
        let g = LatticeGeometry::new([8, 4, 4, 4]).unwrap();
        let mut b = VectorBundle::new(&g, 2, layout).unwrap();
        b.fill_random_rhs(seed, noise);
        b
    }

    #[test]
    fn axpy_with_zero_leaves_y() {
        let b = bundle(Layout::Soa, NoiseKind::Gaussian, 1);
        let mut y = b.rhs(1).to_vec();
        axpy(0.0, b.rhs(0), &mut y).unwrap();
        assert_eq!(y, b.rhs(1));
    }

    #[test]
    fn dot_with_itself_is_the_norm() {
        let b = bundle(Layout::Fused(4), NoiseKind::Gaussian, 2);
        let d = dot(b.map(), b.rhs(0), b.rhs(0)).unwrap();
        assert!(d.re >= 0.0 && d.im.abs() <= 1e-12 * d.re);
        assert!((d.re - norm_sqr(b.rhs(0))).abs() <= 1e-12 * d.re);
    }

    #[test]
    fn z2_dot_is_three_per_site() {
        let b = bundle(Layout::Soa, NoiseKind::Z2, 3);
        let d = dot(b.map(), b.rhs(0), b.rhs(0)).unwrap();
        assert_eq!(d, Complex::new(3.0 * 512.0, 0.0));
    }

    #[test]
    fn dot_is_conjugate_linear_in_the_first_argument() {
        let b = bundle(Layout::Soa, NoiseKind::Gaussian, 4);
        let xy = dot(b.map(), b.rhs(0), b.rhs(1)).unwrap();
        let yx = dot(b.map(), b.rhs(1), b.rhs(0)).unwrap();
        assert!((xy - yx.conj()).norm() <= 1e-12 * xy.norm());
        assert!((re_dot(b.rhs(0), b.rhs(1)).unwrap() - xy.re).abs() <= 1e-10);
    }

    #[test]
    fn xmy_norm_and_xpay() {
        let b = bundle(Layout::Soa, NoiseKind::Gaussian, 5);
        let mut y = b.rhs(0).to_vec();
        assert_eq!(xmy_norm(b.rhs(0), &mut y).unwrap(), 0.0);
        let mut p = b.rhs(1).to_vec();
        xpay(b.rhs(0), 2.0, &mut p).unwrap();
        for ((p, x), y) in p.iter().zip(b.rhs(0)).zip(b.rhs(1)) {
            assert_eq!(*p, x + 2.0 * y);
        }
        let mut s = b.rhs(0).to_vec();
        scale(-0.5, &mut s);
        assert!(s.iter().zip(b.rhs(0)).all(|(a, x)| *a == -0.5 * x));
    }

    #[test]
    fn reductions_do_not_depend_on_thread_count() {
        let g = LatticeGeometry::new([8, 8, 8, 8]).unwrap();
        let mut b = VectorBundle::<f32>::new(&g, 2, Layout::Soa).unwrap();
        b.fill_random_rhs(6, NoiseKind::Gaussian);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                (norm_sqr(b.rhs(0)), dot(b.map(), b.rhs(0), b.rhs(1)).unwrap())
            })
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut y = vec![0.0f64; 3];
        assert!(matches!(axpy(1.0, &[1.0, 2.0], &mut y), Err(SolverError::LengthMismatch { left: 2, right: 3 })));
    }

    #[test]
    fn tree_sum_is_pairwise() {
        assert_eq!(tree_sum(vec![1.0, 2.0, 3.0], 0.0), 6.0);
        assert_eq!(tree_sum(Vec::<f64>::new(), 0.0), 0.0);
        // ((1e16 + 1) + (−1e16 + 1)) keeps neither unit, a left fold keeps one.
        assert_eq!(tree_sum(vec![1e16, 1.0, -1e16, 1.0], 0.0), 0.0);
    }
}
