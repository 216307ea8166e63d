//! Conjugate gradient on the normal equations for a bundle of right-hand
//! sides, with per-rhs stopping.
//!
//! The fermion matrix is `M = m + D(μ)`; CG runs on `A = M†M`, which is
//! `m² − D²` at `μ = 0`. Every rhs has its own CG scalars; only the Dslash
//! applications are shared, and an rhs leaves the bundle once it converges.

pub mod blas;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::dslash::{DslashError, DslashSpec, HopCoefficients, TransferStats};
use crate::fields::{FieldError, LayoutMap, VectorBundle, VECTOR_REALS};
use crate::real::{Precision, Real};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("mass must be positive and finite, got {0}")]
    InvalidMass(f64),
    #[error("invalid CG configuration: {0}")]
    InvalidConfig(String),
    #[error("configured precision {configured} does not match field precision {field}")]
    PrecisionMismatch { configured: Precision, field: Precision },
    #[error("field lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("right-hand side {rhs} is not finite")]
    NonFinite { rhs: usize },
    #[error("CG breakdown on rhs {rhs} at iteration {iteration}: p·Ap = {p_ap:e}")]
    Breakdown { rhs: usize, iteration: usize, p_ap: f64 },
    #[error(transparent)]
    Dslash(#[from] DslashError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// `M = m + D(μ)` for a Dslash operator.
#[derive(Clone, Debug)]
pub struct FermionOperator<T> {
    pub dslash: DslashSpec<T>,
    mass: f64,
    mu: f64,
}

impl<T: Real> FermionOperator<T> {
    pub fn new(dslash: DslashSpec<T>, mass: f64) -> Result<Self, SolverError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(SolverError::InvalidMass(mass));
        }
        Ok(FermionOperator { dslash, mass, mu: 0.0 })
    }

    /// Sets the chemical potential (lattice units).
    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn d(&self, mu: f64, map: &LayoutMap, inputs: &[&[T]], outputs: &mut [&mut [T]]) -> Result<TransferStats, DslashError> {
        if mu == 0.0 {
            self.dslash.apply_fields(map, inputs, outputs)
        } else {
            self.dslash.apply_with(&HopCoefficients::chemical(mu, 0), map, inputs, outputs)
        }
    }

    fn aux(&self, map: &LayoutMap, n: usize, per_site: usize) -> u64 {
        if self.dslash.count_transfers {
            (map.geometry().volume() * VECTOR_REALS * n * per_site) as u64
        } else {
            0
        }
    }

    /// `out = M v`.
    pub fn apply_m_fields(&self, map: &LayoutMap, inputs: &[&[T]], outputs: &mut [&mut [T]]) -> Result<TransferStats, SolverError> {
        let mut stats = self.d(self.mu, map, inputs, outputs)?;
        let m = T::of_f64(self.mass);
        for (o, i) in outputs.iter_mut().zip(inputs) {
            o.iter_mut().zip(i.iter()).for_each(|(o, &i)| *o = m * i + *o);
        }
        stats.aux_flops += self.aux(map, inputs.len(), 2);
        Ok(stats)
    }

    /// `out = M† v = m v − D(−μ) v`.
    pub fn apply_m_dagger_fields(
        &self,
        map: &LayoutMap,
        inputs: &[&[T]],
        outputs: &mut [&mut [T]],
    ) -> Result<TransferStats, SolverError> {
        let mut stats = self.d(-self.mu, map, inputs, outputs)?;
        let m = T::of_f64(self.mass);
        for (o, i) in outputs.iter_mut().zip(inputs) {
            o.iter_mut().zip(i.iter()).for_each(|(o, &i)| *o = m * i - *o);
        }
        stats.aux_flops += self.aux(map, inputs.len(), 2);
        Ok(stats)
    }

    /// `out = M†M v` on raw fields, with `scratch` holding the intermediate.
    /// Two Dslash applications per field.
    pub fn apply_normal_fields(
        &self,
        map: &LayoutMap,
        inputs: &[&[T]],
        scratch: &mut [&mut [T]],
        outputs: &mut [&mut [T]],
    ) -> Result<TransferStats, SolverError> {
        if self.mu == 0.0 {
            let mut stats = self.dslash.apply_fields(map, inputs, scratch)?;
            let mids: Vec<&[T]> = scratch.iter().map(|s| &**s).collect();
            stats += self.dslash.apply_fields(map, &mids, outputs)?;
            let m2 = T::of_f64(self.mass * self.mass);
            for (o, i) in outputs.iter_mut().zip(inputs) {
                o.iter_mut().zip(i.iter()).for_each(|(o, &i)| *o = m2 * i - *o);
            }
            stats.aux_flops += self.aux(map, inputs.len(), 2);
            Ok(stats)
        } else {
            let mut stats = self.apply_m_fields(map, inputs, scratch)?;
            let mids: Vec<&[T]> = scratch.iter().map(|s| &**s).collect();
            stats += self.apply_m_dagger_fields(map, &mids, outputs)?;
            Ok(stats)
        }
    }

    /// `output = M†M input` (`m² input − D(D input)` at `μ = 0`).
    pub fn apply_normal(&self, input: &VectorBundle<T>, output: &mut VectorBundle<T>) -> Result<TransferStats, SolverError> {
        if output.layout() != input.layout() {
            return Err(DslashError::InvalidStrategy("input and output layouts differ".into()).into());
        }
        let mut scratch = VectorBundle::with_map(Arc::clone(input.map()), input.n_rhs())?;
        let inputs: Vec<&[T]> = input.fields().iter().map(Vec::as_slice).collect();
        let mut mids: Vec<&mut [T]> = scratch.fields_mut().iter_mut().map(Vec::as_mut_slice).collect();
        let mut outs: Vec<&mut [T]> = output.fields_mut().iter_mut().map(Vec::as_mut_slice).collect();
        self.apply_normal_fields(input.map(), &inputs, &mut mids, &mut outs)
    }

    /// `output = M input`.
    pub fn apply_m(&self, input: &VectorBundle<T>, output: &mut VectorBundle<T>) -> Result<TransferStats, SolverError> {
        let inputs: Vec<&[T]> = input.fields().iter().map(Vec::as_slice).collect();
        let mut outs: Vec<&mut [T]> = output.fields_mut().iter_mut().map(Vec::as_mut_slice).collect();
        self.apply_m_fields(input.map(), &inputs, &mut outs)
    }

    /// `output = M† input`.
    pub fn apply_m_dagger(&self, input: &VectorBundle<T>, output: &mut VectorBundle<T>) -> Result<TransferStats, SolverError> {
        let inputs: Vec<&[T]> = input.fields().iter().map(Vec::as_slice).collect();
        let mut outs: Vec<&mut [T]> = output.fields_mut().iter_mut().map(Vec::as_mut_slice).collect();
        self.apply_m_dagger_fields(input.map(), &inputs, &mut outs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CgConfig {
    /// Target `‖b − Ax‖/‖b‖` per rhs.
    pub tol: f64,
    pub max_iter: usize,
    pub precision: Precision,
}

impl CgConfig {
    /// Defaults: tolerance 1e-6 in f32 and 1e-10 in f64.
    pub fn for_precision(precision: Precision) -> Self {
        let tol = match precision {
            Precision::F32 => 1e-6,
            Precision::F64 => 1e-10,
        };
        CgConfig { tol, max_iter: 10_000, precision }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(SolverError::InvalidConfig(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SolverError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhsReport {
    pub iterations: usize,
    /// Final recursive relative residual.
    pub residual: f64,
    /// `‖b − A x‖/‖b‖` recomputed at exit.
    pub true_residual: f64,
    pub converged: bool,
    /// Recursive relative residual after each iteration.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CgReport {
    pub rhs: Vec<RhsReport>,
    /// Bundle iterations (the largest per-rhs iteration count).
    pub iterations: usize,
    /// Number of active rhs in each bundle iteration.
    pub active_per_iteration: Vec<usize>,
    /// Dslash applications inside the iterations (two per active rhs).
    pub dslash_applications: u64,
    /// Dslash applications of the exit true-residual check.
    pub check_dslash_applications: u64,
    pub stats: TransferStats,
    pub wall_time: Duration,
}

impl CgReport {
    pub fn all_converged(&self) -> bool {
        self.rhs.iter().all(|r| r.converged)
    }

    pub const CSV_HEADER: &'static str = "rhs,iterations,residual,true_residual,converged";

    /// One row per rhs, with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (i, r) in self.rhs.iter().enumerate() {
            out.push_str(&format!("{i},{},{:e},{:e},{}\n", r.iterations, r.residual, r.true_residual, r.converged));
        }
        out
    }
}

/// Per-rhs CG state.
struct Lane<T> {
    r: Vec<T>,
    p: Vec<T>,
    ap: Vec<T>,
    tmp: Vec<T>,
    rr: f64,
    b_norm: f64,
}

/// Solves `M†M x = b` for every vector of `b`, starting from `x = 0`.
pub fn cg_solve<T: Real>(
    op: &FermionOperator<T>,
    b: &VectorBundle<T>,
    cfg: &CgConfig,
) -> Result<(VectorBundle<T>, CgReport), SolverError> {
    cfg.validate()?;
    if cfg.precision != T::PRECISION {
        return Err(SolverError::PrecisionMismatch { configured: cfg.precision, field: T::PRECISION });
    }
    let start = Instant::now();
    let n = b.n_rhs();
    let map = Arc::clone(b.map());
    let mut x = VectorBundle::with_map(Arc::clone(&map), n)?;
    let mut stats = TransferStats::default();
    let mut reports = Vec::with_capacity(n);
    let mut lanes = Vec::with_capacity(n);
    let mut active = Vec::new();

    for i in 0..n {
        let bi = b.rhs(i);
        if bi.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite { rhs: i });
        }
        let rr = blas::norm_sqr(bi);
        let zero_rhs = rr == 0.0;
        reports.push(RhsReport {
            iterations: 0,
            residual: 0.0,
            true_residual: 0.0,
            converged: zero_rhs,
            history: Vec::new(),
        });
        if zero_rhs {
            lanes.push(None);
            continue;
        }
        lanes.push(Some(Lane {
            r: bi.to_vec(),
            p: bi.to_vec(),
            ap: vec![T::zero(); map.len()],
            tmp: vec![T::zero(); map.len()],
            rr,
            b_norm: rr.sqrt(),
        }));
        active.push(i);
    }

    let mut iterations = 0;
    let mut active_per_iteration = Vec::new();
    let mut dslash_applications = 0u64;
    while !active.is_empty() && iterations < cfg.max_iter {
        iterations += 1;
        active_per_iteration.push(active.len());
        dslash_applications += 2 * active.len() as u64;
        {
            let mut inputs = Vec::with_capacity(active.len());
            let mut mids = Vec::with_capacity(active.len());
            let mut outs = Vec::with_capacity(active.len());
            let mut is_active = vec![false; n];
            active.iter().for_each(|&i| is_active[i] = true);
            for (_, lane) in lanes.iter_mut().enumerate().filter(|(i, _)| is_active[*i]) {
                let Lane { p, ap, tmp, .. } = lane.as_mut().expect("active lane");
                inputs.push(p.as_slice());
                mids.push(tmp.as_mut_slice());
                outs.push(ap.as_mut_slice());
            }
            stats += op.apply_normal_fields(&map, &inputs, &mut mids, &mut outs)?;
        }
        let mut still_active = Vec::with_capacity(active.len());
        for &i in &active {
            let lane = lanes[i].as_mut().expect("active lane");
            let p_ap = blas::re_dot(&lane.p, &lane.ap)?;
            if !(p_ap > 0.0) {
                return Err(SolverError::Breakdown { rhs: i, iteration: iterations, p_ap });
            }
            let alpha = lane.rr / p_ap;
            blas::axpy(alpha, &lane.p, x.rhs_mut(i))?;
            blas::axpy(-alpha, &lane.ap, &mut lane.r)?;
            let rr_new = blas::norm_sqr(&lane.r);
            let rel = rr_new.sqrt() / lane.b_norm;
            let report = &mut reports[i];
            report.iterations = iterations;
            report.residual = rel;
            report.history.push(rel);
            if rel <= cfg.tol {
                report.converged = true;
                continue;
            }
            let beta = rr_new / lane.rr;
            lane.rr = rr_new;
            blas::xpay(&lane.r, beta, &mut lane.p)?;
            still_active.push(i);
        }
        if op.dslash.count_transfers {
            stats.aux_flops += (active.len() * map.len() * 10) as u64;
        }
        active = still_active;
    }

    // True residual of every nonzero rhs.
    let checked: Vec<usize> = (0..n).filter(|&i| lanes[i].is_some()).collect();
    let mut check_dslash_applications = 0u64;
    if !checked.is_empty() {
        let mut ax = vec![vec![T::zero(); map.len()]; checked.len()];
        let mut mid = vec![vec![T::zero(); map.len()]; checked.len()];
        {
            let inputs: Vec<&[T]> = checked.iter().map(|&i| x.rhs(i)).collect();
            let mut mids: Vec<&mut [T]> = mid.iter_mut().map(Vec::as_mut_slice).collect();
            let mut outs: Vec<&mut [T]> = ax.iter_mut().map(Vec::as_mut_slice).collect();
            stats += op.apply_normal_fields(&map, &inputs, &mut mids, &mut outs)?;
        }
        check_dslash_applications = 2 * checked.len() as u64;
        for (k, &i) in checked.iter().enumerate() {
            let b_norm = lanes[i].as_ref().expect("checked lane").b_norm;
            let rr = blas::xmy_norm(b.rhs(i), &mut ax[k])?;
            reports[i].true_residual = rr.sqrt() / b_norm;
        }
    }

    let report = CgReport {
        rhs: reports,
        iterations,
        active_per_iteration,
        dslash_applications,
        check_dslash_applications,
        stats,
        wall_time: start.elapsed(),
    };
    Ok((x, report))
}

/// `x = M⁻¹ y`, computed as `(M†M)⁻¹ M† y`.
pub fn solve_m<T: Real>(
    op: &FermionOperator<T>,
    y: &VectorBundle<T>,
    cfg: &CgConfig,
) -> Result<(VectorBundle<T>, CgReport), SolverError> {
    let mut rhs = VectorBundle::with_map(Arc::clone(y.map()), y.n_rhs())?;
    let pre = op.apply_m_dagger(y, &mut rhs)?;
    let (x, mut report) = cg_solve(op, &rhs, cfg)?;
    report.stats += pre;
    Ok((x, report))
}
