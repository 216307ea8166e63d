//! Stochastic traces of operator chains `∂ᵏ¹M · M⁻¹ · ∂ᵏ²M · M⁻¹ …`.
//!
//! `Tr C ≈ (1/N) Σ η†Cη` over noise vectors η, with the chain applied right
//! to left. The chemical potential enters on temporal hops only, as
//! `e^{±μ}` on one-hop and `e^{±3μ}` on three-hop links.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex;
use thiserror::Error;

use crate::dslash::{DslashError, DslashSpec, HopCoefficients, TransferStats};
use crate::fields::{FieldError, Layout, NoiseKind, VectorBundle};
use crate::real::Real;
use crate::solver::{blas, solve_m, CgConfig, FermionOperator, SolverError};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("need at least one noise vector and a batch width of at least one")]
    NoVectors,
    #[error("CG did not converge for noise vector {vector}")]
    NotConverged { vector: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dslash(#[from] DslashError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// `∂ᵏD/∂μᵏ` at chemical potential `mu` (`k = 0`: `D(μ)` itself).
pub fn mu_weighted_dslash<T: Real>(
    spec: &DslashSpec<T>,
    mu: f64,
    k: u32,
    input: &VectorBundle<T>,
    output: &mut VectorBundle<T>,
) -> Result<TransferStats, DslashError> {
    if input.layout() != output.layout() || input.n_rhs() != output.n_rhs() {
        return Err(DslashError::RhsMismatch { input: input.n_rhs(), output: output.n_rhs() });
    }
    let inputs: Vec<&[T]> = input.fields().iter().map(Vec::as_slice).collect();
    let mut outs: Vec<&mut [T]> = output.fields_mut().iter_mut().map(Vec::as_mut_slice).collect();
    spec.apply_with(&HopCoefficients::chemical(mu, k), input.map(), &inputs, &mut outs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Insertion {
    Inverse,
    /// `∂ᵏM/∂μᵏ`, `k ≥ 1`.
    Derivative(u32),
}

impl fmt::Display for Insertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Insertion::Inverse => write!(f, "inv"),
            Insertion::Derivative(k) => write!(f, "d{k}"),
        }
    }
}

/// Ordered insertions, leftmost first, at chemical potential `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    insertions: Vec<Insertion>,
    pub mu: f64,
}

impl ChainSpec {
    /// Needs at least one inverse; derivatives must be separated by an
    /// inverse and have order ≥ 1.
    pub fn new(insertions: Vec<Insertion>, mu: f64) -> Result<Self, TraceError> {
        if !insertions.contains(&Insertion::Inverse) {
            return Err(TraceError::InvalidChain("at least one inverse is required".into()));
        }
        if insertions.contains(&Insertion::Derivative(0)) {
            return Err(TraceError::InvalidChain("derivative order must be at least 1".into()));
        }
        if insertions
            .windows(2)
            .any(|w| matches!(w, [Insertion::Derivative(_), Insertion::Derivative(_)]))
        {
            return Err(TraceError::InvalidChain("adjacent derivatives must be separated by an inverse".into()));
        }
        if !mu.is_finite() {
            return Err(TraceError::InvalidChain(format!("mu must be finite, got {mu}")));
        }
        Ok(ChainSpec { insertions, mu })
    }

    pub fn insertions(&self) -> &[Insertion] {
        &self.insertions
    }

    /// Parses `d1,inv,d2,inv`; `mu` defaults to 0.
    pub fn parse(text: &str, mu: f64) -> Result<Self, TraceError> {
        let insertions = text
            .split(',')
            .map(|tok| match tok.trim() {
                "inv" => Ok(Insertion::Inverse),
                t => t
                    .strip_prefix('d')
                    .and_then(|k| k.parse::<u32>().ok())
                    .map(Insertion::Derivative)
                    .ok_or_else(|| TraceError::InvalidChain(format!("unknown insertion '{t}' (expected inv or dK)"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(insertions, mu)
    }
}

impl FromStr for ChainSpec {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, 0.0)
    }
}

impl fmt::Display for ChainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.insertions.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Clone, Debug)]
pub struct TraceConfig {
    pub n_vectors: usize,
    /// Noise vectors inverted together in one bundle.
    pub batch: usize,
    pub noise: NoiseKind,
    pub seed: u64,
    pub keep_samples: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEstimate {
    pub mean: Complex<f64>,
    /// Sample standard deviation over `√n_vectors`; zero for one vector.
    pub stderr: f64,
    pub n_vectors: usize,
    pub samples: Option<Vec<Complex<f64>>>,
    pub cg_iterations: usize,
    pub stats: TransferStats,
}

impl TraceEstimate {
    /// Mean and standard error of `samples`, summed in a fixed order.
    pub fn from_samples(samples: &[Complex<f64>]) -> Self {
        let n = samples.len();
        let mean = blas::tree_sum(samples.to_vec(), Complex::new(0.0, 0.0)) / n as f64;
        let stderr = if n > 1 {
            let ss = blas::tree_sum(samples.iter().map(|s| (s - mean).norm_sqr()).collect(), 0.0);
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        TraceEstimate { mean, stderr, n_vectors: n, samples: None, cg_iterations: 0, stats: TransferStats::default() }
    }

    pub const CSV_HEADER: &'static str = "vector,re,im";

    /// Per-vector samples as CSV; empty body when samples were not kept.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (i, s) in self.samples.iter().flatten().enumerate() {
            out.push_str(&format!("{i},{:e},{:e}\n", s.re, s.im));
        }
        out
    }
}

/// Estimates `Tr(chain)` with `cfg.n_vectors` noise vectors. Vector `j` is
/// always drawn from noise stream `j`, so the samples do not depend on the
/// batch width.
pub fn estimate_chain<T: Real>(
    chain: &ChainSpec,
    op: &FermionOperator<T>,
    cfg: &TraceConfig,
    cg: &CgConfig,
) -> Result<TraceEstimate, TraceError> {
    if cfg.n_vectors == 0 || cfg.batch == 0 {
        return Err(TraceError::NoVectors);
    }
    let op = op.clone().with_mu(chain.mu);
    let geometry = *op.dslash.geometry();
    let mut samples = Vec::with_capacity(cfg.n_vectors);
    let mut stats = TransferStats::default();
    let mut cg_iterations = 0;
    let mut first = 0;
    let mut map = None;
    while first < cfg.n_vectors {
        let width = cfg.batch.min(cfg.n_vectors - first);
        let mut eta = match &map {
            None => VectorBundle::<T>::new(&geometry, width, Layout::Soa)?,
            Some(m) => VectorBundle::with_map(Arc::clone(m), width)?,
        };
        map.get_or_insert_with(|| Arc::clone(eta.map()));
        eta.fill_random_rhs_from(cfg.seed, cfg.noise, first as u64);
        let mut v = eta.clone();
        for ins in chain.insertions().iter().rev() {
            v = match *ins {
                Insertion::Inverse => {
                    let (x, report) = solve_m(&op, &v, cg)?;
                    if let Some(bad) = report.rhs.iter().position(|r| !r.converged) {
                        return Err(TraceError::NotConverged { vector: first + bad });
                    }
                    cg_iterations += report.iterations;
                    stats += report.stats;
                    x
                }
                Insertion::Derivative(k) => {
                    let mut out = VectorBundle::with_map(Arc::clone(v.map()), width)?;
                    stats += mu_weighted_dslash(&op.dslash, chain.mu, k, &v, &mut out)?;
                    out
                }
            };
        }
        for i in 0..width {
            samples.push(blas::dot(eta.map(), eta.rhs(i), v.rhs(i))?);
        }
        first += width;
    }
    let mut est = TraceEstimate::from_samples(&samples);
    est.cg_iterations = cg_iterations;
    est.stats = stats;
    if cfg.keep_samples {
        est.samples = Some(samples);
    }
    Ok(est)
}
