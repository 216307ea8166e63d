//! Exhaustive timing of blocking strategies, cached per problem shape.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::{DslashError, DslashSpec, Strategy};
use crate::fields::{Layout, LinkStorage, VectorBundle};
use crate::real::{Precision, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub strategy: Strategy,
    pub split_kernels: bool,
}

impl std::fmt::Display for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.strategy, if self.split_kernels { "+split" } else { "" })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TuneKey {
    pub dims: [usize; 4],
    pub n_rhs: usize,
    pub storage: LinkStorage,
    pub layout: Layout,
    pub precision: Precision,
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    pub best: Candidate,
    pub best_time: Duration,
    /// Best time of every candidate, in candidate order.
    pub measurements: Vec<(Candidate, Duration)>,
}

/// Candidate set: register blocking with `rhs_chunk ∈ {1, 2, 4, n}`, cache
/// blocking over a geometric grid of tile sizes, their combinations, each
/// with and without split kernels.
pub fn candidate_grid(volume: usize, n_rhs: usize) -> Vec<Candidate> {
    let mut chunks: Vec<usize> = [1, 2, 4, n_rhs].into_iter().filter(|&k| k >= 1 && k <= n_rhs).collect();
    chunks.sort_unstable();
    chunks.dedup();
    let tiles: Vec<usize> = (0..)
        .map(|e| 16usize << (2 * e))
        .take_while(|&t| t <= volume.max(16))
        .collect();
    let mut strategies: Vec<Strategy> = chunks.iter().map(|&k| Strategy::RegisterBlock { rhs_chunk: k }).collect();
    strategies.extend(tiles.iter().map(|&t| Strategy::CacheBlock { tile_sites: t }));
    for &k in chunks.iter().filter(|&&k| k > 1) {
        strategies.extend(tiles.iter().map(|&t| Strategy::Combined { rhs_chunk: k, tile_sites: t }));
    }
    strategies
        .into_iter()
        .flat_map(|s| [false, true].map(|split| Candidate { strategy: s, split_kernels: split }))
        .collect()
}

/// Times candidates and remembers the winner per [`TuneKey`].
#[derive(Debug, Default)]
pub struct Autotuner {
    cache: HashMap<TuneKey, TuneResult>,
    timed_runs: usize,
}

impl Autotuner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of candidate timings performed so far (cache hits add none).
    pub fn timed_runs(&self) -> usize {
        self.timed_runs
    }

    pub fn cached(&self, key: &TuneKey) -> Option<&TuneResult> {
        self.cache.get(key)
    }

    /// Times each candidate `reps` times on `input` (keeping its fastest
    /// run) and returns the fastest candidate.
    pub fn tune<T: Real>(
        &mut self,
        spec: &DslashSpec<T>,
        input: &VectorBundle<T>,
        candidates: &[Candidate],
        reps: usize,
    ) -> Result<TuneResult, DslashError> {
        if candidates.is_empty() || reps == 0 {
            return Err(DslashError::EmptyCandidates);
        }
        let key = TuneKey {
            dims: spec.geometry().dims(),
            n_rhs: input.n_rhs(),
            storage: spec.naik_storage(),
            layout: input.layout(),
            precision: T::PRECISION,
        };
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let mut output = VectorBundle::with_map(input.map().clone(), input.n_rhs())
            .map_err(|e| DslashError::InvalidStrategy(e.to_string()))?;
        let mut trial = spec.clone();
        trial.count_transfers = false;
        let mut measurements = Vec::with_capacity(candidates.len());
        for &cand in candidates {
            trial.strategy = cand.strategy;
            trial.split_kernels = cand.split_kernels;
            let mut best = Duration::MAX;
            for _ in 0..reps {
                let start = Instant::now();
                trial.apply(input, &mut output)?;
                best = best.min(start.elapsed());
            }
            self.timed_runs += 1;
            measurements.push((cand, best));
        }
        let &(best, best_time) = measurements
            .iter()
            .min_by_key(|(_, t)| *t)
            .expect("non-empty candidate list");
        let result = TuneResult { best, best_time, measurements };
        self.cache.insert(key, result.clone());
        Ok(result)
    }
}
