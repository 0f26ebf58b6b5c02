//! Scheduler abstraction and non-learned baselines.
//!
//! The benchmark scheduler picks sensor `n` with a static probability
//! inversely proportional to its age threshold. Round-robin and greedy
//! max-age baselines are included for comparison, and a trained network can
//! be wrapped as a scheduler in either sampling or greedy mode.

use crate::env::{EnvConfig, EnvState, Observation};
use crate::net::{self, NetParams};
use crate::{Error, Result, Rng};
use rand::Rng as _;

/// A per-node probability vector: entries are non-negative and sum to one
/// within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("probability vector is empty".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Domain(format!(
                "probability vector has a negative or NaN entry: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "probability vector sums to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(probs))
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability, ties broken by lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate().skip(1) {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Static benchmark distribution: node `n` is selected with probability
/// `(1/threshold_n) / sum_m (1/threshold_m)`.
pub fn benchmark_probs(thresholds: &[f64]) -> Result<ProbVector> {
    if thresholds.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Domain(format!(
            "benchmark thresholds must all be > 0, got {thresholds:?}"
        )));
    }
    let inv: Vec<f64> = thresholds.iter().map(|b| 1.0 / b).collect();
    let total: f64 = inv.iter().sum();
    ProbVector::new(inv.into_iter().map(|v| v / total).collect())
}

/// Draws an index distributed according to `probs` from one uniform draw.
pub fn sample_categorical(probs: &ProbVector, rng: &mut Rng) -> usize {
    let u = rng.gen::<f64>();
    let mut cumulative = 0.0;
    for (i, p) in probs.probs().iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // Rounding can leave the cumulative sum a hair below 1.
    probs.len() - 1
}

/// Greedy baseline: the sensor with the largest age, ties broken by lowest
/// index.
pub fn max_age_policy(state: &EnvState) -> usize {
    let mut best = 0;
    for (i, age) in state.ages.iter().enumerate().skip(1) {
        if *age > state.ages[best] {
            best = i;
        }
    }
    best
}

/// Cyclic baseline: task `i` serves sensor `i mod N`.
pub fn round_robin_policy(task_index: usize, n_sensors: usize) -> usize {
    task_index % n_sensors
}

/// How a learned policy turns probabilities into an action: sampling during
/// training, the maximum-probability element at evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// A scheduling policy. Every variant returns an index in `[0, N)` for any
/// reachable state.
#[derive(Debug, Clone)]
pub enum Scheduler {
    Benchmark(ProbVector),
    RoundRobin,
    MaxAge,
    Learned { params: NetParams, mode: ActionMode },
}

impl Scheduler {
    /// Benchmark scheduler for the given environment's thresholds.
    pub fn benchmark_for(config: &EnvConfig) -> Result<Self> {
        let thresholds: Vec<f64> = config.sensors.iter().map(|s| s.aoi_threshold).collect();
        Ok(Scheduler::Benchmark(benchmark_probs(&thresholds)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheduler::Benchmark(_) => "benchmark",
            Scheduler::RoundRobin => "round_robin",
            Scheduler::MaxAge => "max_age",
            Scheduler::Learned { .. } => "learned",
        }
    }

    pub fn decide(&self, state: &EnvState, obs: &Observation, rng: &mut Rng) -> Result<usize> {
        match self {
            Scheduler::Benchmark(probs) => Ok(sample_categorical(probs, rng)),
            Scheduler::RoundRobin => Ok(round_robin_policy(state.task_index, state.ages.len())),
            Scheduler::MaxAge => Ok(max_age_policy(state)),
            Scheduler::Learned { params, mode } => {
                let out = net::forward(params, obs)?;
                Ok(match mode {
                    ActionMode::Sample => sample_categorical(&out.probs, rng),
                    ActionMode::Greedy => out.probs.argmax(),
                })
            }
        }
    }
}
