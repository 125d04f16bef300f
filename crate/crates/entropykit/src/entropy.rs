//! Location-occupancy distributions and Shannon entropy, in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::Trajectory;

/// Discrete distribution over alphabet indices together with the number of
/// observations it was estimated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    probs: Vec<f64>,
    support_count: u64,
}

impl ProbabilityDistribution {
    /// Entries must be finite, in [0, 1], and sum to 1 within 1e-9.
    pub fn new(probs: Vec<f64>, support_count: u64) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 states, got {}",
                probs.len()
            )));
        }
        if support_count == 0 {
            return Err(Error::InvalidDistribution(
                "support_count must be at least 1".into(),
            ));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidDistribution(format!(
                    "entry {i} is {p}, outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            probs,
            support_count,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0 / n as f64; n], 1).expect("uniform is valid")
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self::new(probs, 1).expect("one-hot is valid")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support_count(&self) -> u64 {
        self.support_count
    }
}

/// Plug-in estimate: probs[i] = count(i) / L over a non-empty trajectory.
pub fn estimate_distribution(
    trajectory: &Trajectory,
    n_states: usize,
) -> Result<ProbabilityDistribution> {
    estimate_distribution_over(std::slice::from_ref(trajectory), n_states)
}

/// Plug-in estimate over the pooled states of several trajectories.
pub fn estimate_distribution_over(
    trajectories: &[Trajectory],
    n_states: usize,
) -> Result<ProbabilityDistribution> {
    let mut counts = vec![0u64; n_states];
    let mut total = 0u64;
    for trajectory in trajectories {
        if trajectory.max_state() >= n_states {
            return Err(Error::InvalidAlphabet(format!(
                "state {} out of range for alphabet of {n_states}",
                trajectory.max_state()
            )));
        }
        for &s in trajectory.states() {
            counts[s] += 1;
        }
        total += trajectory.len() as u64;
    }
    if total == 0 {
        return Err(Error::InsufficientData("no states to estimate from".into()));
    }
    let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
    ProbabilityDistribution::new(probs, total)
}

/// H = −Σ p ln p with 0·ln 0 = 0. Result in [0, ln n].
pub fn shannon_entropy(dist: &ProbabilityDistribution) -> f64 {
    let mut h = 0.0;
    for &p in dist.probs() {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    // -0.0 can appear for one-hot inputs; the value is bounded by ln n up
    // to rounding in the sum itself.
    h.max(0.0)
}
