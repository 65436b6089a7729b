//! Exact consensus probability.
//!
//! Organizations respond independently, so the accepted weight is a sum of
//! independent weighted Bernoulli variables. Its distribution is a
//! convolution over organizations, `O(n · W)` for total weight `W`.
//!
//! The tail probability `P(accepted ≥ t)` is computed by a separate backward
//! recursion over the needed weight,
//!
//! ```text
//! f_i(t) = f_{i+1}(t) + q_i · (f_{i+1}(t − w_i) − f_{i+1}(t)),   f_n(t) = [t ≤ 0]
//! ```
//!
//! which is affine in each acceptance probability `q_i` and returns the
//! refusal branch unchanged, bit for bit, whenever an organization cannot
//! affect the outcome.
//!
//! [`enumerate_distribution`] is the `2^n` brute force kept as a test oracle.

use crate::policy::{total_weight, Policy};
use crate::smc::Decision;

/// Exact distribution of a weight sum, indexed by weight `0..=total`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    masses: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn from_masses(masses: Vec<f64>) -> Self {
        Self { masses }
    }

    pub fn mass(&self, weight: u64) -> f64 {
        usize::try_from(weight)
            .ok()
            .and_then(|w| self.masses.get(w))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn max_weight(&self) -> u64 {
        self.masses.len() as u64 - 1
    }

    /// `(weight, mass)` for every weight in `0..=max_weight`, including zero masses.
    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.masses.iter().enumerate().map(|(w, &m)| (w as u64, m))
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `Σ_{w ≥ threshold} mass(w)`.
    pub fn tail(&self, threshold: u64) -> f64 {
        let start = usize::try_from(threshold).unwrap_or(usize::MAX);
        self.masses.iter().skip(start).sum()
    }

    /// Total-variation distance to another distribution.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let len = self.masses.len().max(other.masses.len()) as u64;
        0.5 * (0..len)
            .map(|w| (self.mass(w) - other.mass(w)).abs())
            .sum::<f64>()
    }
}

fn convolve(weights_probs: impl Iterator<Item = (u64, f64)>, total: u64) -> OutcomeDistribution {
    let mut masses = vec![0.0; total as usize + 1];
    masses[0] = 1.0;
    let mut reach = 0usize;
    for (w, q) in weights_probs {
        let w = w as usize;
        for v in (0..=reach).rev() {
            let m = masses[v];
            if m != 0.0 {
                masses[v + w] += m * q;
                masses[v] = m * (1.0 - q);
            }
        }
        reach += w;
    }
    OutcomeDistribution { masses }
}

/// Distribution of the total accepted weight.
pub fn weight_distribution(policy: &Policy) -> OutcomeDistribution {
    convolve(
        policy
            .organizations()
            .iter()
            .map(|o| (o.weight(), o.acceptance_prob())),
        total_weight(policy),
    )
}

/// Distribution of the total refused weight.
pub fn refusal_distribution(policy: &Policy) -> OutcomeDistribution {
    convolve(
        policy
            .organizations()
            .iter()
            .map(|o| (o.weight(), o.refusal_prob())),
        total_weight(policy),
    )
}

fn tail_probability(weights_probs: &[(u64, f64)], threshold: u64) -> f64 {
    if threshold == 0 {
        return 1.0;
    }
    let total: u64 = weights_probs.iter().map(|&(w, _)| w).sum();
    if threshold > total {
        return 0.0;
    }
    let th = threshold as usize;
    // need[t] = P(remaining organizations contribute at least t)
    let mut need = vec![0.0; th + 1];
    need[0] = 1.0;
    let mut next = need.clone();
    for &(w, q) in weights_probs.iter().rev() {
        let w = w as usize;
        for t in 1..=th {
            let refuse = need[t];
            let accept = need[t.saturating_sub(w)];
            next[t] = refuse + q * (accept - refuse);
        }
        std::mem::swap(&mut need, &mut next);
    }
    need[th]
}

/// Probability that the accepted weight reaches the weight threshold.
pub fn exact_acceptance_probability(policy: &Policy) -> f64 {
    let wp: Vec<_> = policy
        .organizations()
        .iter()
        .map(|o| (o.weight(), o.acceptance_prob()))
        .collect();
    tail_probability(&wp, policy.weight_threshold())
}

/// Probability that the refused weight reaches the weight threshold.
pub fn exact_rejection_probability(policy: &Policy) -> f64 {
    let wp: Vec<_> = policy
        .organizations()
        .iter()
        .map(|o| (o.weight(), o.refusal_prob()))
        .collect();
    tail_probability(&wp, policy.weight_threshold())
}

/// `Holds` iff the exact acceptance probability is strictly above the
/// probability threshold.
pub fn verdict_exact(policy: &Policy) -> Decision {
    if exact_acceptance_probability(policy) > policy.probability_threshold() {
        Decision::Holds
    } else {
        Decision::Fails
    }
}

/// Brute-force distribution over all `2^n` accept/refuse outcomes.
///
/// Panics for more than 24 organizations.
pub fn enumerate_distribution(policy: &Policy) -> OutcomeDistribution {
    let orgs = policy.organizations();
    assert!(orgs.len() <= 24, "enumeration is exponential");
    let mut masses = vec![0.0; total_weight(policy) as usize + 1];
    for mask in 0u32..(1 << orgs.len()) {
        let mut prob = 1.0;
        let mut weight = 0;
        for (i, o) in orgs.iter().enumerate() {
            if mask & (1 << i) != 0 {
                prob *= o.acceptance_prob();
                weight += o.weight() as usize;
            } else {
                prob *= o.refusal_prob();
            }
        }
        masses[weight] += prob;
    }
    OutcomeDistribution { masses }
}
