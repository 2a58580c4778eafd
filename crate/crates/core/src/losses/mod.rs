//! Training objectives: deep-clustering affinity loss, mask-inference losses,
//! weighted phase losses, permutation assignment and the combined total.
//!
//! Each loss comes in two forms: a tape form that records a differentiable
//! graph, and a value form that takes plain matrices and returns an `f64`.
//! Per-pairing costs are normalized by `C*T*F` (deep clustering by the squared
//! active-bin count) so the combination weight is independent of chunk size.

mod dc;
mod mi;
mod objective;
mod phase;
mod pit;

use alloc::format;
use alloc::vec::Vec;

pub use dc::{dc_loss, dc_loss_var};
pub use mi::{mi_loss, mi_pairing_costs, mi_targets};
pub use objective::{evaluate, ItemTargets, ObjectiveConfig};
pub use phase::{interleave, phase_loss, phase_pairing_costs, phase_weights};
pub use pit::{pit_assign, pit_choose, PitChoice, MAX_SOURCES};

use crate::error::{Error, Result};

/// Output-to-reference assignment: output `c` is scored against reference `mapping[c]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let c = mapping.len();
        let mut seen = alloc::vec![false; c];
        for &m in &mapping {
            if m >= c || seen[m] {
                return Err(Error::InvalidArgument(format!("{:?} is not a permutation", mapping)));
            }
            seen[m] = true;
        }
        Ok(Self(mapping))
    }

    pub fn identity(c: usize) -> Self {
        Self((0..c).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> usize {
        self.0[c]
    }

    /// All permutations of `0..c` in lexicographic order.
    pub fn all(c: usize) -> Vec<Permutation> {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (0..c).collect();
        loop {
            out.push(Permutation(cur.clone()));
            // next lexicographic permutation
            let Some(i) = (1..c).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
            let j = (i..c).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
            cur.swap(i - 1, j);
            cur[i..].reverse();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiVariant {
    /// Magnitude spectrum approximation.
    Msa,
    /// Truncated phase-sensitive spectrum approximation.
    Tpsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PitCriterion {
    /// Permutation minimizes mask + phase losses jointly.
    MaskPhase,
    /// Permutation minimizes the mask loss only; phase follows it.
    MaskDependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseWeighting {
    Plain,
    /// `gamma + M_c`
    Magnitude,
    /// `gamma + sum_{i != c} M_i`
    InverseMagnitude,
    /// `sum_i M_i`
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScheme {
    pub weighting: PhaseWeighting,
    pub gamma: f64,
}

pub const DEFAULT_GAMMA: f64 = 0.2;

impl WeightScheme {
    pub fn new(weighting: PhaseWeighting) -> Self {
        Self { weighting, gamma: DEFAULT_GAMMA }
    }
}

impl Default for WeightScheme {
    fn default() -> Self {
        Self::new(PhaseWeighting::Plain)
    }
}

/// Per-term loss values for one example or batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub dc: f64,
    pub mi: f64,
    pub pi: f64,
    pub total: f64,
    pub chosen_perm: Permutation,
}

/// `alpha * dc + (1 - alpha) * (mi + pi)`.
pub fn combined_loss(dc: f64, mi: f64, pi: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * dc + (1.0 - alpha) * (mi + pi))
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}
