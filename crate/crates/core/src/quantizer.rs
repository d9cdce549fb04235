//! Quantized weights, phase thresholds and entropy accounting.
//!
//! Within a phase the scale `τ̄ = W0/n0` is frozen and every element's
//! quantized weight is `⌈w/τ̄⌉ = ⌈w·n0/W0⌉`, computed in integers.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("distribution has no mass")]
    EmptyDistribution,
    #[error("phase needs W0 >= n0 >= 1, got W0 = {w0}, n0 = {n0}")]
    BadPhase { w0: u64, n0: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundViolation {
    #[error("quantized total {total} exceeds 2n = {limit}")]
    QuantizedTotal { total: u64, limit: u64 },
    #[error("element {index}: log(W'/w') = {lhs} exceeds min(log(W/w), log n) + 1 = {rhs}")]
    QuantizationGap { index: usize, lhs: f64, rhs: f64 },
    #[error("dynamic entropy sum {lhs} exceeds W*H + 2W = {rhs}")]
    DynamicEntropy { lhs: f64, rhs: f64 },
}

/// Frozen phase parameters plus the live totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseState {
    w0: u64,
    n0: u64,
    pub total_weight: u64,
    pub elements: u64,
}

impl PhaseState {
    pub fn new(w0: u64, n0: u64) -> Result<Self, QuantError> {
        if n0 == 0 || w0 < n0 {
            return Err(QuantError::BadPhase { w0, n0 });
        }
        Ok(PhaseState {
            w0,
            n0,
            total_weight: w0,
            elements: n0,
        })
    }

    pub fn w0(&self) -> u64 {
        self.w0
    }

    pub fn n0(&self) -> u64 {
        self.n0
    }

    /// `τ̄` as the exact pair `(W0, n0)`.
    pub fn tau_bar(&self) -> (u64, u64) {
        (self.w0, self.n0)
    }
}

/// `⌈w·n0/W0⌉`.
pub fn quantize(w: u64, phase: &PhaseState) -> u64 {
    debug_assert!(w >= 1);
    let num = w as u128 * phase.n0 as u128;
    num.div_ceil(phase.w0 as u128) as u64
}

/// True once the total weight or the element count has doubled.
pub fn phase_should_end(phase: &PhaseState) -> bool {
    phase.total_weight >= 2 * phase.w0 || phase.elements >= 2 * phase.n0
}

/// True once the total weight or the element count has halved.
pub fn phase_should_shrink(phase: &PhaseState) -> bool {
    2 * phase.total_weight <= phase.w0 || 2 * phase.elements <= phase.n0
}

fn fresh_phase(weights: &[u64]) -> PhaseState {
    let total: u64 = weights.iter().sum();
    PhaseState::new(total, weights.len() as u64).expect("weights are positive")
}

/// Quantizes with `τ = W/n` and checks `W' <= 2n`. Returns `W'`.
pub fn quantized_total_bound_check(weights: &[u64]) -> Result<u64, BoundViolation> {
    assert!(!weights.is_empty() && weights.iter().all(|&w| w >= 1));
    let phase = fresh_phase(weights);
    let total: u64 = weights.iter().map(|&w| quantize(w, &phase)).sum();
    let limit = 2 * weights.len() as u64;
    if total > limit {
        return Err(BoundViolation::QuantizedTotal { total, limit });
    }
    Ok(total)
}

/// Checks `log(W'/w'ᵢ) <= min(log(W/wᵢ), log n) + 1` for every element.
pub fn verify_quantization_gap(weights: &[u64]) -> Result<(), BoundViolation> {
    assert!(!weights.is_empty() && weights.iter().all(|&w| w >= 1));
    let phase = fresh_phase(weights);
    let quant: Vec<u64> = weights.iter().map(|&w| quantize(w, &phase)).collect();
    let big_w = phase.w0 as f64;
    let big_wq: u64 = quant.iter().sum();
    let n = weights.len() as f64;
    for (index, (&w, &q)) in weights.iter().zip(&quant).enumerate() {
        let lhs = (big_wq as f64 / q as f64).log2();
        let rhs = (big_w / w as f64).log2().min(n.log2()) + 1.0;
        if lhs > rhs + 1e-9 {
            return Err(BoundViolation::QuantizationGap { index, lhs, rhs });
        }
    }
    Ok(())
}

/// Empirical Shannon entropy in bits.
pub fn entropy(counts: &[u64]) -> Result<f64, QuantError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(QuantError::EmptyDistribution);
    }
    let total = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum())
}

/// `Σ_t log₂(t / max(w_{a_t}^{(t−1)}, 1))`: the cost of every access charged
/// against the counts seen before it.
pub fn dynamic_entropy_lhs<T: std::hash::Hash + Eq + Copy>(sequence: &[T]) -> f64 {
    let mut counts: HashMap<T, u64> = HashMap::new();
    let mut sum = 0.0;
    for (i, &a) in sequence.iter().enumerate() {
        let t = (i + 1) as f64;
        let c = counts.entry(a).or_insert(0);
        sum += (t / (*c).max(1) as f64).log2();
        *c += 1;
    }
    sum
}

/// Checks `dynamic_entropy_lhs(seq) <= W·H + 2W` with `10⁻⁶·W` slack, where
/// `H` is the entropy of the final counts.
pub fn verify_dynamic_entropy_bound<T: std::hash::Hash + Eq + Copy>(
    sequence: &[T],
) -> Result<(), BoundViolation> {
    assert!(!sequence.is_empty());
    let mut counts: HashMap<T, u64> = HashMap::new();
    for &a in sequence {
        *counts.entry(a).or_insert(0) += 1;
    }
    let counts: Vec<u64> = counts.into_values().collect();
    let w = sequence.len() as f64;
    let h = entropy(&counts).expect("non-empty sequence");
    let lhs = dynamic_entropy_lhs(sequence);
    let rhs = w * h + 2.0 * w;
    if lhs > rhs + 1e-6 * w {
        return Err(BoundViolation::DynamicEntropy { lhs, rhs });
    }
    Ok(())
}
