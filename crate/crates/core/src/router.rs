//! Shortcut router: instruction-length threshold against the presence score.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoutePath {
    Direct,
    Reason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub threshold: f64,
    pub presence: f64,
    pub path: RoutePath,
}

/// Whitespace word count, floored at 1 so an empty instruction counts as one word.
pub fn word_count(instruction: &str) -> usize {
    instruction.split_whitespace().count().max(1)
}

/// `T = clamp(0.1 · 2^(ℓ−1), 0, 1)`.
pub fn threshold(instruction: &str) -> f64 {
    let l = word_count(instruction);
    // 2^(ℓ−1) overflows nothing here: anything past ℓ = 5 clamps anyway.
    let e = (l - 1).min(16) as i32;
    (0.1 * 2f64.powi(e)).clamp(0.0, 1.0)
}

/// Direct iff `presence >= threshold`; ties take the direct path.
pub fn route(presence: f64, instruction: &str) -> RouteDecision {
    let t = threshold(instruction);
    let path = if presence >= t { RoutePath::Direct } else { RoutePath::Reason };
    RouteDecision { threshold: t, presence, path }
}
