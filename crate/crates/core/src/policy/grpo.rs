/// Floor added to the group standard deviation.
pub const ADVANTAGE_EPS: f64 = 1e-6;
/// Groups whose reward spread is below this get zero advantage.
pub const DEGENERATE_STD: f64 = 1e-8;

/// Group-relative advantages `(r − mean) / (std + ε)` with the population
/// standard deviation.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect()
}

/// `exp(Δ) − Δ − 1`, clamped at zero against rounding.
pub fn k3(delta: f64) -> f64 {
    (delta.exp_m1() - delta).max(0.0)
}

/// k3 estimator with `Δ = log π_ref(τ) − log π_θ(τ)`.
pub fn kl_penalty(log_prob: f64, ref_log_prob: f64) -> f64 {
    k3(ref_log_prob - log_prob)
}
