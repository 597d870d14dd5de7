//! Group-relative policy optimization on whole-output log-probabilities.
//!
//! For a group of `G` outputs sampled for one question the per-output term is
//!
//! ```text
//! min(ρ·A, clip(ρ, 1-ε, 1+ε)·A) − β·(r − ln r − 1)
//! ρ = π_θ(o)/π_old(o),   r = π_ref(o)/π_θ(o)
//! ```
//!
//! and the group objective is the mean of those terms. Advantages are the
//! rewards standardized within the group, so no value network is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-ratios are clamped into this band before exponentiation.
pub const LOG_RATIO_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            std_floor: 1e-6,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::invalid(format!(
                "group size must be at least 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "clip epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return Err(Error::invalid(format!(
                "KL beta must be finite and >= 0, got {}",
                self.kl_beta
            )));
        }
        if !(self.std_floor.is_finite() && self.std_floor > 0.0) {
            return Err(Error::invalid(format!(
                "std floor must be positive, got {}",
                self.std_floor
            )));
        }
        Ok(())
    }
}

/// Whole-output log-probabilities of one sampled output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub logp_current: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
}

impl PolicyEval {
    /// All three policies agree, as right after snapshotting.
    pub fn at(logp: f64) -> Self {
        Self {
            logp_current: logp,
            logp_old: logp,
            logp_ref: logp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub question_id: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub evals: Vec<PolicyEval>,
}

impl Group {
    /// Builds a group and standardizes its rewards into advantages.
    pub fn new(
        question_id: impl Into<String>,
        rewards: Vec<f64>,
        evals: Vec<PolicyEval>,
        std_floor: f64,
    ) -> Result<Self> {
        let advantages = compute_advantages(&rewards, std_floor)?;
        let group = Self {
            question_id: question_id.into(),
            rewards,
            advantages,
            evals,
        };
        group.check_lengths()?;
        Ok(group)
    }

    pub fn len(&self) -> usize {
        self.evals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evals.is_empty()
    }

    fn check_lengths(&self) -> Result<()> {
        let g = self.evals.len();
        if self.rewards.len() != g || self.advantages.len() != g {
            return Err(Error::invalid(format!(
                "group '{}': {} rewards, {} advantages, {} evals",
                self.question_id,
                self.rewards.len(),
                self.advantages.len(),
                g
            )));
        }
        Ok(())
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes rewards within a group: `(R_i − mean) / std` with the population std.
///
/// Groups whose spread is below `std_floor` get all-zero advantages.
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("cannot compute advantages of an empty group"));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::invalid(format!("reward is not finite: {bad}")));
    }
    let (mean, std) = mean_std(rewards);
    if std < std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    let mut adv: Vec<f64> = rewards.iter().map(|r| (r - mean) / std).collect();
    // one recentring pass removes the rounding left in the first mean
    let residual = adv.iter().sum::<f64>() / adv.len() as f64;
    for a in &mut adv {
        *a -= residual;
    }
    Ok(adv)
}

fn clamp_log_ratio(x: f64) -> f64 {
    x.clamp(-LOG_RATIO_BOUND, LOG_RATIO_BOUND)
}

/// `r − ln r − 1` with `r = π_ref/π_θ`; non-negative and zero only at `r = 1`.
pub fn kl_estimate(logp_current: f64, logp_ref: f64) -> f64 {
    let log_r = clamp_log_ratio(logp_ref - logp_current);
    // exp_m1 keeps precision near r = 1
    log_r.exp_m1() - log_r
}

pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

fn check_group(group: &Group, cfg: &GrpoConfig) -> Result<()> {
    cfg.validate()?;
    group.check_lengths()?;
    if group.len() < 2 {
        return Err(Error::invalid(format!(
            "group '{}' has {} members; at least 2 are required",
            group.question_id,
            group.len()
        )));
    }
    if group.len() != cfg.group_size {
        return Err(Error::invalid(format!(
            "group '{}' has {} members but the configured group size is {}",
            group.question_id,
            group.len(),
            cfg.group_size
        )));
    }
    for (i, e) in group.evals.iter().enumerate() {
        if !(e.logp_current.is_finite() && e.logp_old.is_finite() && e.logp_ref.is_finite()) {
            return Err(Error::invalid(format!(
                "group '{}' member {i}: non-finite log-probability",
                group.question_id
            )));
        }
    }
    Ok(())
}

/// Mean over the group of the clipped surrogate minus the KL penalty.
pub fn group_objective(group: &Group, cfg: &GrpoConfig) -> Result<f64> {
    check_group(group, cfg)?;
    let total: f64 = group
        .evals
        .iter()
        .zip(&group.advantages)
        .map(|(e, &a)| {
            let ratio = clamp_log_ratio(e.logp_current - e.logp_old).exp();
            clipped_term(ratio, a, cfg.clip_epsilon) - cfg.kl_beta * kl_estimate(e.logp_current, e.logp_ref)
        })
        .sum();
    Ok(total / group.len() as f64)
}

/// Sensitivity of [`group_objective`] to each member's `logp_current`.
///
/// `old` and `ref` log-probabilities are constants. Where the min selects the
/// clipped branch outside the band the clipped value does not depend on θ, so
/// that member contributes nothing; ties inside the band use the unclipped
/// derivative. Clamped log-ratios also have zero derivative.
pub fn logp_weights(group: &Group, cfg: &GrpoConfig) -> Result<Vec<f64>> {
    check_group(group, cfg)?;
    let g = group.len() as f64;
    let eps = cfg.clip_epsilon;
    Ok(group
        .evals
        .iter()
        .zip(&group.advantages)
        .map(|(e, &a)| {
            let raw = e.logp_current - e.logp_old;
            let surrogate = if raw.abs() > LOG_RATIO_BOUND {
                0.0
            } else {
                let ratio = raw.exp();
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
                if ratio * a <= clipped * a {
                    ratio * a
                } else {
                    0.0
                }
            };
            // d/dlogp_current of −β(r − ln r − 1) with ln r = logp_ref − logp_current
            let raw_ref = e.logp_ref - e.logp_current;
            let penalty = if raw_ref.abs() > LOG_RATIO_BOUND {
                0.0
            } else {
                cfg.kl_beta * raw_ref.exp_m1()
            };
            (surrogate + penalty) / g
        })
        .collect())
}

/// Gradient of [`group_objective`] with respect to the policy parameters.
///
/// `dlogp[i]` is the parameter gradient of member `i`'s current log-probability.
pub fn objective_gradient(group: &Group, cfg: &GrpoConfig, dlogp: &[Vec<f64>]) -> Result<Vec<f64>> {
    let weights = logp_weights(group, cfg)?;
    if dlogp.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} gradients supplied for a group of {}",
            dlogp.len(),
            weights.len()
        )));
    }
    let dim = dlogp[0].len();
    if let Some((i, d)) = dlogp.iter().enumerate().find(|(_, d)| d.len() != dim) {
        return Err(Error::invalid(format!(
            "gradient {i} has dimension {} but gradient 0 has {dim}",
            d.len()
        )));
    }
    let mut grad = vec![0.0; dim];
    for (w, d) in weights.iter().zip(dlogp) {
        if *w == 0.0 {
            continue;
        }
        for (g, x) in grad.iter_mut().zip(d) {
            *g += w * x;
        }
    }
    Ok(grad)
}
