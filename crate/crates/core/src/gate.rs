//! Group statistics, advantage normalization and the variance-aware
//! resampling gate.

use std::str::FromStr;

use bigdecimal::BigDecimal;
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ops::Pipeline;
use crate::reward::{ratio_to_f64, Ratio};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GateError {
    #[error("reward group is empty")]
    EmptyGroup,
    #[error("advantages need at least 2 group members, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid gate config: {0}")]
    BadConfig(String),
    #[error("candidate source failed: {0}")]
    Source(String),
    #[error("reward {0} is not a finite number")]
    NonFinite(f64),
}

/// Exact rational for the shortest decimal rendering of `x`, so `0.9`
/// becomes 9/10 rather than the nearest binary fraction.
pub fn ratio_from_f64(x: f64) -> Result<Ratio, GateError> {
    if !x.is_finite() {
        return Err(GateError::NonFinite(x));
    }
    let d = BigDecimal::from_str(&format!("{x}")).map_err(|_| GateError::NonFinite(x))?;
    let (digits, scale) = d.as_bigint_and_exponent();
    Ok(if scale >= 0 {
        Ratio::new(digits, BigInt::from(10u8).pow(scale as u32))
    } else {
        Ratio::from_integer(digits * BigInt::from(10u8).pow((-scale) as u32))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub mean: Ratio,
    /// Population variance.
    pub variance: Ratio,
    pub std: f64,
    pub max: Ratio,
}

pub fn group_stats(rewards: &[Ratio]) -> Result<GroupStats, GateError> {
    let n = rewards.len();
    if n == 0 {
        return Err(GateError::EmptyGroup);
    }
    let len = Ratio::from_integer(BigInt::from(n));
    let mean = rewards.iter().fold(Ratio::zero(), |a, r| a + r) / &len;
    let variance = rewards
        .iter()
        .map(|r| {
            let d = r - &mean;
            &d * &d
        })
        .fold(Ratio::zero(), |a, r| a + r)
        / &len;
    let std = variance.to_f64().unwrap_or(f64::NAN).sqrt();
    let max = rewards.iter().max().cloned().expect("non-empty");
    Ok(GroupStats {
        mean,
        variance,
        std,
        max,
    })
}

/// `A_i = (R_i − μ) / (σ + ε)` with population σ. The denominator is made
/// exact once, so the advantages sum to exactly zero.
pub fn advantages(rewards: &[Ratio], eps: f64) -> Result<Vec<Ratio>, GateError> {
    if rewards.len() < 2 {
        return Err(GateError::GroupTooSmall(rewards.len()));
    }
    let stats = group_stats(rewards)?;
    let denom = Ratio::from_float(stats.std + eps)
        .filter(|d| !d.is_zero())
        .ok_or_else(|| GateError::BadConfig(format!("σ + ε = {} is not usable", stats.std + eps)))?;
    Ok(rewards.iter().map(|r| (r - &stats.mean) / &denom).collect())
}

pub fn advantages_f64(rewards: &[f64], eps: f64) -> Result<Vec<f64>, GateError> {
    let exact = rewards.iter().map(|&r| ratio_from_f64(r)).collect::<Result<Vec<_>, _>>()?;
    Ok(advantages(&exact, eps)?.iter().map(ratio_to_f64).collect())
}

fn default_var() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    0.5
}
fn default_adv_eps() -> f64 {
    1e-6
}
fn default_attempts() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateConfig {
    #[serde(default = "default_var", alias = "ε_var")]
    pub variance_threshold: f64,
    #[serde(default = "default_tau", alias = "τ")]
    pub quality_threshold: f64,
    #[serde(default = "default_adv_eps", alias = "ε_adv")]
    pub advantage_epsilon: f64,
    #[serde(default = "default_attempts")]
    pub max_resample_attempts: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            variance_threshold: default_var(),
            quality_threshold: default_tau(),
            advantage_epsilon: default_adv_eps(),
            max_resample_attempts: default_attempts(),
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), GateError> {
        let bad = |m: &str| Err(GateError::BadConfig(m.into()));
        if !(self.variance_threshold >= 0.0 && self.variance_threshold.is_finite()) {
            return bad("variance_threshold must be >= 0");
        }
        if !self.quality_threshold.is_finite() {
            return bad("quality_threshold must be finite");
        }
        if !(self.advantage_epsilon > 0.0 && self.advantage_epsilon.is_finite()) {
            return bad("advantage_epsilon must be > 0");
        }
        if self.max_resample_attempts == 0 {
            return bad("max_resample_attempts must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    LowVariance,
    LowQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

/// Variance is checked before quality, so a group failing both is reported
/// as `LowVariance`.
pub fn vgr_accept(rewards: &[Ratio], cfg: &GateConfig) -> Result<Verdict, GateError> {
    let stats = group_stats(rewards)?;
    if stats.variance < ratio_from_f64(cfg.variance_threshold)? {
        return Ok(Verdict::Rejected(RejectReason::LowVariance));
    }
    if stats.max < ratio_from_f64(cfg.quality_threshold)? {
        return Ok(Verdict::Rejected(RejectReason::LowQuality));
    }
    Ok(Verdict::Accepted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub output_text: String,
    pub pipeline: Option<Pipeline>,
    pub reward: Ratio,
}

/// Produces freshly scored candidate groups on demand.
pub trait CandidateSource {
    fn draw(&mut self, attempt: usize, group_size: usize) -> Result<Vec<ScoredCandidate>, GateError>;
}

impl<F> CandidateSource for F
where
    F: FnMut(usize, usize) -> Result<Vec<ScoredCandidate>, GateError>,
{
    fn draw(&mut self, attempt: usize, group_size: usize) -> Result<Vec<ScoredCandidate>, GateError> {
        self(attempt, group_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub members: Vec<ScoredCandidate>,
    pub advantages: Vec<Ratio>,
    /// 1-based attempt on which the group was accepted.
    pub attempts: usize,
    pub rejected_reasons: Vec<RejectReason>,
}

impl CandidateGroup {
    pub fn rewards(&self) -> Vec<Ratio> {
        self.members.iter().map(|m| m.reward.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateOutcome {
    Accepted(CandidateGroup),
    Exhausted { rejected_reasons: Vec<RejectReason> },
}

/// Draws whole groups until one passes the gate, giving up after
/// `max_resample_attempts` rejections.
pub fn sample_accepted_group(
    source: &mut dyn CandidateSource,
    group_size: usize,
    cfg: &GateConfig,
) -> Result<GateOutcome, GateError> {
    cfg.validate()?;
    if group_size < 2 {
        return Err(GateError::GroupTooSmall(group_size));
    }
    let mut reasons = Vec::new();
    for attempt in 1..=cfg.max_resample_attempts {
        let members = source.draw(attempt, group_size)?;
        let rewards: Vec<Ratio> = members.iter().map(|m| m.reward.clone()).collect();
        match vgr_accept(&rewards, cfg)? {
            Verdict::Accepted => {
                let advantages = advantages(&rewards, cfg.advantage_epsilon)?;
                return Ok(GateOutcome::Accepted(CandidateGroup {
                    members,
                    advantages,
                    attempts: attempt,
                    rejected_reasons: reasons,
                }));
            }
            Verdict::Rejected(r) => {
                log::debug!("attempt {attempt}: group rejected ({r:?})");
                reasons.push(r);
            }
        }
    }
    Ok(GateOutcome::Exhausted {
        rejected_reasons: reasons,
    })
}

/// One JSONL line for an external trainer.
pub fn group_record(instance_id: &str, group: &CandidateGroup) -> serde_json::Value {
    json!({
        "instance_id": instance_id,
        "rewards": group.members.iter().map(|m| ratio_to_f64(&m.reward)).collect::<Vec<_>>(),
        "advantages": group.advantages.iter().map(ratio_to_f64).collect::<Vec<_>>(),
        "attempts": group.attempts,
        "rejected_reasons": group.rejected_reasons,
    })
}
