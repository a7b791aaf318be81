use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, SimError};

/// Owner-level goals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoalSpec {
    /// End-to-end response time promised by the SLA, seconds.
    pub sla_response_time: f64,
    /// Upper bound on the summed `cu_max` across tiers.
    pub budget_cap: u32,
    /// Cost per second spent in SLA violation.
    pub penalty_rate: f64,
    /// Cost per provisioned CU per second.
    pub cu_price: f64,
    /// Optional relative weights for the initial set-point split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for GoalSpec {
    fn default() -> Self {
        GoalSpec {
            sla_response_time: 0.9,
            budget_cap: 60,
            penalty_rate: 1.0,
            cu_price: 0.01,
            weights: None,
        }
    }
}

/// Goals in the units the MAPE loop reasons with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnicalGoals {
    pub end_to_end_target: f64,
    pub per_tier_setpoints: Vec<f64>,
    pub budget_cap: u32,
    pub penalty_rate: f64,
    pub cu_price: f64,
}

/// Relative slack when comparing a response time to the target. Exact
/// tracking lands on the target up to rounding.
pub const TARGET_TOLERANCE: f64 = 1e-9;

impl TechnicalGoals {
    pub fn meets_target(&self, r_end: f64) -> bool {
        r_end <= self.end_to_end_target * (1.0 + TARGET_TOLERANCE)
    }
}

pub fn translate_goals(
    spec: &GoalSpec,
    n: usize,
    weights: Option<&[f64]>,
) -> Result<TechnicalGoals> {
    if n == 0 {
        return Err(SimError::invalid("n_tiers", "must be >= 1"));
    }
    ensure_finite("goal.sla_response_time", spec.sla_response_time)?;
    if spec.sla_response_time <= 0.0 {
        return Err(SimError::invalid("goal.sla_response_time", "must be > 0"));
    }
    if (spec.budget_cap as usize) < n {
        return Err(SimError::invalid(
            "goal.budget_cap",
            format!("must be >= number of tiers ({n})"),
        ));
    }
    for (field, value) in [
        ("goal.penalty_rate", spec.penalty_rate),
        ("goal.cu_price", spec.cu_price),
    ] {
        ensure_finite(field, value)?;
        if value < 0.0 {
            return Err(SimError::invalid(field, "must be >= 0"));
        }
    }

    let per_tier_setpoints = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(SimError::invalid(
                    "goal.weights",
                    format!("expected {n} weights, got {}", w.len()),
                ));
            }
            if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(SimError::invalid(
                    "goal.weights",
                    "weights must be positive",
                ));
            }
            proportional_split(spec.sla_response_time, w)
        }
        None => vec![spec.sla_response_time / n as f64; n],
    };

    Ok(TechnicalGoals {
        end_to_end_target: spec.sla_response_time,
        per_tier_setpoints,
        budget_cap: spec.budget_cap,
        penalty_rate: spec.penalty_rate,
        cu_price: spec.cu_price,
    })
}

/// `target * w_i / sum(w)`.
pub(crate) fn proportional_split(target: f64, weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| target * w / total).collect()
}

/// Proportional split in which every share is at least `floor`.
///
/// Shares that fall below the floor are pinned to it and the remainder is
/// re-split over the others until no new share is pinned.
pub(crate) fn split_with_floor(target: f64, weights: &[f64], floor: f64) -> Vec<f64> {
    let n = weights.len();
    let mut pinned = vec![false; n];
    loop {
        let free_weight: f64 = (0..n).filter(|&i| !pinned[i]).map(|i| weights[i]).sum();
        let pinned_count = pinned.iter().filter(|&&p| p).count();
        let remaining = target - floor * pinned_count as f64;
        let shares: Vec<f64> = (0..n)
            .map(|i| {
                if pinned[i] {
                    floor
                } else {
                    remaining * weights[i] / free_weight
                }
            })
            .collect();
        let mut changed = false;
        for i in 0..n {
            if !pinned[i] && shares[i] < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed || pinned.iter().all(|&p| p) {
            return shares;
        }
    }
}
