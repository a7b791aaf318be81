use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::goals::TechnicalGoals;
use crate::control::NeedIndex;
use crate::error::{ensure_finite, Result, SimError};
use crate::ml::Forecast;
use crate::plant::TierObservation;

/// Slack for comparing sample times produced by accumulated step arithmetic.
pub(crate) const TIME_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub value: f64,
}

/// Runtime model shared by the monitor, analyzer, planner and executor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeModel {
    pub need_history: Vec<VecDeque<Sample>>,
    pub response_history: Vec<VecDeque<Sample>>,
    pub end_to_end_history: VecDeque<Sample>,
    pub current_cu_max: Vec<u32>,
    pub goals: TechnicalGoals,
    pub accrued_cost: f64,
    pub reconfig_count: u64,
    pub latest_forecast: Option<Forecast>,
    /// Samples older than this many seconds behind the newest are dropped.
    pub keep_horizon: f64,
}

impl KnowledgeModel {
    pub fn new(goals: TechnicalGoals, cu_max: Vec<u32>, keep_horizon: f64) -> Result<Self> {
        let n = goals.per_tier_setpoints.len();
        if cu_max.len() != n {
            return Err(SimError::invalid(
                "cu_max",
                format!("expected {n} entries, got {}", cu_max.len()),
            ));
        }
        if cu_max.iter().any(|&c| c < 1) {
            return Err(SimError::invalid("cu_max", "every tier needs cu_max >= 1"));
        }
        let total: u64 = cu_max.iter().map(|&c| c as u64).sum();
        if total > goals.budget_cap as u64 {
            return Err(SimError::invalid(
                "cu_max",
                format!("sum {total} exceeds budget_cap {}", goals.budget_cap),
            ));
        }
        if keep_horizon.is_nan() || keep_horizon <= 0.0 {
            return Err(SimError::invalid("keep_horizon", "must be > 0"));
        }
        Ok(KnowledgeModel {
            need_history: vec![VecDeque::new(); n],
            response_history: vec![VecDeque::new(); n],
            end_to_end_history: VecDeque::new(),
            current_cu_max: cu_max,
            goals,
            accrued_cost: 0.0,
            reconfig_count: 0,
            latest_forecast: None,
            keep_horizon,
        })
    }

    pub fn n_tiers(&self) -> usize {
        self.current_cu_max.len()
    }

    pub fn last_sample_time(&self) -> Option<f64> {
        self.end_to_end_history.back().map(|s| s.t)
    }

    /// Appends one sample per tier and trims every window to the keep horizon.
    pub fn monitor(
        &mut self,
        t: f64,
        needs: &[NeedIndex],
        observations: &[TierObservation],
        r_end: f64,
    ) -> Result<()> {
        let n = self.n_tiers();
        if needs.len() != n || observations.len() != n {
            return Err(SimError::invalid(
                "monitor",
                format!(
                    "expected {n} tiers, got {} needs and {} observations",
                    needs.len(),
                    observations.len()
                ),
            ));
        }
        ensure_finite("t", t)?;
        ensure_finite("r_end", r_end)?;
        if let Some(last) = self.last_sample_time() {
            if t < last {
                return Err(SimError::OutOfOrder { t, last });
            }
        }

        let cutoff = t - self.keep_horizon - TIME_EPSILON;
        for (i, (need, obs)) in needs.iter().zip(observations).enumerate() {
            push_trimmed(
                &mut self.need_history[i],
                Sample {
                    t,
                    value: need.value(),
                },
                cutoff,
            );
            push_trimmed(
                &mut self.response_history[i],
                Sample {
                    t,
                    value: obs.response_time,
                },
                cutoff,
            );
        }
        push_trimmed(
            &mut self.end_to_end_history,
            Sample { t, value: r_end },
            cutoff,
        );
        Ok(())
    }

    /// Need samples of `tier` with `t >= newest - span`.
    pub fn recent_needs(&self, tier: usize, span: f64) -> impl Iterator<Item = &Sample> {
        recent(&self.need_history[tier], span)
    }

    pub fn recent_responses(&self, tier: usize, span: f64) -> impl Iterator<Item = &Sample> {
        recent(&self.response_history[tier], span)
    }

    pub fn mean_need(&self, tier: usize, span: f64) -> Option<f64> {
        mean(self.recent_needs(tier, span))
    }

    pub fn mean_response(&self, tier: usize, span: f64) -> Option<f64> {
        mean(self.recent_responses(tier, span))
    }

    /// Adds resource and penalty cost for an interval of `dt` seconds.
    pub fn accrue_cost(&mut self, dt: f64, r_end: f64) -> Result<()> {
        ensure_finite("dt", dt)?;
        if dt <= 0.0 {
            return Err(SimError::invalid("dt", "must be > 0"));
        }
        let provisioned: f64 = self.current_cu_max.iter().map(|&c| c as f64).sum();
        let mut cost = self.goals.cu_price * provisioned * dt;
        if !self.goals.meets_target(r_end) {
            cost += self.goals.penalty_rate * dt;
        }
        self.accrued_cost += cost;
        Ok(())
    }
}

fn push_trimmed(window: &mut VecDeque<Sample>, sample: Sample, cutoff: f64) {
    window.push_back(sample);
    while window.front().is_some_and(|s| s.t < cutoff) {
        window.pop_front();
    }
}

fn recent(window: &VecDeque<Sample>, span: f64) -> impl Iterator<Item = &Sample> {
    let start = window
        .back()
        .map(|s| s.t - span - TIME_EPSILON)
        .unwrap_or(f64::INFINITY);
    window.iter().filter(move |s| s.t >= start)
}

fn mean<'a>(samples: impl Iterator<Item = &'a Sample>) -> Option<f64> {
    let (sum, count) = samples.fold((0.0, 0usize), |(s, c), x| (s + x.value, c + 1));
    (count > 0).then(|| sum / count as f64)
}
