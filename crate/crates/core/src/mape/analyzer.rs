use serde::{Deserialize, Serialize};

use super::knowledge::{KnowledgeModel, TIME_EPSILON};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierCondition {
    Ok,
    TransientOverload,
    SustainedOverload,
    SustainedUnderuse,
}

impl TierCondition {
    pub fn is_sustained(self) -> bool {
        matches!(
            self,
            TierCondition::SustainedOverload | TierCondition::SustainedUnderuse
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzerParams {
    /// Need above which a sample counts as overloaded.
    pub theta_up: f64,
    /// Need below which a sample counts as underused.
    pub theta_down: f64,
    /// Persistence window D, seconds.
    pub persistence: f64,
    /// Fraction of window samples that must agree for a sustained verdict.
    pub fraction: f64,
}

impl Default for AnalyzerParams {
    fn default() -> Self {
        AnalyzerParams {
            theta_up: 0.1,
            theta_down: -0.5,
            persistence: 30.0,
            fraction: 0.8,
        }
    }
}

impl AnalyzerParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta_down.is_nan() || self.theta_up.is_nan() || self.theta_down >= self.theta_up {
            return Err(SimError::invalid(
                "analyzer.theta_down",
                "must be < theta_up",
            ));
        }
        if !(self.persistence > 0.0 && self.persistence.is_finite()) {
            return Err(SimError::invalid("analyzer.persistence", "must be > 0"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(SimError::invalid("analyzer.fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Classifies every tier from its need-index window.
///
/// A verdict is sustained only when the history reaches back at least the
/// persistence window and enough of the window's samples cross the threshold.
pub fn analyze(k: &KnowledgeModel, params: &AnalyzerParams) -> Result<Vec<TierCondition>> {
    (0..k.n_tiers())
        .map(|tier| {
            let history = &k.need_history[tier];
            let (oldest, newest) = match (history.front(), history.back()) {
                (Some(a), Some(b)) => (a.t, b.t),
                _ => {
                    return Err(SimError::invalid(
                        "knowledge",
                        format!("no need samples for tier {tier}"),
                    ))
                }
            };
            let spans = oldest <= newest - params.persistence + TIME_EPSILON;

            let (mut total, mut over, mut under) = (0usize, 0usize, 0usize);
            for s in k.recent_needs(tier, params.persistence) {
                total += 1;
                if s.value > params.theta_up {
                    over += 1;
                }
                if s.value < params.theta_down {
                    under += 1;
                }
            }
            let share = |count: usize| count as f64 / total as f64;

            Ok(if spans && share(over) >= params.fraction {
                TierCondition::SustainedOverload
            } else if spans && share(under) >= params.fraction {
                TierCondition::SustainedUnderuse
            } else if over > 0 {
                TierCondition::TransientOverload
            } else {
                TierCondition::Ok
            })
        })
        .collect()
}
