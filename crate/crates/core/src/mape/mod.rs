//! Supervisory MAPE-K loop.
//!
//! The loop monitors need indices and response times into a [`KnowledgeModel`],
//! classifies each tier as healthy, transiently or persistently overloaded, or
//! persistently underused, plans new `cu_max` values and per-tier set points
//! within the CU budget, and applies them to the plant and its controllers.

mod analyzer;
mod goals;
mod knowledge;
mod planner;

pub use analyzer::{analyze, AnalyzerParams, TierCondition};
pub use goals::{translate_goals, GoalSpec, TechnicalGoals};
pub use knowledge::{KnowledgeModel, Sample};
pub use planner::{execute, plan, AdaptationPlan, PlanInputs, PlannerParams};
