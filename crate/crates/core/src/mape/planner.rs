use serde::{Deserialize, Serialize};

use super::analyzer::TierCondition;
use super::goals::split_with_floor;
use super::knowledge::KnowledgeModel;
use crate::control::PiController;
use crate::error::{Result, SimError};
use crate::ml::Forecast;
use crate::plant::ChainState;

/// Absorbs float noise like `10 * 1.2 = 12.000000000000002` before rounding up.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerParams {
    /// Headroom added on top of the estimated requirement.
    pub margin: f64,
    /// Smallest per-tier set point, seconds.
    pub r_min: f64,
    /// Weight given to observed response times when re-splitting set points.
    pub weight_smoothing: f64,
    /// Lower bound on a re-split weight.
    pub weight_floor: f64,
    /// Forecast horizon used for the proactive floor, seconds.
    pub lookahead: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            margin: 0.1,
            r_min: 0.02,
            weight_smoothing: 0.3,
            weight_floor: 1e-3,
            lookahead: 60.0,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(SimError::invalid("planner.margin", "must be >= 0"));
        }
        if !(self.r_min > 0.0 && self.r_min.is_finite()) {
            return Err(SimError::invalid("planner.r_min", "must be > 0"));
        }
        if !(self.weight_smoothing > 0.0 && self.weight_smoothing <= 1.0) {
            return Err(SimError::invalid(
                "planner.weight_smoothing",
                "must lie in (0, 1]",
            ));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor.is_finite()) {
            return Err(SimError::invalid("planner.weight_floor", "must be > 0"));
        }
        if !(self.lookahead > 0.0 && self.lookahead.is_finite()) {
            return Err(SimError::invalid("planner.lookahead", "must be > 0"));
        }
        Ok(())
    }
}

/// What the learners contribute to a planning round.
#[derive(Debug, Clone, Copy)]
pub struct PlanInputs<'a> {
    pub forecast: Option<&'a Forecast>,
    /// Estimated efficiency per tier.
    pub eta_hat: &'a [f64],
    pub rate_per_cu: &'a [f64],
    /// Window over which needs and response times are averaged, seconds.
    pub persistence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPlan {
    pub new_cu_max: Vec<u32>,
    pub new_setpoints: Vec<f64>,
    pub triggered_by: Vec<TierCondition>,
}

fn ceil_cu(x: f64) -> u32 {
    let c = (x - CEIL_SLACK).ceil();
    if c < 1.0 {
        1
    } else if c > u32::MAX as f64 {
        u32::MAX
    } else {
        c as u32
    }
}

/// Builds the next configuration from the analysis and the knowledge model.
pub fn plan(
    analysis: &[TierCondition],
    k: &KnowledgeModel,
    inputs: &PlanInputs<'_>,
    params: &PlannerParams,
) -> Result<AdaptationPlan> {
    let n = k.n_tiers();
    if analysis.len() != n {
        return Err(SimError::invalid(
            "analysis",
            format!("expected {n} verdicts, got {}", analysis.len()),
        ));
    }
    let budget = k.goals.budget_cap;
    if (budget as usize) < n {
        return Err(SimError::invalid(
            "goal.budget_cap",
            format!("must be >= number of tiers ({n})"),
        ));
    }
    if inputs.forecast.is_some() && (inputs.eta_hat.len() != n || inputs.rate_per_cu.len() != n) {
        return Err(SimError::invalid(
            "plan inputs",
            "per-tier estimates missing",
        ));
    }

    let mean_need: Vec<f64> = (0..n)
        .map(|i| k.mean_need(i, inputs.persistence).unwrap_or(0.0))
        .collect();

    // Reactive sizing: invert the need index, cu_desired = cu_max * (1 + need).
    let mut target: Vec<u32> = Vec::with_capacity(n);
    let mut core: Vec<u32> = Vec::with_capacity(n);
    for i in 0..n {
        let current = k.current_cu_max[i] as f64;
        let required = current * (1.0 + mean_need[i]);
        core.push(ceil_cu(required));
        target.push(if analysis[i].is_sustained() {
            ceil_cu(required * (1.0 + params.margin))
        } else {
            k.current_cu_max[i]
        });
    }

    // Proactive floor from the forecast peak.
    if let Some(fc) = inputs.forecast {
        for ((t, eta), mu) in target
            .iter_mut()
            .zip(inputs.eta_hat)
            .zip(inputs.rate_per_cu)
        {
            let per_cu = eta * mu;
            if per_cu > 0.0 && fc.peak_load > 0.0 {
                let floor = ceil_cu(fc.peak_load * (1.0 + params.margin) / per_cu);
                *t = (*t).max(floor);
            }
        }
    }

    repair_budget(&mut target, &core, &k.current_cu_max, &mean_need, budget);

    let resplit = analysis.iter().any(|&c| c != TierCondition::Ok);
    let new_setpoints = if resplit {
        let alpha = params.weight_smoothing;
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                let current = k.goals.per_tier_setpoints[i];
                let observed = k.mean_response(i, inputs.persistence).unwrap_or(current);
                (alpha * observed + (1.0 - alpha) * current).max(params.weight_floor)
            })
            .collect();
        split_with_floor(k.goals.end_to_end_target, &weights, params.r_min)
    } else {
        k.goals.per_tier_setpoints.clone()
    };

    Ok(AdaptationPlan {
        new_cu_max: target,
        new_setpoints,
        triggered_by: analysis.to_vec(),
    })
}

/// Trims `target` until it fits under `budget`.
///
/// First, in ascending order of mean need, remove headroom down to each
/// tier's margin-free requirement `core`. Then, neediest tier first, cut
/// growth back to what the tier holds now, and finally toward one CU.
/// Ties go to the lower tier index.
fn repair_budget(
    target: &mut [u32],
    core: &[u32],
    current: &[u32],
    mean_need: &[f64],
    budget: u32,
) {
    let budget = budget as u64;
    let mut ascending: Vec<usize> = (0..target.len()).collect();
    ascending.sort_by(|&a, &b| mean_need[a].total_cmp(&mean_need[b]).then(a.cmp(&b)));
    let mut descending = ascending.clone();
    descending.sort_by(|&a, &b| mean_need[b].total_cmp(&mean_need[a]).then(a.cmp(&b)));

    trim(target, &ascending, core, budget);
    trim(target, &descending, current, budget);
    trim(target, &descending, &vec![1; target.len()], budget);
}

fn trim(target: &mut [u32], order: &[usize], floor: &[u32], budget: u64) {
    for &i in order {
        let excess = target
            .iter()
            .map(|&c| c as u64)
            .sum::<u64>()
            .saturating_sub(budget);
        if excess == 0 {
            return;
        }
        let keep = floor[i].max(1).min(target[i]);
        target[i] -= (target[i] - keep).min(excess as u32);
    }
}

/// Applies a plan to the plant and the controllers.
///
/// Returns true when any `cu_max` changed, in which case the reconfiguration
/// counter is bumped.
pub fn execute(
    plan: &AdaptationPlan,
    chain: &mut ChainState,
    controllers: &mut [PiController],
    k: &mut KnowledgeModel,
) -> Result<bool> {
    let n = chain.len();
    if plan.new_cu_max.len() != n || plan.new_setpoints.len() != n || controllers.len() != n {
        return Err(SimError::invalid("plan", "tier count mismatch"));
    }
    if plan.new_cu_max.iter().any(|&c| c < 1) {
        return Err(SimError::invalid(
            "plan.new_cu_max",
            "every tier needs >= 1",
        ));
    }
    let total: u64 = plan.new_cu_max.iter().map(|&c| c as u64).sum();
    if total > k.goals.budget_cap as u64 {
        return Err(SimError::invalid(
            "plan.new_cu_max",
            format!("sum {total} exceeds budget_cap {}", k.goals.budget_cap),
        ));
    }

    for (ctrl, &sp) in controllers.iter_mut().zip(&plan.new_setpoints) {
        ctrl.update_setpoint(sp)?;
    }

    let mut changed = false;
    for ((tier, ctrl), &cu_max) in chain
        .tiers
        .iter_mut()
        .zip(controllers.iter_mut())
        .zip(&plan.new_cu_max)
    {
        if tier.cu_max != cu_max {
            changed = true;
            tier.cu_max = cu_max;
            if tier.cu_allocated > cu_max as f64 {
                tier.cu_allocated = cu_max as f64;
                ctrl.last_cu_allocated = tier.cu_allocated;
            }
        }
    }

    k.current_cu_max.clone_from(&plan.new_cu_max);
    k.goals.per_tier_setpoints.clone_from(&plan.new_setpoints);
    if changed {
        k.reconfig_count += 1;
    }
    Ok(changed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::NeedIndex;
    use crate::mape::goals::{translate_goals, GoalSpec};
    use crate::plant::{TierObservation, TierState};
    use approx::assert_relative_eq;

    fn knowledge(needs: &[f64], cu_max: Vec<u32>, budget: u32) -> KnowledgeModel {
        let spec = GoalSpec {
            budget_cap: budget,
            ..GoalSpec::default()
        };
        let goals = translate_goals(&spec, needs.len(), None).unwrap();
        let mut k = KnowledgeModel::new(goals, cu_max, 300.0).unwrap();
        let obs = TierObservation {
            inflow: 50.0,
            outflow: 50.0,
            queue_level: 14.0,
            response_time: 0.3,
            capacity: 50.0,
        };
        let need_samples: Vec<NeedIndex> = needs.iter().map(|&v| NeedIndex(v)).collect();
        let obs = vec![obs; needs.len()];
        for step in 1..=120 {
            k.monitor(step as f64 * 0.5, &need_samples, &obs, 0.9)
                .unwrap();
        }
        k
    }

    fn inputs<'a>(forecast: Option<&'a Forecast>, eta: &'a [f64], mu: &'a [f64]) -> PlanInputs<'a> {
        PlanInputs {
            forecast,
            eta_hat: eta,
            rate_per_cu: mu,
            persistence: 30.0,
        }
    }

    #[test]
    fn all_ok_without_forecast_is_identity() {
        let k = knowledge(&[0.0, -0.2, 0.05], vec![10, 10, 10], 60);
        let p = plan(
            &[TierCondition::Ok; 3],
            &k,
            &inputs(None, &[], &[]),
            &PlannerParams::default(),
        )
        .unwrap();
        assert_eq!(p.new_cu_max, k.current_cu_max);
        assert_eq!(p.new_setpoints, k.goals.per_tier_setpoints);
    }

    #[test]
    fn sustained_overload_inverts_need_index() {
        let k = knowledge(&[0.0, 0.5, 0.0], vec![10, 10, 10], 60);
        let analysis = [
            TierCondition::Ok,
            TierCondition::SustainedOverload,
            TierCondition::Ok,
        ];
        let p = plan(
            &analysis,
            &k,
            &inputs(None, &[], &[]),
            &PlannerParams::default(),
        )
        .unwrap();
        assert_eq!(p.new_cu_max, vec![10, 17, 10]);
        assert_relative_eq!(p.new_setpoints.iter().sum::<f64>(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn budget_repair_trims_lowest_need_first() {
        let k = knowledge(&[0.5, 0.4, 0.3], vec![10, 10, 10], 45);
        let p = plan(
            &[TierCondition::SustainedOverload; 3],
            &k,
            &inputs(None, &[], &[]),
            &PlannerParams::default(),
        )
        .unwrap();
        assert_eq!(p.new_cu_max, vec![17, 15, 13]);
    }

    #[test]
    fn budget_repair_keeps_healthy_tiers_when_one_tier_explodes() {
        let mut target = vec![66, 10, 10];
        repair_budget(
            &mut target,
            &[60, 10, 10],
            &[40, 10, 10],
            &[5.0, 0.0, 0.0],
            60,
        );
        assert_eq!(target, vec![40, 10, 10]);
    }

    #[test]
    fn repair_trims_growth_of_the_neediest_tier_first() {
        let mut target = vec![40, 15, 15];
        repair_budget(
            &mut target,
            &[35, 14, 13],
            &[10, 10, 10],
            &[2.5, 0.4, 0.3],
            60,
        );
        assert_eq!(target, vec![33, 14, 13]);
    }

    #[test]
    fn repair_keeps_current_holdings_when_growth_suffices() {
        let mut target = vec![30, 100, 40];
        repair_budget(
            &mut target,
            &[22, 91, 36],
            &[34, 14, 12],
            &[-0.4, 5.5, 2.0],
            60,
        );
        assert_eq!(target, vec![22, 14, 24]);
    }

    #[test]
    fn repair_never_goes_below_one() {
        let mut target = vec![50, 50, 50];
        repair_budget(
            &mut target,
            &[50, 50, 50],
            &[50, 50, 50],
            &[1.0, 2.0, 3.0],
            3,
        );
        assert_eq!(target, vec![1, 1, 1]);
    }

    #[test]
    fn underuse_shrinks_but_not_to_zero() {
        let k = knowledge(&[-0.95, 0.0, 0.0], vec![10, 10, 10], 60);
        let analysis = [
            TierCondition::SustainedUnderuse,
            TierCondition::Ok,
            TierCondition::Ok,
        ];
        let p = plan(
            &analysis,
            &k,
            &inputs(None, &[], &[]),
            &PlannerParams::default(),
        )
        .unwrap();
        assert_eq!(p.new_cu_max[0], 1);
    }

    #[test]
    fn forecast_floor_raises_ok_tiers() {
        let k = knowledge(&[0.0, 0.0, 0.0], vec![10, 10, 10], 60);
        let fc = Forecast {
            horizon: 60.0,
            mean_load: 100.0,
            peak_load: 120.0,
        };
        let eta = [1.0, 0.8, 1.0];
        let mu = [10.0; 3];
        let p = plan(
            &[TierCondition::Ok; 3],
            &k,
            &inputs(Some(&fc), &eta, &mu),
            &PlannerParams::default(),
        )
        .unwrap();
        // ceil(120 * 1.1 / 10) = 14; ceil(132 / 8) = 17
        assert_eq!(p.new_cu_max, vec![14, 17, 14]);
        assert_eq!(p.new_setpoints, k.goals.per_tier_setpoints);
    }

    #[test]
    fn budget_below_tier_count_faults() {
        let mut k = knowledge(&[0.0, 0.0], vec![1, 1], 2);
        k.goals.budget_cap = 1;
        assert!(plan(
            &[TierCondition::Ok; 2],
            &k,
            &inputs(None, &[], &[]),
            &PlannerParams::default()
        )
        .is_err());
    }

    fn plant(cu_alloc: f64) -> (ChainState, Vec<PiController>) {
        let tiers = vec![TierState::new(10, 10.0, cu_alloc); 3];
        let ctrls = vec![PiController::new(2.0, 0.5, 0.2, 0.5, 0.3, cu_alloc).unwrap(); 3];
        (ChainState::new(tiers).unwrap(), ctrls)
    }

    #[test]
    fn noop_execute_changes_nothing() {
        let mut k = knowledge(&[0.0, 0.0, 0.0], vec![10, 10, 10], 60);
        let (mut chain, mut ctrls) = plant(5.0);
        let (chain0, ctrls0) = (chain.clone(), ctrls.clone());
        let p = AdaptationPlan {
            new_cu_max: k.current_cu_max.clone(),
            new_setpoints: k.goals.per_tier_setpoints.clone(),
            triggered_by: vec![TierCondition::Ok; 3],
        };
        assert!(!execute(&p, &mut chain, &mut ctrls, &mut k).unwrap());
        assert_eq!(chain, chain0);
        assert_eq!(ctrls, ctrls0);
        assert_eq!(k.reconfig_count, 0);
    }

    #[test]
    fn execute_resizes_one_tier() {
        let mut k = knowledge(&[0.0, 0.0, 0.0], vec![10, 10, 10], 60);
        let (mut chain, mut ctrls) = plant(5.0);
        let p = AdaptationPlan {
            new_cu_max: vec![10, 17, 10],
            new_setpoints: k.goals.per_tier_setpoints.clone(),
            triggered_by: vec![TierCondition::Ok; 3],
        };
        assert!(execute(&p, &mut chain, &mut ctrls, &mut k).unwrap());
        let cu: Vec<u32> = chain.tiers.iter().map(|t| t.cu_max).collect();
        assert_eq!(cu, vec![10, 17, 10]);
        assert_eq!(k.current_cu_max, cu);
        assert_eq!(k.reconfig_count, 1);
    }

    #[test]
    fn execute_clamps_allocation_on_shrink() {
        let mut k = knowledge(&[0.0, 0.0, 0.0], vec![10, 10, 10], 60);
        let (mut chain, mut ctrls) = plant(7.0);
        let p = AdaptationPlan {
            new_cu_max: vec![4, 10, 10],
            new_setpoints: vec![0.4, 0.25, 0.25],
            triggered_by: vec![
                TierCondition::SustainedUnderuse,
                TierCondition::Ok,
                TierCondition::Ok,
            ],
        };
        execute(&p, &mut chain, &mut ctrls, &mut k).unwrap();
        assert_eq!(chain.tiers[0].cu_allocated, 4.0);
        assert_eq!(chain.tiers[1].cu_allocated, 7.0);
        assert_eq!(ctrls[0].setpoint, 0.4);
        assert_eq!(ctrls[0].integral, 7.0);
    }
}
