//! Multirate scenario runner.
//!
//! The plant is integrated every `h`. Controllers run every `T_ct`, which is
//! also when a trace record is taken, and the MAPE loop decides every
//! `T_mape`. Both periods are integer multiples of `h`, so the three clocks
//! always line up on integration steps.

use std::collections::VecDeque;

use crate::config::ScenarioConfig;
use crate::control::{need_index, PiController};
use crate::disturbance::{sample_signal, RngStream, SignalKind};
use crate::error::{Result, SimError};
use crate::mape::{
    analyze, execute, plan, translate_goals, KnowledgeModel, PlanInputs, TechnicalGoals,
};
use crate::ml::{EfficiencyEstimator, SeasonalForecaster};
use crate::plant::{ChainState, TierObservation, TierState};
use crate::trace::{summarize, ForecastPair, RunSummary, TierRecord, TraceRecord};

/// Stream id of the load signal; tier `i` efficiency uses `EFFICIENCY_CHANNEL_BASE + i`.
pub const LOAD_CHANNEL: u64 = 0;
pub const EFFICIENCY_CHANNEL_BASE: u64 = 1;

/// One integration step, exposed to probes.
#[derive(Debug)]
pub struct StepProbe<'a> {
    pub step: u64,
    pub t: f64,
    pub dt: f64,
    pub r_in: f64,
    pub before: &'a [TierState],
    pub after: &'a [TierState],
    pub observations: &'a [TierObservation],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
    pub forecasts: Vec<ForecastPair>,
    pub goals: TechnicalGoals,
    /// Simulated times at which the MAPE loop changed some `cu_max`.
    pub reconfig_times: Vec<f64>,
}

#[derive(Debug)]
struct PendingForecast {
    t_issue: f64,
    predicted: f64,
    naive: f64,
    sum: f64,
    samples: u64,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput> {
    run_scenario_with_probe(config, |_| {})
}

/// Runs a scenario, calling `probe` after every integration step.
pub fn run_scenario_with_probe<F>(config: &ScenarioConfig, mut probe: F) -> Result<RunOutput>
where
    F: FnMut(&StepProbe<'_>),
{
    config.validate()?;
    let n = config.n_tiers;
    let h = config.h;
    let goals = translate_goals(&config.goal, n, config.goal.weights.as_deref())?;

    let tiers: Vec<TierState> = config
        .tiers
        .iter()
        .map(|tc| TierState::new(tc.cu_max, tc.rate_per_cu, tc.initial_cu()))
        .collect();
    let mut chain = ChainState::new(tiers)?;
    let mut controllers: Vec<PiController> = config
        .tiers
        .iter()
        .zip(&goals.per_tier_setpoints)
        .map(|(tc, &sp)| {
            PiController::new(
                tc.kp,
                tc.ki,
                tc.tracking_gain(config.t_ct),
                config.t_ct,
                sp,
                tc.initial_cu(),
            )
        })
        .collect::<Result<_>>()?;
    let mut knowledge = KnowledgeModel::new(
        goals.clone(),
        config.tiers.iter().map(|t| t.cu_max).collect(),
        config.monitor_window_periods * config.t_mape,
    )?;

    let mut forecaster = SeasonalForecaster::new(
        config.ml.period,
        config.ml.bins,
        config.ml.residual_smoothing,
    )?;
    let mut estimators = vec![EfficiencyEstimator::new(config.ml.efficiency_smoothing)?; n];
    let horizon = config.planner.lookahead;
    let mut pending: VecDeque<PendingForecast> = VecDeque::new();
    let mut forecasts = Vec::new();

    let load_stream = RngStream::new(config.seed, LOAD_CHANNEL);
    let eff_streams: Vec<RngStream> = (0..n as u64)
        .map(|i| RngStream::new(config.seed, EFFICIENCY_CHANNEL_BASE + i))
        .collect();

    let ct_every = config.ct_every();
    let mape_every = config.mape_every();
    let mut trace = Vec::with_capacity((config.n_steps() / ct_every) as usize);
    let mut reconfig_times = Vec::new();

    for step in 0..config.n_steps() {
        let t = step as f64 * h;
        let r_in = sample_signal(&config.load, SignalKind::Load, t, &load_stream);
        for ((tier, spec), stream) in chain
            .tiers
            .iter_mut()
            .zip(&config.efficiency)
            .zip(&eff_streams)
        {
            tier.efficiency = sample_signal(spec, SignalKind::Efficiency, t, stream);
        }

        let before = chain.tiers.clone();
        let stepped = chain.step(r_in, h).map_err(|e| runtime_fault(e, step, t))?;
        probe(&StepProbe {
            step,
            t,
            dt: h,
            r_in,
            before: &before,
            after: &chain.tiers,
            observations: &stepped.observations,
        });
        check_state(&chain, step, t)?;

        let tick = step + 1;
        for p in pending.iter_mut() {
            p.sum += r_in;
            p.samples += 1;
        }
        while pending
            .front()
            .is_some_and(|p| p.t_issue + horizon <= tick as f64 * h + 1e-9)
        {
            let p = pending.pop_front().expect("front checked");
            forecasts.push(ForecastPair {
                t_issue: p.t_issue,
                horizon,
                predicted: p.predicted,
                naive: p.naive,
                actual: p.sum / p.samples.max(1) as f64,
            });
        }

        if tick % ct_every != 0 {
            continue;
        }
        let t_tick = tick as f64 * h;

        if config.ml_enabled {
            forecaster.observe(t, r_in)?;
            for ((est, obs), tier) in estimators
                .iter_mut()
                .zip(&stepped.observations)
                .zip(&chain.tiers)
            {
                est.update(obs, tier.cu_allocated, tier.rate_per_cu);
            }
        }

        // CT layer.
        let mut needs = Vec::with_capacity(n);
        let mut measured = Vec::with_capacity(n);
        for ((tier, ctrl), obs) in chain
            .tiers
            .iter_mut()
            .zip(&mut controllers)
            .zip(&stepped.observations)
        {
            let response = tier.response_time();
            let cu_max = tier.cu_max as f64;
            let out = ctrl
                .update(response, cu_max)
                .map_err(|e| runtime_fault(e, step, t_tick))?;
            needs.push(
                need_index(out.cu_desired, cu_max).map_err(|e| runtime_fault(e, step, t_tick))?,
            );
            tier.cu_allocated = out.cu_allocated;
            measured.push(TierObservation {
                response_time: response,
                ..*obs
            });
        }
        let r_end: f64 = measured.iter().map(|o| o.response_time).sum();

        if config.mape_enabled {
            knowledge.monitor(t_tick, &needs, &measured, r_end)?;
        }

        if tick % mape_every == 0 {
            knowledge.accrue_cost(config.t_mape, r_end)?;

            if config.ml_enabled {
                let forecast = forecaster.predict(t_tick, horizon)?;
                if let Some(fc) = forecast {
                    pending.push_back(PendingForecast {
                        t_issue: t_tick,
                        predicted: fc.mean_load,
                        naive: r_in,
                        sum: 0.0,
                        samples: 0,
                    });
                }
                knowledge.latest_forecast = forecast;
            }

            if config.mape_enabled {
                let analysis = analyze(&knowledge, &config.analyzer)?;
                let eta_hat: Vec<f64> = estimators.iter().map(|e| e.eta_hat).collect();
                let rate_per_cu: Vec<f64> = chain.tiers.iter().map(|t| t.rate_per_cu).collect();
                let forecast = if config.ml_enabled {
                    knowledge.latest_forecast
                } else {
                    None
                };
                let inputs = PlanInputs {
                    forecast: forecast.as_ref(),
                    eta_hat: &eta_hat,
                    rate_per_cu: &rate_per_cu,
                    persistence: config.analyzer.persistence,
                };
                let adaptation = plan(&analysis, &knowledge, &inputs, &config.planner)?;
                if execute(&adaptation, &mut chain, &mut controllers, &mut knowledge)? {
                    reconfig_times.push(t_tick);
                }
            }
        }

        trace.push(TraceRecord {
            t: t_tick,
            r_in,
            tiers: chain
                .tiers
                .iter()
                .zip(&measured)
                .zip(&needs)
                .zip(&estimators)
                .map(|(((tier, obs), need), est)| TierRecord {
                    queue: tier.queue_level,
                    response_time: obs.response_time,
                    cu_allocated: tier.cu_allocated,
                    cu_max: tier.cu_max,
                    need: need.value(),
                    efficiency: tier.efficiency,
                    eta_hat: est.eta_hat,
                })
                .collect(),
            r_end,
            setpoints: controllers.iter().map(|c| c.setpoint).collect(),
            accrued_cost: knowledge.accrued_cost,
            reconfig_count: knowledge.reconfig_count,
        });
    }

    let summary = summarize(&trace, &goals, &forecasts, config.ml.period);
    Ok(RunOutput {
        trace,
        summary,
        forecasts,
        goals,
        reconfig_times,
    })
}

fn runtime_fault(err: SimError, tick: u64, t: f64) -> SimError {
    match err {
        SimError::NonFinite { field, value } => SimError::Runtime {
            tick,
            t,
            field,
            value,
        },
        other => other,
    }
}

fn check_state(chain: &ChainState, tick: u64, t: f64) -> Result<()> {
    for (i, tier) in chain.tiers.iter().enumerate() {
        for (name, value) in [
            ("queue_level", tier.queue_level),
            ("cu_allocated", tier.cu_allocated),
        ] {
            if !value.is_finite() {
                return Err(SimError::Runtime {
                    tick,
                    t,
                    field: format!("tiers.{i}.{name}"),
                    value,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn zero_duration_run_is_empty() {
        let cfg = parse_config(r#"{"duration": 0}"#).unwrap();
        let out = run_scenario(&cfg).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.summary.total_cost, 0.0);
        assert_eq!(out.summary.sla_compliance_fraction, 0.0);
    }

    #[test]
    fn one_record_per_ct_tick() {
        let cfg = parse_config(r#"{"duration": 10}"#).unwrap();
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.trace.len(), 20);
        assert!((out.trace[0].t - 0.5).abs() < 1e-12);
        assert!((out.trace[19].t - 10.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_trace() {
        let text = r#"{"duration": 120, "seed": 9, "mape_enabled": true, "ml_enabled": true,
            "load": {"kind": "piecewise_random", "mean": 60, "spread": 30, "dwell": 7}}"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
    }

    #[test]
    fn probe_sees_every_step() {
        let cfg = parse_config(r#"{"duration": 3}"#).unwrap();
        let mut steps = 0;
        run_scenario_with_probe(&cfg, |p| {
            assert_eq!(p.before.len(), 3);
            steps += 1;
        })
        .unwrap();
        assert_eq!(steps, 60);
    }
}
