//! Scenario definition and JSON parsing.
//!
//! Every field has a default, so `{"duration": 600}` is a complete scenario.
//! Unknown keys are rejected at every level. After parsing, per-tier lists are
//! expanded to `n_tiers` entries so that serializing a parsed config and
//! parsing it again yields the same value.

use serde::{Deserialize, Serialize};

use crate::disturbance::{DisturbanceSpec, SignalKind};
use crate::error::{Result, SimError};
use crate::mape::{translate_goals, AnalyzerParams, GoalSpec, PlannerParams};

/// Relative tolerance for "is an integer multiple of h".
const MULTIPLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TierConfig {
    /// Requests per second per CU at full efficiency.
    pub rate_per_cu: f64,
    pub cu_max: u32,
    /// Allocation and integral state at t = 0. Defaults to half of `cu_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_cu: Option<f64>,
    pub kp: f64,
    pub ki: f64,
    /// Back-calculation gain. Defaults to `1 / (10 * T_ct)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking_gain: Option<f64>,
}

impl Default for TierConfig {
    fn default() -> Self {
        TierConfig {
            rate_per_cu: 10.0,
            cu_max: 10,
            initial_cu: None,
            kp: 2.0,
            ki: 0.5,
            tracking_gain: None,
        }
    }
}

impl TierConfig {
    pub fn initial_cu(&self) -> f64 {
        self.initial_cu.unwrap_or(self.cu_max as f64 / 2.0)
    }

    pub fn tracking_gain(&self, t_ct: f64) -> f64 {
        self.tracking_gain.unwrap_or(1.0 / (10.0 * t_ct))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlParams {
    /// Seasonal period of the load model, seconds.
    pub period: f64,
    pub bins: usize,
    pub residual_smoothing: f64,
    pub efficiency_smoothing: f64,
}

impl Default for MlParams {
    fn default() -> Self {
        MlParams {
            period: 600.0,
            bins: 24,
            residual_smoothing: 0.3,
            efficiency_smoothing: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_tiers: usize,
    /// Simulated seconds.
    pub duration: f64,
    /// Integration step, seconds.
    pub h: f64,
    #[serde(rename = "T_ct")]
    pub t_ct: f64,
    #[serde(rename = "T_mape")]
    pub t_mape: f64,
    pub seed: u64,
    pub tiers: Vec<TierConfig>,
    pub goal: GoalSpec,
    pub analyzer: AnalyzerParams,
    pub planner: PlannerParams,
    pub ml: MlParams,
    /// Knowledge windows keep this many MAPE periods of samples.
    pub monitor_window_periods: f64,
    pub load: DisturbanceSpec,
    /// One spec per tier; empty means constant 1.
    pub efficiency: Vec<DisturbanceSpec>,
    pub mape_enabled: bool,
    pub ml_enabled: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_tiers: 3,
            duration: 600.0,
            h: 0.05,
            t_ct: 0.5,
            t_mape: 60.0,
            seed: 1,
            tiers: Vec::new(),
            goal: GoalSpec::default(),
            analyzer: AnalyzerParams::default(),
            planner: PlannerParams::default(),
            ml: MlParams::default(),
            monitor_window_periods: 5.0,
            load: DisturbanceSpec::constant(50.0),
            efficiency: Vec::new(),
            mape_enabled: false,
            ml_enabled: false,
        }
    }
}

fn is_multiple(x: f64, of: f64) -> bool {
    let ratio = x / of;
    (ratio - ratio.round()).abs() <= MULTIPLE_TOLERANCE * ratio.abs().max(1.0)
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(SimError::invalid(
            field,
            format!("must be a finite number > 0, got {value}"),
        ))
    }
}

impl ScenarioConfig {
    /// Fills per-tier lists from defaults, then checks every invariant.
    pub fn resolve(mut self) -> Result<Self> {
        if self.n_tiers == 0 {
            return Err(SimError::invalid("n_tiers", "must be >= 1"));
        }
        if self.tiers.is_empty() {
            self.tiers = vec![TierConfig::default(); self.n_tiers];
        }
        if self.efficiency.is_empty() {
            self.efficiency = vec![DisturbanceSpec::constant(1.0); self.n_tiers];
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_tiers;
        if n == 0 {
            return Err(SimError::invalid("n_tiers", "must be >= 1"));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(SimError::invalid(
                "duration",
                "must be a finite number >= 0",
            ));
        }
        positive("h", self.h)?;
        positive("T_ct", self.t_ct)?;
        positive("T_mape", self.t_mape)?;
        if self.t_ct < self.h {
            return Err(SimError::invalid("T_ct", "must be >= h"));
        }
        if self.t_mape < self.t_ct {
            return Err(SimError::invalid("T_mape", "must be >= T_ct"));
        }
        if !is_multiple(self.t_ct, self.h) {
            return Err(SimError::invalid(
                "T_ct",
                "must be an integer multiple of h",
            ));
        }
        if !is_multiple(self.t_mape, self.h) {
            return Err(SimError::invalid(
                "T_mape",
                "must be an integer multiple of h",
            ));
        }
        if !is_multiple(self.t_mape, self.t_ct) {
            return Err(SimError::invalid(
                "T_mape",
                "must be an integer multiple of T_ct",
            ));
        }

        if self.tiers.len() != n {
            return Err(SimError::invalid(
                "tiers",
                format!("has {} entries but n_tiers is {n}", self.tiers.len()),
            ));
        }
        for (i, tier) in self.tiers.iter().enumerate() {
            positive(&format!("tiers.{i}.rate_per_cu"), tier.rate_per_cu)?;
            positive(&format!("tiers.{i}.kp"), tier.kp)?;
            positive(&format!("tiers.{i}.ki"), tier.ki)?;
            positive(
                &format!("tiers.{i}.tracking_gain"),
                tier.tracking_gain(self.t_ct),
            )?;
            if tier.cu_max < 1 {
                return Err(SimError::invalid(
                    format!("tiers.{i}.cu_max"),
                    "must be >= 1",
                ));
            }
            let init = tier.initial_cu();
            if !(init.is_finite() && init >= 0.0 && init <= tier.cu_max as f64) {
                return Err(SimError::invalid(
                    format!("tiers.{i}.initial_cu"),
                    format!("must lie in [0, {}]", tier.cu_max),
                ));
            }
        }

        let goals = translate_goals(&self.goal, n, self.goal.weights.as_deref())?;
        let provisioned: u64 = self.tiers.iter().map(|t| t.cu_max as u64).sum();
        if provisioned > self.goal.budget_cap as u64 {
            return Err(SimError::invalid(
                "goal.budget_cap",
                format!(
                    "initial cu_max sum {provisioned} exceeds budget_cap {}",
                    self.goal.budget_cap
                ),
            ));
        }

        self.analyzer.validate()?;
        self.planner.validate()?;
        if goals
            .per_tier_setpoints
            .iter()
            .any(|&s| s < self.planner.r_min)
        {
            return Err(SimError::invalid(
                "planner.r_min",
                "initial per-tier set points must be >= r_min",
            ));
        }

        positive("ml.period", self.ml.period)?;
        if self.ml.bins == 0 {
            return Err(SimError::invalid("ml.bins", "must be >= 1"));
        }
        for (field, v) in [
            ("ml.residual_smoothing", self.ml.residual_smoothing),
            ("ml.efficiency_smoothing", self.ml.efficiency_smoothing),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(SimError::invalid(field, "must lie in (0, 1)"));
            }
        }

        positive("monitor_window_periods", self.monitor_window_periods)?;
        if self.monitor_window_periods * self.t_mape < self.analyzer.persistence {
            return Err(SimError::invalid(
                "monitor_window_periods",
                "knowledge window must cover analyzer.persistence",
            ));
        }

        self.load.validate("load", SignalKind::Load)?;
        if self.efficiency.len() != n {
            return Err(SimError::invalid(
                "efficiency",
                format!("has {} entries but n_tiers is {n}", self.efficiency.len()),
            ));
        }
        for (i, spec) in self.efficiency.iter().enumerate() {
            spec.validate(&format!("efficiency.{i}"), SignalKind::Efficiency)?;
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        ((self.duration / self.h) + MULTIPLE_TOLERANCE).floor() as u64
    }

    pub fn ct_every(&self) -> u64 {
        (self.t_ct / self.h).round() as u64
    }

    pub fn mape_every(&self) -> u64 {
        (self.t_mape / self.h).round() as u64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a scenario file.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SimError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    from_value(value)
}

/// Binds an already-parsed JSON document.
pub fn from_value(value: serde_json::Value) -> Result<ScenarioConfig> {
    if !value.is_object() {
        return Err(SimError::invalid(
            "config",
            "scenario must be a JSON object",
        ));
    }
    let config: ScenarioConfig = serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        let field = offending_key(&message).unwrap_or("config").to_string();
        SimError::invalid(field, message)
    })?;
    config.resolve()
}

/// Pulls the first back-quoted identifier out of a serde message.
fn offending_key(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}
