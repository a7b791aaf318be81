//! Fluid model of the managed system: a chain of queue-plus-server tiers.
//!
//! Each tier holds a fluid queue drained at a rate bounded by its capacity
//! `cu_allocated * efficiency * rate_per_cu`. Tiers are chained so that the
//! outflow of tier `i - 1` is the inflow of tier `i` within the same step.
//! Integration is explicit Euler with the drain clipped so the queue can
//! never go negative.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, SimError};

/// Capacity below which a tier is treated as stopped.
pub const CAPACITY_EPSILON: f64 = 1e-6;
/// Response time reported for a stopped tier.
pub const RESPONSE_TIME_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierState {
    /// Requests waiting or in service.
    pub queue_level: f64,
    /// Computational units currently allotted by the controller.
    pub cu_allocated: f64,
    /// Provisioned ceiling on `cu_allocated`, changed only by reconfiguration.
    pub cu_max: u32,
    /// Multiplicative capacity factor in (0, 1] modelling interference.
    pub efficiency: f64,
    /// Requests per second served by one CU at full efficiency.
    pub rate_per_cu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierObservation {
    pub inflow: f64,
    pub outflow: f64,
    pub queue_level: f64,
    pub response_time: f64,
    pub capacity: f64,
}

impl TierState {
    pub fn new(cu_max: u32, rate_per_cu: f64, cu_allocated: f64) -> Self {
        TierState {
            queue_level: 0.0,
            cu_allocated: cu_allocated.clamp(0.0, cu_max as f64),
            cu_max,
            efficiency: 1.0,
            rate_per_cu,
        }
    }

    pub fn capacity(&self) -> f64 {
        self.cu_allocated * self.efficiency * self.rate_per_cu
    }

    /// Checks the field invariants of the tier.
    pub fn validate(&self) -> Result<()> {
        ensure_finite("queue_level", self.queue_level)?;
        ensure_finite("cu_allocated", self.cu_allocated)?;
        ensure_finite("efficiency", self.efficiency)?;
        ensure_finite("rate_per_cu", self.rate_per_cu)?;
        if self.queue_level < 0.0 {
            return Err(SimError::invalid("queue_level", "must be >= 0"));
        }
        if self.cu_allocated < 0.0 || self.cu_allocated > self.cu_max as f64 {
            return Err(SimError::invalid(
                "cu_allocated",
                format!("must lie in [0, {}]", self.cu_max),
            ));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(SimError::invalid("efficiency", "must lie in (0, 1]"));
        }
        if self.rate_per_cu <= 0.0 {
            return Err(SimError::invalid("rate_per_cu", "must be > 0"));
        }
        Ok(())
    }

    /// Residence estimate: time to drain the queue plus one service time.
    pub fn response_time(&self) -> f64 {
        let capacity = self.capacity();
        if capacity > CAPACITY_EPSILON {
            (self.queue_level + 1.0) / capacity
        } else {
            RESPONSE_TIME_CAP
        }
    }

    /// Advances the tier by `dt` seconds under a constant `inflow`.
    pub fn step(&self, inflow: f64, dt: f64) -> Result<(TierState, TierObservation)> {
        ensure_finite("inflow", inflow)?;
        ensure_finite("dt", dt)?;
        if dt <= 0.0 {
            return Err(SimError::invalid("dt", "must be > 0"));
        }
        if inflow < 0.0 {
            return Err(SimError::invalid("inflow", "must be >= 0"));
        }
        self.validate()?;

        let capacity = self.capacity();
        let available = inflow + self.queue_level / dt;
        let (outflow, queue_level) = if capacity >= available {
            // Everything queued or arriving this step is served.
            (available, 0.0)
        } else {
            (capacity, self.queue_level + (inflow - capacity) * dt)
        };

        let next = TierState {
            queue_level,
            ..*self
        };
        let observation = TierObservation {
            inflow,
            outflow,
            queue_level,
            response_time: next.response_time(),
            capacity,
        };
        Ok((next, observation))
    }
}

/// Free-function form of [`TierState::response_time`].
pub fn estimate_response_time(state: &TierState) -> f64 {
    state.response_time()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub tiers: Vec<TierState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStep {
    pub observations: Vec<TierObservation>,
    pub end_to_end_response: f64,
}

impl ChainState {
    pub fn new(tiers: Vec<TierState>) -> Result<Self> {
        if tiers.is_empty() {
            return Err(SimError::invalid("tiers", "chain needs at least one tier"));
        }
        Ok(ChainState { tiers })
    }

    pub fn len(&self) -> usize {
        self.tiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiers.is_empty()
    }

    pub fn end_to_end_response(&self) -> f64 {
        self.tiers.iter().map(TierState::response_time).sum()
    }

    /// Advances every tier by `dt`, feeding tier `i` with the outflow of tier `i - 1`.
    ///
    /// The chain is updated in place only if every tier stepped successfully.
    pub fn step(&mut self, r_in: f64, dt: f64) -> Result<ChainStep> {
        let mut next = Vec::with_capacity(self.tiers.len());
        let mut observations = Vec::with_capacity(self.tiers.len());
        let mut inflow = r_in;
        for tier in &self.tiers {
            let (state, obs) = tier.step(inflow, dt)?;
            inflow = obs.outflow;
            next.push(state);
            observations.push(obs);
        }
        self.tiers = next;
        let end_to_end_response = observations.iter().map(|o| o.response_time).sum();
        Ok(ChainStep {
            observations,
            end_to_end_response,
        })
    }
}
