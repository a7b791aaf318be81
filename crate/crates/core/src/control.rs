//! Per-tier PI control of CU allocation.
//!
//! The controller drives a tier's response time to its set point. Besides the
//! saturated allocation it exposes the unsaturated demand, which is turned
//! into a need index for the supervisory loop.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    /// Integral state, in CU.
    pub integral: f64,
    /// Target response time in seconds.
    pub setpoint: f64,
    /// Back-calculation gain, 1/s.
    pub tracking_gain: f64,
    /// Controller period in seconds.
    pub sample_period: f64,
    pub last_cu_desired: f64,
    pub last_cu_allocated: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiOutput {
    /// Allocation clamped to `[0, cu_maxavail]`.
    pub cu_allocated: f64,
    /// Pre-saturation controller output.
    pub cu_desired: f64,
}

impl PiController {
    /// Builds a controller whose integral starts at `initial_cu`, so the first
    /// output equals the current allocation when the error is zero.
    pub fn new(
        kp: f64,
        ki: f64,
        tracking_gain: f64,
        sample_period: f64,
        setpoint: f64,
        initial_cu: f64,
    ) -> Result<Self> {
        for (field, value) in [
            ("kp", kp),
            ("ki", ki),
            ("tracking_gain", tracking_gain),
            ("sample_period", sample_period),
            ("setpoint", setpoint),
        ] {
            ensure_finite(field, value)?;
            if value <= 0.0 {
                return Err(SimError::invalid(field, "must be > 0"));
            }
        }
        ensure_finite("initial_cu", initial_cu)?;
        Ok(PiController {
            kp,
            ki,
            integral: initial_cu,
            setpoint,
            tracking_gain,
            sample_period,
            last_cu_desired: initial_cu,
            last_cu_allocated: initial_cu,
        })
    }

    /// One controller period with back-calculation anti-windup.
    pub fn update(&mut self, measured_response: f64, cu_maxavail: f64) -> Result<PiOutput> {
        ensure_finite("measured_response", measured_response)?;
        ensure_finite("cu_maxavail", cu_maxavail)?;
        if measured_response < 0.0 {
            return Err(SimError::invalid("measured_response", "must be >= 0"));
        }
        if cu_maxavail < 1.0 {
            return Err(SimError::invalid("cu_maxavail", "must be >= 1"));
        }

        let error = measured_response - self.setpoint;
        let cu_desired = self.kp * error + self.integral;
        let cu_allocated = cu_desired.clamp(0.0, cu_maxavail);
        self.integral += self.sample_period
            * (self.ki * error + self.tracking_gain * (cu_allocated - cu_desired));
        self.last_cu_desired = cu_desired;
        self.last_cu_allocated = cu_allocated;
        Ok(PiOutput {
            cu_allocated,
            cu_desired,
        })
    }

    /// Replaces the set point; the integral is kept for a bumpless transfer.
    pub fn update_setpoint(&mut self, new_setpoint: f64) -> Result<()> {
        ensure_finite("setpoint", new_setpoint)?;
        if new_setpoint <= 0.0 {
            return Err(SimError::invalid("setpoint", "must be > 0"));
        }
        self.setpoint = new_setpoint;
        Ok(())
    }
}

/// Relative shortfall (positive) or surplus (negative) of CUs.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeedIndex(pub f64);

impl NeedIndex {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `(cu_desired - cu_maxavail) / cu_maxavail`.
pub fn need_index(cu_desired: f64, cu_maxavail: f64) -> Result<NeedIndex> {
    ensure_finite("cu_desired", cu_desired)?;
    ensure_finite("cu_maxavail", cu_maxavail)?;
    if cu_maxavail < 1.0 {
        return Err(SimError::invalid("cu_maxavail", "must be >= 1"));
    }
    Ok(NeedIndex((cu_desired - cu_maxavail) / cu_maxavail))
}
