//! Online learners for the environment: a seasonal load model and per-tier
//! efficiency estimators.
//!
//! Both are cheap, deterministic, and updated one sample at a time.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, SimError};
use crate::plant::TierObservation;

/// Below this allocation a tier's throughput says nothing about its efficiency.
const CU_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub horizon: f64,
    pub mean_load: f64,
    pub peak_load: f64,
}

/// Binned periodic mean plus an exponentially smoothed residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalForecaster {
    period: f64,
    bin_means: Vec<f64>,
    bin_counts: Vec<u64>,
    residual_smoothing: f64,
    last_residual: f64,
}

impl SeasonalForecaster {
    pub fn new(period: f64, bins: usize, residual_smoothing: f64) -> Result<Self> {
        ensure_finite("period", period)?;
        if period <= 0.0 {
            return Err(SimError::invalid("period", "must be > 0"));
        }
        if bins == 0 {
            return Err(SimError::invalid("bins", "must be >= 1"));
        }
        if !(residual_smoothing > 0.0 && residual_smoothing < 1.0) {
            return Err(SimError::invalid(
                "residual_smoothing",
                "must lie in (0, 1)",
            ));
        }
        Ok(SeasonalForecaster {
            period,
            bin_means: vec![0.0; bins],
            bin_counts: vec![0; bins],
            residual_smoothing,
            last_residual: 0.0,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn bin_means(&self) -> &[f64] {
        &self.bin_means
    }

    pub fn bin_counts(&self) -> &[u64] {
        &self.bin_counts
    }

    pub fn last_residual(&self) -> f64 {
        self.last_residual
    }

    pub fn is_trained(&self) -> bool {
        self.bin_counts.iter().any(|&c| c > 0)
    }

    fn bin_width(&self) -> f64 {
        self.period / self.bin_means.len() as f64
    }

    /// Bin holding time `t`: `floor((t mod P) / P * B)`.
    pub fn bin_of(&self, t: f64) -> usize {
        let bins = self.bin_means.len();
        let phase = t.rem_euclid(self.period) / self.period;
        ((phase * bins as f64).floor() as usize).min(bins - 1)
    }

    pub fn observe(&mut self, t: f64, load: f64) -> Result<()> {
        ensure_finite("t", t)?;
        ensure_finite("load", load)?;
        if load < 0.0 {
            return Err(SimError::invalid("load", "must be >= 0"));
        }
        let b = self.bin_of(t);
        self.bin_counts[b] += 1;
        let n = self.bin_counts[b] as f64;
        self.bin_means[b] += (load - self.bin_means[b]) / n;
        let a = self.residual_smoothing;
        self.last_residual = a * (load - self.bin_means[b]) + (1.0 - a) * self.last_residual;
        Ok(())
    }

    /// Mean and peak load over the bins touched by `[t_now, t_now + horizon]`.
    ///
    /// Returns `None` when no bin has been trained yet.
    pub fn predict(&self, t_now: f64, horizon: f64) -> Result<Option<Forecast>> {
        ensure_finite("t_now", t_now)?;
        ensure_finite("horizon", horizon)?;
        if horizon <= 0.0 {
            return Err(SimError::invalid("horizon", "must be > 0"));
        }
        if !self.is_trained() {
            return Ok(None);
        }

        let width = self.bin_width();
        let first = (t_now / width).floor() as i64;
        let last = (((t_now + horizon) / width).ceil() as i64 - 1).max(first);
        let span = ((last - first + 1) as usize).min(self.bin_means.len());

        let bins = self.bin_means.len() as i64;
        let covered: Vec<f64> = (0..span as i64)
            .map(|k| (first + k).rem_euclid(bins) as usize)
            .filter(|&b| self.bin_counts[b] > 0)
            .map(|b| self.bin_means[b])
            .collect();

        let values = if covered.is_empty() {
            let trained: Vec<f64> = self
                .bin_counts
                .iter()
                .zip(&self.bin_means)
                .filter(|(&c, _)| c > 0)
                .map(|(_, &m)| m)
                .collect();
            vec![trained.iter().sum::<f64>() / trained.len() as f64]
        } else {
            covered
        };

        let shifted = values.iter().map(|m| (m + self.last_residual).max(0.0));
        let (sum, peak) = shifted.fold((0.0, 0.0_f64), |(s, p), v| (s + v, p.max(v)));
        Ok(Some(Forecast {
            horizon,
            mean_load: sum / values.len() as f64,
            peak_load: peak,
        }))
    }
}

/// Exponentially smoothed estimate of a tier's efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimator {
    pub eta_hat: f64,
    pub smoothing: f64,
}

impl EfficiencyEstimator {
    pub fn new(smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0 && smoothing < 1.0) {
            return Err(SimError::invalid(
                "efficiency_smoothing",
                "must lie in (0, 1)",
            ));
        }
        Ok(EfficiencyEstimator {
            eta_hat: 1.0,
            smoothing,
        })
    }

    /// Folds in one step's throughput if the tier was capacity-limited.
    ///
    /// An unsaturated tier serves everything offered, so its outflow carries
    /// no information about capacity and the estimate is left alone.
    pub fn update(&mut self, obs: &TierObservation, cu_allocated: f64, rate_per_cu: f64) {
        if obs.queue_level <= 0.0 || cu_allocated <= CU_EPSILON || rate_per_cu <= 0.0 {
            return;
        }
        let observed = obs.outflow / (cu_allocated * rate_per_cu);
        if !observed.is_finite() || observed <= 0.0 {
            return;
        }
        self.observe(observed.min(1.0));
    }

    pub fn observe(&mut self, eta_obs: f64) {
        let eta_obs = eta_obs.clamp(f64::MIN_POSITIVE, 1.0);
        let a = self.smoothing;
        self.eta_hat = (a * eta_obs + (1.0 - a) * self.eta_hat).clamp(f64::MIN_POSITIVE, 1.0);
    }
}

/// Last-value baseline.
pub fn naive_predict(history: &[f64]) -> Result<f64> {
    history.last().copied().ok_or(SimError::EmptyHistory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn obs(queue_level: f64, outflow: f64) -> TierObservation {
        TierObservation {
            inflow: outflow,
            outflow,
            queue_level,
            response_time: 0.1,
            capacity: outflow,
        }
    }

    #[test]
    fn first_observation_sets_bin_mean() {
        let mut f = SeasonalForecaster::new(600.0, 24, 0.3).unwrap();
        f.observe(10.0, 42.0).unwrap();
        assert_eq!(f.bin_means()[0], 42.0);
        assert_eq!(f.bin_counts()[0], 1);
    }

    #[test]
    fn running_mean_of_two() {
        let mut f = SeasonalForecaster::new(600.0, 24, 0.3).unwrap();
        f.observe(1.0, 10.0).unwrap();
        f.observe(2.0, 20.0).unwrap();
        assert_relative_eq!(f.bin_means()[0], 15.0);
    }

    #[test]
    fn constant_input_is_fixed_point() {
        let mut f = SeasonalForecaster::new(60.0, 6, 0.3).unwrap();
        for k in 0..1000 {
            f.observe(k as f64 * 0.5, 7.0).unwrap();
        }
        assert!(f.bin_means().iter().all(|&m| m == 7.0));
        assert!(f.last_residual().abs() < 1e-12);
        let fc = f.predict(100.0, 30.0).unwrap().unwrap();
        assert_relative_eq!(fc.mean_load, 7.0);
        assert_relative_eq!(fc.peak_load, 7.0);
    }

    #[test]
    fn two_bin_forecast() {
        let mut f = SeasonalForecaster::new(20.0, 2, 0.3).unwrap();
        f.observe(0.0, 10.0).unwrap();
        f.observe(10.0, 30.0).unwrap();
        // Both observations are bin-mean exact, so the residual is zero.
        assert_eq!(f.last_residual(), 0.0);
        let fc = f.predict(0.0, 20.0).unwrap().unwrap();
        assert_relative_eq!(fc.mean_load, 20.0);
        assert_relative_eq!(fc.peak_load, 30.0);
    }

    #[test]
    fn untrained_forecaster_is_absent() {
        let f = SeasonalForecaster::new(600.0, 24, 0.3).unwrap();
        assert_eq!(f.predict(0.0, 60.0).unwrap(), None);
    }

    #[test]
    fn untrained_range_falls_back_to_global_mean() {
        let mut f = SeasonalForecaster::new(100.0, 10, 0.3).unwrap();
        f.observe(0.0, 10.0).unwrap();
        f.observe(10.0, 30.0).unwrap();
        let fc = f.predict(50.0, 10.0).unwrap().unwrap();
        assert_relative_eq!(fc.mean_load, 20.0 + f.last_residual());
    }

    #[test]
    fn negative_load_rejected() {
        let mut f = SeasonalForecaster::new(600.0, 24, 0.3).unwrap();
        assert!(f.observe(0.0, -1.0).is_err());
        assert!(f.predict(0.0, 0.0).is_err());
    }

    #[test]
    fn bin_assignment_wraps_period() {
        let f = SeasonalForecaster::new(600.0, 24, 0.3).unwrap();
        assert_eq!(f.bin_of(0.0), 0);
        assert_eq!(f.bin_of(24.99), 0);
        assert_eq!(f.bin_of(25.0), 1);
        assert_eq!(f.bin_of(599.9), 23);
        assert_eq!(f.bin_of(600.0), 0);
    }

    #[test]
    fn efficiency_unchanged_when_unsaturated() {
        let mut e = EfficiencyEstimator::new(0.5).unwrap();
        e.update(&obs(0.0, 3.0), 1.0, 10.0);
        assert_eq!(e.eta_hat, 1.0);
    }

    #[test]
    fn efficiency_smoothing_arithmetic() {
        let mut e = EfficiencyEstimator::new(0.5).unwrap();
        e.update(&obs(4.0, 6.0), 1.0, 10.0);
        assert_relative_eq!(e.eta_hat, 0.8);
    }

    #[test]
    fn efficiency_converges_to_constant_observation() {
        let mut e = EfficiencyEstimator::new(0.2).unwrap();
        for _ in 0..500 {
            e.observe(0.7);
        }
        assert_relative_eq!(e.eta_hat, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn naive_baseline() {
        assert_eq!(naive_predict(&[5.0]).unwrap(), 5.0);
        assert_eq!(naive_predict(&[5.0, 9.0]).unwrap(), 9.0);
        assert_eq!(naive_predict(&[]), Err(SimError::EmptyHistory));
    }
}
