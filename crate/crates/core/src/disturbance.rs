//! Load and efficiency signals.
//!
//! Random signals read from a ChaCha stream selected by `(seed, channel)` at a
//! word position derived from the sample time, so a value depends only on the
//! spec, the seed, the channel, and `t`. Adding channels or sampling in a
//! different order leaves every other value untouched.

use std::f64::consts::TAU;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Random draws are keyed on `t` quantized to this resolution, seconds.
const TIME_QUANTUM: f64 = 1e-6;
/// Lower clamp applied to efficiency signals.
pub const MIN_EFFICIENCY: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    Constant {
        value: f64,
    },
    Step {
        t0: f64,
        before: f64,
        after: f64,
    },
    Pulse {
        t0: f64,
        width: f64,
        base: f64,
        level: f64,
    },
    Sinusoid {
        base: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        noise_sigma: f64,
    },
    PiecewiseRandom {
        mean: f64,
        spread: f64,
        dwell: f64,
    },
}

/// What a signal drives; decides its admissible range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Load,
    Efficiency,
}

impl DisturbanceSpec {
    pub fn constant(value: f64) -> Self {
        DisturbanceSpec::Constant { value }
    }

    /// Noise-free range `(min, max)` the spec can produce.
    fn envelope(&self) -> (f64, f64) {
        match *self {
            DisturbanceSpec::Constant { value } => (value, value),
            DisturbanceSpec::Step { before, after, .. } => (before.min(after), before.max(after)),
            DisturbanceSpec::Pulse { base, level, .. } => (base.min(level), base.max(level)),
            DisturbanceSpec::Sinusoid {
                base, amplitude, ..
            } => (base - amplitude.abs(), base + amplitude.abs()),
            DisturbanceSpec::PiecewiseRandom { mean, spread, .. } => (mean - spread, mean + spread),
        }
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        match *self {
            DisturbanceSpec::Constant { value } => vec![("value", value)],
            DisturbanceSpec::Step { t0, before, after } => {
                vec![("t0", t0), ("before", before), ("after", after)]
            }
            DisturbanceSpec::Pulse {
                t0,
                width,
                base,
                level,
            } => vec![
                ("t0", t0),
                ("width", width),
                ("base", base),
                ("level", level),
            ],
            DisturbanceSpec::Sinusoid {
                base,
                amplitude,
                period,
                noise_sigma,
            } => vec![
                ("base", base),
                ("amplitude", amplitude),
                ("period", period),
                ("noise_sigma", noise_sigma),
            ],
            DisturbanceSpec::PiecewiseRandom {
                mean,
                spread,
                dwell,
            } => {
                vec![("mean", mean), ("spread", spread), ("dwell", dwell)]
            }
        }
    }

    /// Rejects specs that could produce out-of-range signals. `field` prefixes error names.
    pub fn validate(&self, field: &str, kind: SignalKind) -> Result<()> {
        for (name, value) in self.parameters() {
            if !value.is_finite() {
                return Err(SimError::invalid(
                    format!("{field}.{name}"),
                    "must be finite",
                ));
            }
        }
        match *self {
            DisturbanceSpec::Pulse { width, .. } if width < 0.0 => {
                return Err(SimError::invalid(format!("{field}.width"), "must be >= 0"));
            }
            DisturbanceSpec::Sinusoid {
                period,
                noise_sigma,
                ..
            } => {
                if period <= 0.0 {
                    return Err(SimError::invalid(format!("{field}.period"), "must be > 0"));
                }
                if noise_sigma < 0.0 {
                    return Err(SimError::invalid(
                        format!("{field}.noise_sigma"),
                        "must be >= 0",
                    ));
                }
            }
            DisturbanceSpec::PiecewiseRandom { spread, dwell, .. } => {
                if dwell <= 0.0 {
                    return Err(SimError::invalid(format!("{field}.dwell"), "must be > 0"));
                }
                if spread < 0.0 {
                    return Err(SimError::invalid(format!("{field}.spread"), "must be >= 0"));
                }
            }
            _ => {}
        }
        let (lo, hi) = self.envelope();
        match kind {
            SignalKind::Load if lo < 0.0 => Err(SimError::invalid(
                field,
                format!("load signal reaches {lo}, must stay >= 0"),
            )),
            SignalKind::Efficiency if !(lo > 0.0 && hi <= 1.0) => Err(SimError::invalid(
                field,
                format!("efficiency signal spans [{lo}, {hi}], must stay within (0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

/// Seeded random source for one disturbance channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub channel: u64,
}

impl RngStream {
    pub fn new(seed: u64, channel: u64) -> Self {
        RngStream { seed, channel }
    }

    /// Two independent uniforms in [0, 1) at counter position `counter`.
    fn uniforms(&self, counter: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.channel);
        rng.set_word_pos(counter as u128 * 4);
        let to_unit = |x: u64| (x >> 11) as f64 / (1u64 << 53) as f64;
        (to_unit(rng.next_u64()), to_unit(rng.next_u64()))
    }

    fn uniform_symmetric(&self, counter: u64) -> f64 {
        2.0 * self.uniforms(counter).0 - 1.0
    }

    /// Standard normal by Box-Muller.
    fn normal(&self, counter: u64) -> f64 {
        let (u1, u2) = self.uniforms(counter);
        let u1 = 1.0 - u1; // (0, 1]
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }
}

fn time_counter(t: f64) -> u64 {
    (t / TIME_QUANTUM).round().max(0.0) as u64
}

/// Raw signal value at `t`, before range clamping.
pub fn gen_disturbance(spec: &DisturbanceSpec, t: f64, stream: &RngStream) -> f64 {
    match *spec {
        DisturbanceSpec::Constant { value } => value,
        DisturbanceSpec::Step { t0, before, after } => {
            if t < t0 {
                before
            } else {
                after
            }
        }
        DisturbanceSpec::Pulse {
            t0,
            width,
            base,
            level,
        } => {
            if t >= t0 && t < t0 + width {
                level
            } else {
                base
            }
        }
        DisturbanceSpec::Sinusoid {
            base,
            amplitude,
            period,
            noise_sigma,
        } => {
            let clean = base + amplitude * (TAU * t / period).sin();
            if noise_sigma > 0.0 {
                clean + noise_sigma * stream.normal(time_counter(t))
            } else {
                clean
            }
        }
        DisturbanceSpec::PiecewiseRandom {
            mean,
            spread,
            dwell,
        } => {
            let segment = (t / dwell).floor().max(0.0) as u64;
            mean + spread * stream.uniform_symmetric(segment)
        }
    }
}

/// Signal value clamped to the admissible range of `kind`.
pub fn sample_signal(spec: &DisturbanceSpec, kind: SignalKind, t: f64, stream: &RngStream) -> f64 {
    let v = gen_disturbance(spec, t, stream);
    match kind {
        SignalKind::Load => v.max(0.0),
        SignalKind::Efficiency => v.clamp(MIN_EFFICIENCY, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const S: RngStream = RngStream {
        seed: 7,
        channel: 0,
    };

    #[test]
    fn constant_everywhere() {
        for t in [0.0, 1.5, 1e4] {
            assert_eq!(
                gen_disturbance(&DisturbanceSpec::constant(50.0), t, &S),
                50.0
            );
        }
    }

    #[test]
    fn step_switches_at_t0() {
        let spec = DisturbanceSpec::Step {
            t0: 100.0,
            before: 50.0,
            after: 90.0,
        };
        assert_eq!(gen_disturbance(&spec, 99.9, &S), 50.0);
        assert_eq!(gen_disturbance(&spec, 100.0, &S), 90.0);
    }

    #[test]
    fn pulse_window_is_half_open() {
        let spec = DisturbanceSpec::Pulse {
            t0: 10.0,
            width: 5.0,
            base: 1.0,
            level: 3.0,
        };
        assert_eq!(gen_disturbance(&spec, 9.99, &S), 1.0);
        assert_eq!(gen_disturbance(&spec, 10.0, &S), 3.0);
        assert_eq!(gen_disturbance(&spec, 14.99, &S), 3.0);
        assert_eq!(gen_disturbance(&spec, 15.0, &S), 1.0);
    }

    #[test]
    fn sinusoid_quarter_period() {
        let spec = DisturbanceSpec::Sinusoid {
            base: 50.0,
            amplitude: 20.0,
            period: 600.0,
            noise_sigma: 0.0,
        };
        assert_relative_eq!(gen_disturbance(&spec, 150.0, &S), 70.0, epsilon = 1e-12);
    }

    #[test]
    fn random_values_ignore_evaluation_order() {
        let spec = DisturbanceSpec::PiecewiseRandom {
            mean: 50.0,
            spread: 10.0,
            dwell: 5.0,
        };
        let forward: Vec<f64> = (0..50)
            .map(|k| gen_disturbance(&spec, k as f64, &S))
            .collect();
        let backward: Vec<f64> = (0..50)
            .rev()
            .map(|k| gen_disturbance(&spec, k as f64, &S))
            .collect();
        let reversed: Vec<f64> = backward.into_iter().rev().collect();
        assert_eq!(forward, reversed);
        // Constant within a dwell interval.
        assert_eq!(forward[0], forward[4]);
        assert_ne!(forward[4], forward[5]);
        assert!(forward.iter().all(|v| (40.0..=60.0).contains(v)));
    }

    #[test]
    fn channels_and_seeds_are_independent() {
        let spec = DisturbanceSpec::PiecewiseRandom {
            mean: 0.0,
            spread: 1.0,
            dwell: 1.0,
        };
        let a = gen_disturbance(&spec, 3.0, &RngStream::new(1, 0));
        let b = gen_disturbance(&spec, 3.0, &RngStream::new(1, 1));
        let c = gen_disturbance(&spec, 3.0, &RngStream::new(2, 0));
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn gaussian_noise_has_unit_scale() {
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|k| S.normal(k)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn validation_ranges() {
        let eff = DisturbanceSpec::PiecewiseRandom {
            mean: 0.9,
            spread: 0.05,
            dwell: 10.0,
        };
        assert!(eff.validate("efficiency.0", SignalKind::Efficiency).is_ok());
        let bad = DisturbanceSpec::constant(1.2);
        assert!(bad
            .validate("efficiency.0", SignalKind::Efficiency)
            .is_err());
        let neg = DisturbanceSpec::Sinusoid {
            base: 10.0,
            amplitude: 20.0,
            period: 60.0,
            noise_sigma: 0.0,
        };
        assert!(neg.validate("load", SignalKind::Load).is_err());
        let dwell = DisturbanceSpec::PiecewiseRandom {
            mean: 1.0,
            spread: 0.0,
            dwell: 0.0,
        };
        assert!(dwell.validate("load", SignalKind::Load).is_err());
    }

    #[test]
    fn load_clamped_at_zero() {
        let spec = DisturbanceSpec::Sinusoid {
            base: 0.0,
            amplitude: 0.0,
            period: 60.0,
            noise_sigma: 5.0,
        };
        assert!((0..200).all(|k| sample_signal(&spec, SignalKind::Load, k as f64, &S) >= 0.0));
    }
}
