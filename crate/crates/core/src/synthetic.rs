//! Seeded synthetic load series for smoke tests and convergence checks.

use chrono::NaiveDateTime;
use std::f64::consts::TAU;

use crate::data::{parse_timestamp, LoadSeries, Resolution};
use crate::error::Result;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub start: NaiveDateTime,
    pub len: usize,
    pub resolution: Resolution,
    /// Constant offset so loads stay positive.
    pub level: f64,
    /// Peak deviation from `level`, before noise.
    pub amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            start: parse_timestamp("2007-01-01T00:00").expect("valid literal"),
            len: 24 * 7 * 12,
            resolution: Resolution::Hour,
            level: 1.5,
            amplitude: 1.0,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

/// Daily shape in `[-1, 1]` as a function of the fraction of the day:
/// a sine with a sharper evening bump on top.
pub fn daily_shape(day_fraction: f64) -> f64 {
    let base = (TAU * (day_fraction - 0.25)).sin();
    let bump = (-((day_fraction - 0.8) / 0.06).powi(2)).exp();
    (0.7 * base + 0.6 * bump - 0.15).clamp(-1.0, 1.0)
}

/// `level + amplitude · daily_shape(time of day) + N(0, noise_std²)`.
pub fn sine_daily_series(spec: &SyntheticSpec) -> Result<LoadSeries> {
    let mut rng = SeededRng::new(spec.seed);
    let step = spec.resolution.step().num_seconds() as f64;
    let values = (0..spec.len)
        .map(|i| {
            let secs = spec.start.and_utc().timestamp() as f64 + i as f64 * step;
            let frac = secs.rem_euclid(86_400.0) / 86_400.0;
            Some(spec.level + spec.amplitude * daily_shape(frac) + spec.noise_std * rng.normal())
        })
        .collect();
    LoadSeries::new(spec.resolution, spec.start, values)
}
