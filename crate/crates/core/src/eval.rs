//! Block evaluation over a partition.
//!
//! The partition is cut into consecutive non-overlapping blocks of
//! `window + horizon` steps starting at its first sample; blocks containing a
//! missing sample are skipped. Each block's first `window` steps are the
//! model's context and the remaining `horizon` steps are scored. Errors from
//! all blocks are concatenated in block order and reduced once, so the RMSE
//! is exactly `rmse()` of the concatenated outputs.

use std::time::Instant;

use chrono::NaiveDateTime;

use crate::data::{LoadSeries, NormStats};
use crate::error::{Error, Result};
use crate::forecast::{
    delayed_input_forecast, one_step_forecast, persistence_baseline, recursive_forecast, ForecastMode, ForecastResult,
    StandardModel,
};
use crate::s2s::{s2s_forecast, S2SModel};
use crate::train::rmse;

/// A trained model of either architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum Forecaster {
    Standard(StandardModel),
    S2S(S2SModel),
}

impl Forecaster {
    pub fn norm(&self) -> &NormStats {
        match self {
            Forecaster::Standard(m) => &m.norm,
            Forecaster::S2S(m) => &m.norm,
        }
    }

    /// Mode used when none is requested.
    pub fn default_mode(&self) -> ForecastMode {
        match self {
            Forecaster::Standard(m) if m.lag == 1 => ForecastMode::Recursive,
            Forecaster::Standard(_) => ForecastMode::Delayed,
            Forecaster::S2S(_) => ForecastMode::S2S,
        }
    }

    /// Forecasts the `horizon` steps after `context`. For
    /// [`ForecastMode::OneStep`], `actual` supplies the measured loads the
    /// model conditions on inside the horizon.
    pub fn forecast(&self, mode: ForecastMode, context: &LoadSeries, actual: Option<&LoadSeries>, horizon: usize) -> Result<ForecastResult> {
        match (self, mode) {
            (_, ForecastMode::Persistence) => persistence_baseline(context, horizon),
            (Forecaster::Standard(m), ForecastMode::Recursive) => recursive_forecast(m, context, horizon),
            (Forecaster::Standard(m), ForecastMode::Delayed) => delayed_input_forecast(m, context, horizon),
            (Forecaster::Standard(m), ForecastMode::OneStep) => {
                let full = actual.ok_or_else(|| Error::invalid("one-step forecasting needs the measured horizon"))?;
                one_step_forecast(m, full, context.len())
            }
            (Forecaster::S2S(m), ForecastMode::S2S) => s2s_forecast(m, context, horizon),
            (f, mode) => Err(Error::invalid(format!(
                "mode {mode} is not available for the {} architecture",
                match f {
                    Forecaster::Standard(_) => "standard",
                    Forecaster::S2S(_) => "s2s",
                }
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockProtocol {
    pub window: usize,
    pub horizon: usize,
}

impl BlockProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 {
            return Err(Error::invalid(format!(
                "window ({}) and horizon ({}) must be at least 1",
                self.window, self.horizon
            )));
        }
        Ok(())
    }

    /// Starts of the fully measured blocks of `series`, in order.
    pub fn block_starts(&self, series: &LoadSeries) -> Vec<usize> {
        let span = self.window + self.horizon;
        (0..series.len() / span)
            .map(|k| k * span)
            .filter(|&b| series.values()[b..b + span].iter().all(Option::is_some))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: ForecastMode,
    /// RMSE on z-scored loads using the model's training statistics.
    pub rmse_norm: f64,
    pub rmse_kw: f64,
    /// Persistence baseline RMSE in kW: the previous measured value for
    /// one-step evaluation, the last context value otherwise.
    pub rmse_persistence: f64,
    pub rmse_persistence_norm: f64,
    pub n_blocks: usize,
    pub n_skipped: usize,
    pub n_points: usize,
    pub wall_seconds: f64,
    pub timestamps: Vec<NaiveDateTime>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl EvalReport {
    /// Flat metrics object.
    pub fn metrics_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode.as_str(),
            "rmse_norm": self.rmse_norm,
            "rmse_kw": self.rmse_kw,
            "rmse_persistence": self.rmse_persistence,
            "rmse_persistence_norm": self.rmse_persistence_norm,
            "n_blocks": self.n_blocks,
            "n_skipped": self.n_skipped,
            "n_points": self.n_points,
            "wall_seconds": self.wall_seconds,
        })
    }
}

/// Evaluates `model` in `mode` on every full block of `series`.
pub fn evaluate(model: &Forecaster, series: &LoadSeries, protocol: BlockProtocol, mode: ForecastMode) -> Result<EvalReport> {
    protocol.validate()?;
    let started = Instant::now();
    let span = protocol.window + protocol.horizon;
    let starts = protocol.block_starts(series);
    if starts.is_empty() {
        return Err(Error::data(format!(
            "no fully measured block of {span} steps in a series of {} steps",
            series.len()
        )));
    }
    let n_total = series.len() / span;
    let mut timestamps = Vec::new();
    let mut actual = Vec::new();
    let mut predicted = Vec::new();
    let mut baseline = Vec::new();
    for &b in &starts {
        let context = series.slice(b..b + protocol.window)?;
        let full = series.slice(b..b + span)?;
        let f = model.forecast(mode, &context, Some(&full), protocol.horizon)?;
        let truth: Vec<f64> = full.values()[protocol.window..].iter().map(|v| v.expect("block is fully measured")).collect();
        if f.predictions.len() != truth.len() {
            return Err(Error::invalid("forecast length does not match the horizon"));
        }
        if mode == ForecastMode::OneStep {
            baseline.extend(full.values()[protocol.window - 1..span - 1].iter().map(|v| v.expect("measured")));
        } else {
            baseline.extend(persistence_baseline(&context, protocol.horizon)?.predictions);
        }
        timestamps.extend(f.timestamps);
        predicted.extend(f.predictions);
        actual.extend(truth);
    }
    if predicted.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("forecast contains non-finite values".into()));
    }
    let norm = model.norm();
    let z = |v: &[f64]| v.iter().map(|x| norm.normalize(*x)).collect::<Vec<_>>();
    let (actual_z, predicted_z, baseline_z) = (z(&actual), z(&predicted), z(&baseline));
    Ok(EvalReport {
        mode,
        rmse_norm: rmse(&actual_z, &predicted_z)?,
        rmse_kw: rmse(&actual, &predicted)?,
        rmse_persistence: rmse(&actual, &baseline)?,
        rmse_persistence_norm: rmse(&actual_z, &baseline_z)?,
        n_blocks: starts.len(),
        n_skipped: n_total - starts.len(),
        n_points: actual.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
        timestamps,
        actual,
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_timestamp, Resolution};
    use crate::features::FeatureSpec;
    use crate::lstm::{CellVariant, StackParams};
    use crate::s2s::S2SParams;

    fn hourly(values: Vec<Option<f64>>) -> LoadSeries {
        LoadSeries::new(Resolution::Hour, parse_timestamp("2010-01-04T00:00").unwrap(), values).unwrap()
    }

    fn constant_oracle(level: f64) -> Forecaster {
        let norm = NormStats { mean: 1.0, std: 2.0 };
        let mut stack = StackParams::zeros(4, &[3], CellVariant::Standard);
        stack.b_y.fill(norm.normalize(level));
        Forecaster::Standard(StandardModel { stack, norm, lag: 1, features: FeatureSpec::default() })
    }

    #[test]
    fn perfect_oracle_scores_zero() {
        let series = hourly(vec![Some(2.5); 50]);
        let p = BlockProtocol { window: 4, horizon: 6 };
        for mode in [ForecastMode::Recursive, ForecastMode::OneStep, ForecastMode::Persistence] {
            let r = evaluate(&constant_oracle(2.5), &series, p, mode).unwrap();
            assert_eq!((r.rmse_kw, r.rmse_norm, r.rmse_persistence), (0.0, 0.0, 0.0));
            assert_eq!((r.n_blocks, r.n_points), (5, 30));
        }
    }

    #[test]
    fn rmse_is_taken_over_concatenated_blocks() {
        let values: Vec<f64> = (0..40).map(|k| (k as f64 * 0.37).sin() + 2.0).collect();
        let series = hourly(values.iter().copied().map(Some).collect());
        let p = BlockProtocol { window: 5, horizon: 5 };
        let r = evaluate(&constant_oracle(2.0), &series, p, ForecastMode::Recursive).unwrap();
        let truth: Vec<f64> = (0..4).flat_map(|b| values[b * 10 + 5..b * 10 + 10].to_vec()).collect();
        assert_eq!(r.actual, truth);
        let want = (truth.iter().map(|y| (y - 2.0).powi(2)).sum::<f64>() / 20.0).sqrt();
        assert!((r.rmse_kw - want).abs() < 1e-12);
        assert!((r.rmse_norm - want / 2.0).abs() < 1e-12);
        let persist: Vec<f64> = (0..4).flat_map(|b| vec![values[b * 10 + 4]; 5]).collect();
        assert_eq!(r.rmse_persistence, rmse(&truth, &persist).unwrap());
    }

    #[test]
    fn blocks_with_gaps_are_skipped() {
        let mut v = vec![Some(1.0); 30];
        v[12] = None;
        let r = evaluate(&constant_oracle(1.0), &hourly(v), BlockProtocol { window: 5, horizon: 5 }, ForecastMode::Recursive).unwrap();
        assert_eq!((r.n_blocks, r.n_skipped), (2, 1));
        assert_eq!(r.timestamps[5], parse_timestamp("2010-01-05T01:00").unwrap());
    }

    #[test]
    fn incompatible_mode_and_short_series_are_errors() {
        let series = hourly(vec![Some(1.0); 20]);
        let p = BlockProtocol { window: 5, horizon: 5 };
        assert!(evaluate(&constant_oracle(1.0), &series, p, ForecastMode::S2S).is_err());
        assert!(evaluate(&constant_oracle(1.0), &series, BlockProtocol { window: 15, horizon: 10 }, ForecastMode::Recursive).is_err());
        let s2s = Forecaster::S2S(S2SModel {
            params: S2SParams::zeros(&[2], CellVariant::Standard, FeatureSpec::default()),
            norm: NormStats::identity(),
            features: FeatureSpec::default(),
        });
        assert!(evaluate(&s2s, &series, p, ForecastMode::Recursive).is_err());
        assert_eq!(evaluate(&s2s, &series, p, ForecastMode::S2S).unwrap().n_blocks, 2);
    }

    #[test]
    fn metrics_json_is_flat() {
        let r = evaluate(&constant_oracle(1.0), &hourly(vec![Some(1.0); 10]), BlockProtocol { window: 5, horizon: 5 }, ForecastMode::Recursive)
            .unwrap();
        let j = r.metrics_json();
        for key in ["rmse_norm", "rmse_kw", "rmse_persistence", "n_blocks", "wall_seconds"] {
            assert!(j[key].is_number(), "{key}");
        }
    }
}
