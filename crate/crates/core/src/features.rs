//! Model input rows: `[y, day, day_week, hour]` for load-consuming stacks and
//! `[day, day_week, hour]` for the calendar-only decoder.

use std::cell::RefCell;

use chrono::NaiveDateTime;

use crate::data::{calendar_features, CalendarFeatures, LoadSeries, NormStats, Resolution};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Optional extras appended to the calendar block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeatureSpec {
    /// Append `minute/59` (intended for minute-resolution runs).
    pub minute_of_hour: bool,
}

impl FeatureSpec {
    pub fn calendar_dim(&self) -> usize {
        3 + usize::from(self.minute_of_hour)
    }

    /// Width of an [`InputVector`].
    pub fn input_dim(&self) -> usize {
        1 + self.calendar_dim()
    }
}

/// Load-plus-calendar input row, layout `[y, day, day_week, hour(, minute)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputVector(Matrix);

impl InputVector {
    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn load(&self) -> f64 {
        self.0.get(0, 0)
    }
}

pub fn build_input(y_value: f64, c: &CalendarFeatures, spec: FeatureSpec) -> Result<InputVector> {
    if !y_value.is_finite() {
        return Err(Error::invalid(format!("load input must be finite, got {y_value}")));
    }
    let mut row = Vec::with_capacity(spec.input_dim());
    row.push(y_value);
    row.extend(c.scaled(spec.minute_of_hour)?);
    Ok(InputVector(Matrix::row(&row)))
}

/// Calendar-only decoder input. The only constructor takes a
/// [`CalendarFeatures`], so no load value can reach the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderInput(Matrix);

thread_local! {
    static DECODER_AUDIT: RefCell<Option<Vec<Vec<f64>>>> = const { RefCell::new(None) };
}

impl DecoderInput {
    pub fn from_calendar(c: &CalendarFeatures, spec: FeatureSpec) -> Result<Self> {
        let row = c.scaled(spec.minute_of_hour)?;
        DECODER_AUDIT.with(|a| {
            if let Some(log) = a.borrow_mut().as_mut() {
                log.push(row.clone());
            }
        });
        Ok(DecoderInput(Matrix::row(&row)))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Runs `f` while recording every decoder input row created on this thread.
pub fn audit_decoder_inputs<R>(f: impl FnOnce() -> R) -> (R, Vec<Vec<f64>>) {
    let previous = DECODER_AUDIT.with(|a| a.borrow_mut().replace(Vec::new()));
    let out = f();
    let log = DECODER_AUDIT.with(|a| std::mem::replace(&mut *a.borrow_mut(), previous)).unwrap_or_default();
    (out, log)
}

/// A load series prepared for the models: normalised loads and per-step
/// calendar features on the same grid.
#[derive(Clone, Debug)]
pub struct FeatureSeries {
    pub resolution: Resolution,
    pub start: NaiveDateTime,
    pub loads: Vec<Option<f64>>,
    pub calendar: Vec<CalendarFeatures>,
    pub spec: FeatureSpec,
}

impl FeatureSeries {
    pub fn new(series: &LoadSeries, norm: &NormStats, spec: FeatureSpec) -> Self {
        let loads = series.values().iter().map(|v| v.map(|x| norm.normalize(x))).collect();
        let calendar = (0..series.len()).map(|i| calendar_features(series.timestamp(i))).collect();
        FeatureSeries { resolution: series.resolution(), start: series.start(), loads, calendar, spec }
    }

    pub fn len(&self) -> usize {
        self.loads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loads.is_empty()
    }

    pub fn all_valid(&self, range: std::ops::Range<usize>) -> bool {
        range.end <= self.len() && self.loads[range].iter().all(Option::is_some)
    }

    /// Input row predicting step `t` from the load `lag` steps earlier.
    pub fn input(&self, t: usize, lag: usize) -> Result<InputVector> {
        let y = t
            .checked_sub(lag)
            .and_then(|i| self.loads.get(i).copied().flatten())
            .ok_or_else(|| Error::data(format!("no valid load at step {t} - {lag}")))?;
        build_input(y, &self.calendar[t], self.spec)
    }

    pub fn target(&self, t: usize) -> Result<f64> {
        self.loads.get(t).copied().flatten().ok_or_else(|| Error::data(format!("no valid target at step {t}")))
    }

    pub fn decoder_input(&self, t: usize) -> Result<DecoderInput> {
        DecoderInput::from_calendar(&self.calendar[t], self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_timestamp;

    #[test]
    fn minimum_corner_is_all_zero() {
        // 2007-01-01 is a Monday.
        let c = calendar_features(parse_timestamp("2007-01-01T00:00").unwrap());
        let iv = build_input(0.0, &c, FeatureSpec::default()).unwrap();
        assert_eq!(iv.as_matrix().as_slice(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn hour_23_scales_to_one() {
        let c = calendar_features(parse_timestamp("2007-01-01T23:00").unwrap());
        let iv = build_input(0.3, &c, FeatureSpec::default()).unwrap();
        assert_eq!(iv.as_matrix().get(0, 3), 1.0);
    }

    #[test]
    fn mid_range_timestamp_matches_hand_scaling() {
        // 2009-07-15 is a Wednesday.
        let c = calendar_features(parse_timestamp("2009-07-15T11:30").unwrap());
        let iv = build_input(-0.4, &c, FeatureSpec { minute_of_hour: true }).unwrap();
        let want = [-0.4, 14.0 / 30.0, 2.0 / 6.0, 11.0 / 23.0, 30.0 / 59.0];
        assert_eq!(iv.as_matrix().as_slice(), &want);
    }

    #[test]
    fn out_of_range_calendar_is_rejected() {
        let c = CalendarFeatures { day: 1, day_week: 7, hour: 0, minute: 0 };
        assert!(build_input(0.0, &c, FeatureSpec::default()).is_err());
        let ok = CalendarFeatures { day: 1, day_week: 0, hour: 0, minute: 0 };
        assert!(build_input(f64::NAN, &ok, FeatureSpec::default()).is_err());
    }

    #[test]
    fn audit_records_decoder_rows_only_inside_scope() {
        let c = CalendarFeatures { day: 2, day_week: 1, hour: 5, minute: 0 };
        DecoderInput::from_calendar(&c, FeatureSpec::default()).unwrap();
        let (_, log) = audit_decoder_inputs(|| {
            DecoderInput::from_calendar(&c, FeatureSpec::default()).unwrap();
            build_input(9.0, &c, FeatureSpec::default()).unwrap();
        });
        assert_eq!(log, vec![vec![1.0 / 30.0, 1.0 / 6.0, 5.0 / 23.0]]);
    }
}
