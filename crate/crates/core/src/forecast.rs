//! One-step and recursive forecasting with a stacked LSTM, the delayed-input
//! variant, and the persistence baseline.
//!
//! To predict step `t` the model reads `[y_(t-lag), day_t, day_week_t, hour_t]`.
//! During warm-up `y` comes from measurements; past the warm-up window the
//! model's own predictions are fed back.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;

use crate::data::{calendar_features, CalendarFeatures, LoadSeries, NormStats};
use crate::error::{Error, Result};
use crate::features::{build_input, FeatureSpec, InputVector};
use crate::lstm::{stack_step, CellState, StackParams};

/// Default input delay for the delayed-input variant.
pub const DEFAULT_DELAY: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ForecastMode {
    OneStep,
    Recursive,
    Delayed,
    S2S,
    Persistence,
}

impl ForecastMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ForecastMode::OneStep => "one_step",
            ForecastMode::Recursive => "recursive",
            ForecastMode::Delayed => "delayed",
            ForecastMode::S2S => "s2s",
            ForecastMode::Persistence => "persistence",
        }
    }
}

impl fmt::Display for ForecastMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ForecastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "one_step" => ForecastMode::OneStep,
            "recursive" => ForecastMode::Recursive,
            "delayed" => ForecastMode::Delayed,
            "s2s" => ForecastMode::S2S,
            "persistence" => ForecastMode::Persistence,
            other => {
                return Err(Error::invalid(format!(
                    "unknown forecast mode '{other}' (expected one_step|recursive|delayed|s2s|persistence)"
                )))
            }
        })
    }
}

/// Predicted loads in kW with their timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub timestamps: Vec<NaiveDateTime>,
    pub predictions: Vec<f64>,
    pub mode: ForecastMode,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.predictions.len()
    }
}

/// Anything that maps an input row and a recurrent state to a scalar
/// prediction and the next state.
pub trait StepModel {
    type State: Clone;

    fn initial_state(&self) -> Self::State;
    fn step(&self, state: &Self::State, input: &InputVector) -> Result<(f64, Self::State)>;
}

impl StepModel for StackParams {
    type State = Vec<CellState>;

    fn initial_state(&self) -> Self::State {
        self.zero_states()
    }

    fn step(&self, state: &Self::State, input: &InputVector) -> Result<(f64, Self::State)> {
        let (next, y, _) = stack_step(input.as_matrix(), state, self, None)?;
        Ok((y, next))
    }
}

/// Returns its load input unchanged: the naïve mapping a one-step model can
/// collapse to.
#[derive(Clone, Copy, Debug, Default)]
pub struct PersistenceModel;

impl StepModel for PersistenceModel {
    type State = ();

    fn initial_state(&self) {}

    fn step(&self, _: &(), input: &InputVector) -> Result<(f64, ())> {
        Ok((input.load(), ()))
    }
}

/// One evaluation-mode step of a stack.
pub fn one_step_predict(model: &StackParams, states: &[CellState], iv: &InputVector) -> Result<(f64, Vec<CellState>)> {
    if iv.as_matrix().cols() != model.input_dim() {
        return Err(Error::Shape {
            op: "one_step_predict",
            left_name: "input".into(),
            left: iv.as_matrix().shape(),
            right_name: "model input".into(),
            right: (1, model.input_dim()),
        });
    }
    let (y, next) = model.step(&states.to_vec(), iv)?;
    Ok((y, next))
}

/// Warm up on `loads` (normalised, all measured), then roll `horizon` steps
/// forward feeding predictions back into the load slot.
///
/// `calendars[t]` belongs to step `t`; steps `0..loads.len()` are the warm-up
/// and the next `horizon` entries are the future. Returns normalised
/// predictions for the future steps only.
#[allow(clippy::needless_range_loop)]
pub fn roll_forward<M: StepModel>(
    model: &M,
    loads: &[f64],
    calendars: &[CalendarFeatures],
    horizon: usize,
    lag: usize,
    spec: FeatureSpec,
) -> Result<Vec<f64>> {
    let w = loads.len();
    if lag == 0 {
        return Err(Error::invalid("lag must be at least 1"));
    }
    if w < lag.max(1) {
        return Err(Error::invalid(format!("warm-up of {w} steps is shorter than the input lag {lag}")));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if calendars.len() < w + horizon {
        return Err(Error::invalid(format!(
            "{} calendar entries supplied, {} needed for a {w}-step warm-up and {horizon}-step horizon",
            calendars.len(),
            w + horizon
        )));
    }
    let mut state = model.initial_state();
    for t in lag..w {
        let iv = build_input(loads[t - lag], &calendars[t], spec)?;
        state = model.step(&state, &iv)?.1;
    }
    let mut preds: Vec<f64> = Vec::with_capacity(horizon);
    for t in w..w + horizon {
        let src = t - lag;
        let y = if src < w { loads[src] } else { preds[src - w] };
        let iv = build_input(y, &calendars[t], spec)?;
        let (y_hat, next) = model.step(&state, &iv)?;
        state = next;
        preds.push(y_hat);
    }
    Ok(preds)
}

/// One-step-ahead predictions over `horizon` steps after the warm-up, every
/// input built from measured loads.
pub fn teacher_forced<M: StepModel>(
    model: &M,
    loads: &[f64],
    calendars: &[CalendarFeatures],
    warmup: usize,
    lag: usize,
    spec: FeatureSpec,
) -> Result<Vec<f64>> {
    if warmup < lag || warmup >= loads.len() || calendars.len() < loads.len() {
        return Err(Error::invalid("teacher-forced prediction needs warm-up >= lag and a non-empty horizon"));
    }
    let mut state = model.initial_state();
    let mut preds = Vec::with_capacity(loads.len() - warmup);
    for t in lag..loads.len() {
        let iv = build_input(loads[t - lag], &calendars[t], spec)?;
        let (y_hat, next) = model.step(&state, &iv)?;
        state = next;
        if t >= warmup {
            preds.push(y_hat);
        }
    }
    Ok(preds)
}

/// A trained stack with the normalisation and input layout it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardModel {
    pub stack: StackParams,
    pub norm: NormStats,
    /// Steps between the load input and the predicted step.
    pub lag: usize,
    pub features: FeatureSpec,
}

fn future_timestamps(window: &LoadSeries, horizon: usize) -> Vec<NaiveDateTime> {
    (0..horizon).map(|k| window.timestamp(window.len() + k)).collect()
}

fn window_calendars(window: &LoadSeries, horizon: usize) -> Vec<CalendarFeatures> {
    (0..window.len() + horizon).map(|i| calendar_features(window.timestamp(i))).collect()
}

fn dense_normalised(window: &LoadSeries, norm: &NormStats) -> Result<Vec<f64>> {
    window
        .dense_values()
        .map(|v| v.into_iter().map(|x| norm.normalize(x)).collect())
        .ok_or_else(|| Error::data(format!("window starting {} contains missing samples", window.start())))
}

impl StandardModel {
    fn forecast(&self, window: &LoadSeries, horizon: usize, lag: usize, mode: ForecastMode) -> Result<ForecastResult> {
        let loads = dense_normalised(window, &self.norm)?;
        let calendars = window_calendars(window, horizon);
        let preds = roll_forward(&self.stack, &loads, &calendars, horizon, lag, self.features)?;
        Ok(ForecastResult {
            timestamps: future_timestamps(window, horizon),
            predictions: preds.into_iter().map(|z| self.norm.denormalize(z)).collect(),
            mode,
        })
    }
}

/// Recursive forecast with the previous-step input. The model must have
/// been trained with lag 1.
pub fn recursive_forecast(model: &StandardModel, warmup: &LoadSeries, horizon: usize) -> Result<ForecastResult> {
    if model.lag != 1 {
        return Err(Error::invalid(format!(
            "model was trained with input lag {}; use the delayed-input forecast",
            model.lag
        )));
    }
    model.forecast(warmup, horizon, 1, ForecastMode::Recursive)
}

/// Recursive forecast where the load slot carries the value `model.lag`
/// steps back, measured while it lies inside the warm-up and predicted after.
pub fn delayed_input_forecast(model: &StandardModel, warmup: &LoadSeries, horizon: usize) -> Result<ForecastResult> {
    if warmup.len() < model.lag {
        return Err(Error::invalid(format!(
            "warm-up of {} steps is shorter than the input lag {}",
            warmup.len(),
            model.lag
        )));
    }
    model.forecast(warmup, horizon, model.lag, ForecastMode::Delayed)
}

/// One-step-ahead predictions for the steps after `warmup`, using measured
/// loads as inputs throughout. `series` covers warm-up and horizon.
pub fn one_step_forecast(model: &StandardModel, series: &LoadSeries, warmup: usize) -> Result<ForecastResult> {
    let loads = dense_normalised(series, &model.norm)?;
    let calendars = window_calendars(series, 0);
    let preds = teacher_forced(&model.stack, &loads, &calendars, warmup, model.lag, model.features)?;
    Ok(ForecastResult {
        timestamps: (warmup..series.len()).map(|i| series.timestamp(i)).collect(),
        predictions: preds.into_iter().map(|z| model.norm.denormalize(z)).collect(),
        mode: ForecastMode::OneStep,
    })
}

/// Repeats the last measured value of `window` for `horizon` steps.
pub fn persistence_baseline(window: &LoadSeries, horizon: usize) -> Result<ForecastResult> {
    let last = window
        .values()
        .iter()
        .rev()
        .find_map(|v| *v)
        .ok_or_else(|| Error::data("persistence baseline needs at least one measured value"))?;
    Ok(ForecastResult {
        timestamps: future_timestamps(window, horizon),
        predictions: vec![last; horizon],
        mode: ForecastMode::Persistence,
    })
}
