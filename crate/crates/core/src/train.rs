//! Truncated BPTT, losses, global-norm clipping, ADAM and the epoch loop.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::features::FeatureSeries;
use crate::lstm::{stack_step, stack_step_backward, CellState, DropoutMasks, DropoutSpec, StackParams, StepCache};
use crate::matrix::Matrix;
use crate::params::{GradSet, ParamSet};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Unrolled window length `M`.
    pub unroll_steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_threshold: f64,
    pub epochs: usize,
    pub dropout: f64,
    /// Reuse one dropout mask set across all steps of a window.
    pub reuse_dropout_mask: bool,
    pub seed: u64,
    pub loss_report_stride: usize,
    /// Window advance; `None` means non-overlapping windows.
    pub stride: Option<usize>,
    /// Start each window from the previous window's final state when the
    /// two are contiguous, instead of from zeros.
    pub carry_state: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            unroll_steps: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_threshold: 5.0,
            epochs: 10,
            dropout: 0.2,
            reuse_dropout_mask: false,
            seed: 0,
            loss_report_stride: 1,
            stride: None,
            carry_state: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.unroll_steps == 0 {
            problems.push("unroll_steps must be positive".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            problems.push(format!("beta1 must lie in (0, 1), got {}", self.beta1));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            problems.push(format!("beta2 must lie in (0, 1), got {}", self.beta2));
        }
        if !(self.epsilon > 0.0) {
            problems.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.clip_threshold > 0.0) {
            problems.push(format!("clip_threshold must be positive, got {}", self.clip_threshold));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.stride == Some(0) {
            problems.push("stride must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn dropout_spec(&self) -> DropoutSpec {
        DropoutSpec { rate: self.dropout, reuse_across_window: self.reuse_dropout_mask }
    }
}

/// Sum of squared errors.
pub fn sse_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::invalid(format!("loss needs equal non-empty lengths, got {} and {}", y.len(), y_hat.len())));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    Ok((sse_loss(y, y_hat)? / y.len() as f64).sqrt())
}

/// If the global norm exceeds `threshold`, rescales every element by
/// `threshold / norm`. Returns the norm before clipping.
pub fn clip_global_norm_in_place(g: &mut GradSet, threshold: f64) -> f64 {
    let norm = g.global_norm();
    if norm > threshold {
        g.scale(threshold / norm);
    }
    norm
}

pub fn clip_global_norm(g: &GradSet, threshold: f64) -> GradSet {
    let mut out = g.clone();
    clip_global_norm_in_place(&mut out, threshold);
    out
}

/// First and second moment estimates for ADAM.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: GradSet,
    pub v: GradSet,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: ParamSet + ?Sized>(params: &P) -> Self {
        AdamState { m: GradSet::zeros_like(params), v: GradSet::zeros_like(params), t: 0 }
    }
}

/// Bias-corrected ADAM update.
pub fn adam_step<P: ParamSet + ?Sized>(params: &mut P, state: &mut AdamState, g: &GradSet, cfg: &TrainConfig) -> Result<()> {
    g.check_congruent(params)?;
    state.m.check_congruent(params)?;
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (((p, m), v), g) in params
        .tensors_mut()
        .into_iter()
        .zip(state.m.tensors_mut().iter_mut())
        .zip(state.v.tensors_mut().iter_mut())
        .zip(g.tensors())
    {
        for (((pv, mv), vv), &gv) in p
            .as_mut_slice()
            .iter_mut()
            .zip(m.as_mut_slice().iter_mut())
            .zip(v.as_mut_slice().iter_mut())
            .zip(g.as_slice())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h`, one coordinate at a time.
pub fn finite_diff_grad<P, F>(mut loss: F, params: &P, h: f64) -> Result<GradSet>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grads = GradSet::zeros_like(params);
    let mut probe = params.clone();
    let n_tensors = grads.tensors().len();
    for ti in 0..n_tensors {
        let len = grads.tensors()[ti].len();
        for k in 0..len {
            let orig = probe.tensors_mut()[ti].as_slice()[k];
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig + h;
            let up = loss(&probe)?;
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig - h;
            let down = loss(&probe)?;
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig;
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::Numerical(format!("loss is not finite while probing {}[{k}]", grads.names()[ti])));
            }
            grads.tensors_mut()[ti].as_mut_slice()[k] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// Inputs and targets for one unrolled window.
#[derive(Clone, Debug)]
pub struct Window {
    pub inputs: Vec<Matrix>,
    pub targets: Vec<f64>,
}

/// Forward record of an unrolled stack.
pub(crate) struct Unrolled {
    pub steps: Vec<StepCache>,
    pub final_states: Vec<CellState>,
}

impl Unrolled {
    pub fn predictions(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.y_hat).collect()
    }
}

/// Runs `s` over `inputs` from `init`. Dropout is applied only when `rng` is given.
pub(crate) fn unroll(
    s: &StackParams,
    inputs: &[&Matrix],
    init: Vec<CellState>,
    dropout: &DropoutSpec,
    mut rng: Option<&mut SeededRng>,
) -> Result<Unrolled> {
    let shared: Option<DropoutMasks> = match (&mut rng, dropout.reuse_across_window) {
        (Some(r), true) => dropout.sample_masks(s, r),
        _ => None,
    };
    let mut states = init;
    let mut steps = Vec::with_capacity(inputs.len());
    for input in inputs {
        let fresh;
        let masks = match &mut rng {
            Some(_) if dropout.reuse_across_window => shared.as_ref(),
            Some(r) => {
                fresh = dropout.sample_masks(s, r);
                fresh.as_ref()
            }
            None => None,
        };
        let (next, _, cache) = stack_step(input, &states, s, masks)?;
        states = next;
        steps.push(cache);
    }
    Ok(Unrolled { steps, final_states: states })
}

/// Backpropagates `d_y_hat[t]` (dL/dŷ per step) plus optional gradients on
/// the final states through the unrolled window, accumulating into `grads`.
/// Returns the gradients on the initial `(o, x)` of every layer.
pub(crate) fn backprop(
    s: &StackParams,
    unrolled: &Unrolled,
    d_y_hat: &[f64],
    d_final: Option<(Vec<Matrix>, Vec<Matrix>)>,
    grads: &mut StackParams,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    if d_y_hat.len() != unrolled.steps.len() {
        return Err(Error::invalid("one output gradient per unrolled step is required"));
    }
    let (mut d_o, mut d_x) = match d_final {
        Some(d) => d,
        None => {
            let z: Vec<Matrix> = s.layers.iter().map(|l| Matrix::zeros(1, l.hidden_dim())).collect();
            (z.clone(), z)
        }
    };
    for (cache, &dy) in unrolled.steps.iter().zip(d_y_hat).rev() {
        stack_step_backward(cache, dy, s, &mut d_o, &mut d_x, grads)?;
    }
    Ok((d_o, d_x))
}

fn sse_and_output_grads(targets: &[f64], preds: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = sse_loss(targets, preds)?;
    let d = preds.iter().zip(targets).map(|(p, y)| 2.0 * (p - y)).collect();
    Ok((loss, d))
}

/// Loss `Σ (y − ŷ)²` over one window from zero state, and its exact
/// gradient with parameters shared across the unroll.
///
/// Dropout is applied when `cfg.dropout > 0` and masks are drawn from `rng`.
pub fn bptt_window(window: &Window, model: &StackParams, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<(f64, GradSet)> {
    let (loss, grads, _) = bptt_window_from(window, model, model.zero_states(), &cfg.dropout_spec(), Some(rng))?;
    Ok((loss, GradSet::from_params(&grads)))
}

pub(crate) fn bptt_window_from(
    window: &Window,
    model: &StackParams,
    init: Vec<CellState>,
    dropout: &DropoutSpec,
    rng: Option<&mut SeededRng>,
) -> Result<(f64, StackParams, Vec<CellState>)> {
    if window.inputs.len() != window.targets.len() || window.inputs.is_empty() {
        return Err(Error::invalid("window needs one input per target and at least one step"));
    }
    if window.targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::data("window contains invalid targets"));
    }
    let inputs: Vec<&Matrix> = window.inputs.iter().collect();
    let unrolled = unroll(model, &inputs, init, dropout, rng)?;
    let (loss, d_y) = sse_and_output_grads(&window.targets, &unrolled.predictions())?;
    let mut grads = zeros_like_stack(model);
    backprop(model, &unrolled, &d_y, None, &mut grads)?;
    Ok((loss, grads, unrolled.final_states))
}

/// Loss of one window in evaluation mode (no dropout), from zero state.
pub fn window_loss(window: &Window, model: &StackParams) -> Result<f64> {
    let inputs: Vec<&Matrix> = window.inputs.iter().collect();
    let unrolled = unroll(model, &inputs, model.zero_states(), &DropoutSpec::disabled(), None)?;
    sse_loss(&window.targets, &unrolled.predictions())
}

pub(crate) fn zeros_like_stack(s: &StackParams) -> StackParams {
    StackParams::zeros(s.input_dim(), &s.hidden_dims(), s.variant)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub sse: f64,
    pub rmse_train: f64,
    /// Wall time since training started.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last_rmse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.rmse_train)
    }

    /// `epoch,sse,rmse_train,seconds` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,sse,rmse_train,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{:.3}\n", e.epoch, e.sse, e.rmse_train, e.seconds));
        }
        s
    }
}

/// Window start indices (first target step) for one-step training with a
/// given input lag.
pub(crate) fn window_starts(data: &FeatureSeries, lag: usize, len: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = lag;
    while s + len <= data.len() {
        if data.all_valid(s - lag..s + len) {
            starts.push(s);
        }
        s += stride;
    }
    starts
}

pub(crate) fn build_window(data: &FeatureSeries, start: usize, len: usize, lag: usize) -> Result<Window> {
    let mut inputs = Vec::with_capacity(len);
    let mut targets = Vec::with_capacity(len);
    for t in start..start + len {
        inputs.push(data.input(t, lag)?.as_matrix().clone());
        targets.push(data.target(t)?);
    }
    Ok(Window { inputs, targets })
}

/// Epoch loop state for one-step-ahead training of a stack.
pub struct Trainer {
    cfg: TrainConfig,
    adam: AdamState,
    rng: SeededRng,
    epoch: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(model: &StackParams, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        let rng = SeededRng::new(cfg.seed ^ 0x0005_eedd_20b0_u64);
        Ok(Trainer { adam: AdamState::new(model), rng, epoch: 0, started: Instant::now(), cfg })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One pass over non-overlapping (or `stride`-spaced) windows in data
    /// order: BPTT, clip, ADAM per window. Windows touching invalid samples
    /// are skipped.
    pub fn run_epoch(&mut self, model: &mut StackParams, data: &FeatureSeries, lag: usize) -> Result<EpochRecord> {
        let m = self.cfg.unroll_steps;
        if lag == 0 {
            return Err(Error::invalid("input lag must be at least 1"));
        }
        if data.len() < m + lag {
            return Err(Error::data(format!("series of length {} is too short for windows of {m} steps", data.len())));
        }
        let stride = self.cfg.stride.unwrap_or(m);
        let starts = window_starts(data, lag, m, stride);
        if starts.is_empty() {
            return Err(Error::data("no fully valid training window"));
        }
        let dropout = self.cfg.dropout_spec();
        let mut sse = 0.0;
        let mut count = 0usize;
        let mut carried: Option<(usize, Vec<CellState>)> = None;
        for &s in &starts {
            let window = build_window(data, s, m, lag)?;
            let init = match carried.take() {
                Some((end, states)) if self.cfg.carry_state && end == s => states,
                _ => model.zero_states(),
            };
            let (loss, grads, final_states) = bptt_window_from(&window, model, init, &dropout, Some(&mut self.rng))?;
            let mut g = GradSet::from_params(&grads);
            if !loss.is_finite() || !g.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss or gradient in epoch {}", self.epoch + 1)));
            }
            clip_global_norm_in_place(&mut g, self.cfg.clip_threshold);
            adam_step(model, &mut self.adam, &g, &self.cfg)?;
            sse += loss;
            count += m;
            carried = Some((s + m, final_states));
        }
        self.epoch += 1;
        Ok(EpochRecord {
            epoch: self.epoch,
            sse,
            rmse_train: (sse / count as f64).sqrt(),
            seconds: self.started.elapsed().as_secs_f64(),
        })
    }
}

/// Trains `model` one step ahead on `data` for `cfg.epochs` epochs; the
/// input load slot carries the value `lag` steps back.
pub fn fit(model: &mut StackParams, data: &FeatureSeries, lag: usize, cfg: &TrainConfig) -> Result<TrainLog> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut log = TrainLog::default();
    for _ in 0..cfg.epochs {
        log.epochs.push(trainer.run_epoch(model, data, lag)?);
    }
    Ok(log)
}
