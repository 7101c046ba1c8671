//! Encoder–decoder forecaster.
//!
//! The encoder reads a window of `M` input rows `[y_t, calendar_(t+1)]` and
//! hands its final `(x, o)` per layer to the decoder. The decoder then runs
//! `n` steps on calendar rows only and its readout emits the forecast.
//! Training pre-fits the encoder one step ahead, then trains both networks
//! jointly on the decoder loss with gradients crossing the state handoff.

use std::time::Instant;

use crate::data::{calendar_features, CalendarFeatures, LoadSeries, NormStats};
use crate::error::{Error, Result};
use crate::features::{build_input, DecoderInput, FeatureSeries, FeatureSpec, InputVector};
use crate::forecast::{ForecastMode, ForecastResult};
use crate::lstm::{stack_step, CellState, CellVariant, DropoutSpec, StackParams};
use crate::matrix::Matrix;
use crate::params::{GradSet, ParamSet};
use crate::rng::SeededRng;
use crate::train::{
    adam_step, backprop, clip_global_norm_in_place, fit, sse_loss, unroll, zeros_like_stack, AdamState, EpochRecord,
    TrainConfig, TrainLog,
};

/// Separate encoder and decoder stacks with matching layer widths.
#[derive(Clone, Debug, PartialEq)]
pub struct S2SParams {
    pub encoder: StackParams,
    pub decoder: StackParams,
}

impl S2SParams {
    pub fn init(hidden: &[usize], variant: CellVariant, spec: FeatureSpec, range: f64, rng: &mut SeededRng) -> Result<Self> {
        let encoder = StackParams::init(spec.input_dim(), hidden, variant, range, rng)?;
        let decoder = StackParams::init(spec.calendar_dim(), hidden, variant, range, rng)?;
        Ok(S2SParams { encoder, decoder })
    }

    pub fn zeros(hidden: &[usize], variant: CellVariant, spec: FeatureSpec) -> Self {
        S2SParams {
            encoder: StackParams::zeros(spec.input_dim(), hidden, variant),
            decoder: StackParams::zeros(spec.calendar_dim(), hidden, variant),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.hidden_dims() != self.decoder.hidden_dims() {
            return Err(Error::invalid(format!(
                "encoder layers {:?} and decoder layers {:?} cannot hand over state",
                self.encoder.hidden_dims(),
                self.decoder.hidden_dims()
            )));
        }
        if self.encoder.variant != self.decoder.variant {
            return Err(Error::invalid("encoder and decoder use different cell variants"));
        }
        if self.encoder.input_dim() != self.decoder.input_dim() + 1 {
            return Err(Error::invalid("the encoder input must be the decoder input plus one load column"));
        }
        Ok(())
    }
}

impl ParamSet for S2SParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        self.encoder.visit(&format!("{prefix}encoder."), out);
        self.decoder.visit(&format!("{prefix}decoder."), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        self.encoder.visit_mut(out);
        self.decoder.visit_mut(out);
    }
}

/// Final encoder state per layer; its shape depends only on the layer widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub states: Vec<CellState>,
    /// Number of input rows consumed.
    pub window_len: usize,
}

pub fn encode(model: &S2SParams, window: &[InputVector]) -> Result<Encoding> {
    if window.is_empty() {
        return Err(Error::invalid("cannot encode an empty window"));
    }
    let mut states = model.encoder.zero_states();
    for iv in window {
        states = stack_step(iv.as_matrix(), &states, &model.encoder, None)?.0;
    }
    Ok(Encoding { states, window_len: window.len() })
}

/// Decoder outputs in normalised units.
pub fn decode_normalized(model: &S2SParams, enc: &Encoding, inputs: &[DecoderInput]) -> Result<Vec<f64>> {
    if inputs.is_empty() {
        return Err(Error::invalid("decode horizon must be at least 1"));
    }
    let mut states = enc.states.clone();
    let mut out = Vec::with_capacity(inputs.len());
    for f in inputs {
        let (next, y, _) = stack_step(f.as_matrix(), &states, &model.decoder, None)?;
        states = next;
        out.push(y);
    }
    Ok(out)
}

/// Trained encoder–decoder with the normalisation it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct S2SModel {
    pub params: S2SParams,
    pub norm: NormStats,
    pub features: FeatureSpec,
}

/// Runs the decoder from `enc` over the given future calendar steps and
/// returns loads in kW.
pub fn decode(model: &S2SModel, enc: &Encoding, future: &[CalendarFeatures]) -> Result<Vec<f64>> {
    let inputs = future
        .iter()
        .map(|c| DecoderInput::from_calendar(c, model.features))
        .collect::<Result<Vec<_>>>()?;
    Ok(decode_normalized(&model.params, enc, &inputs)?.into_iter().map(|z| model.norm.denormalize(z)).collect())
}

/// Encoder rows for a measured window: row `j` pairs load `j` with the
/// calendar of the step after it.
pub fn encoder_inputs(window: &LoadSeries, norm: &NormStats, spec: FeatureSpec) -> Result<Vec<InputVector>> {
    let loads = window
        .dense_values()
        .ok_or_else(|| Error::data(format!("window starting {} contains missing samples", window.start())))?;
    loads
        .iter()
        .enumerate()
        .map(|(j, &y)| build_input(norm.normalize(y), &calendar_features(window.timestamp(j + 1)), spec))
        .collect()
}

/// Encodes `window` and decodes `horizon` steps after its last sample.
pub fn s2s_forecast(model: &S2SModel, window: &LoadSeries, horizon: usize) -> Result<ForecastResult> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let enc = encode(&model.params, &encoder_inputs(window, &model.norm, model.features)?)?;
    let timestamps: Vec<_> = (0..horizon).map(|k| window.timestamp(window.len() + k)).collect();
    let future: Vec<_> = timestamps.iter().map(|t| calendar_features(*t)).collect();
    let predictions = decode(model, &enc, &future)?;
    Ok(ForecastResult { timestamps, predictions, mode: ForecastMode::S2S })
}

/// Trains the encoder alone as a one-step predictor through its own readout.
pub fn pretrain_encoder(model: &mut S2SParams, data: &FeatureSeries, cfg: &TrainConfig) -> Result<TrainLog> {
    fit(&mut model.encoder, data, 1, cfg)
}

/// One training block: encoder rows, decoder rows and decoder targets.
#[derive(Clone, Debug)]
pub struct Block {
    pub encoder_inputs: Vec<Matrix>,
    pub decoder_inputs: Vec<Matrix>,
    pub targets: Vec<f64>,
}

impl Block {
    /// Block whose first window load sits at index `b` of `data`.
    pub fn from_series(data: &FeatureSeries, b: usize, window: usize, horizon: usize) -> Result<Block> {
        let encoder_inputs = (b + 1..=b + window)
            .map(|t| data.input(t, 1).map(|iv| iv.as_matrix().clone()))
            .collect::<Result<_>>()?;
        let decoder_inputs = (b + window..b + window + horizon)
            .map(|t| data.decoder_input(t).map(|f| f.as_matrix().clone()))
            .collect::<Result<_>>()?;
        let targets = (b + window..b + window + horizon).map(|t| data.target(t)).collect::<Result<_>>()?;
        Ok(Block { encoder_inputs, decoder_inputs, targets })
    }
}

/// Decoder loss `Σ (y − ŷ)²` over the horizon of one block and its gradient
/// with respect to every encoder and decoder parameter.
pub fn block_loss_and_grads(
    model: &S2SParams,
    block: &Block,
    dropout: &DropoutSpec,
    mut rng: Option<&mut SeededRng>,
) -> Result<(f64, GradSet)> {
    let enc_in: Vec<&Matrix> = block.encoder_inputs.iter().collect();
    let dec_in: Vec<&Matrix> = block.decoder_inputs.iter().collect();
    let enc = unroll(&model.encoder, &enc_in, model.encoder.zero_states(), dropout, rng.as_deref_mut())?;
    let dec = unroll(&model.decoder, &dec_in, enc.final_states.clone(), dropout, rng)?;
    let preds = dec.predictions();
    let loss = sse_loss(&block.targets, &preds)?;
    let d_y: Vec<f64> = preds.iter().zip(&block.targets).map(|(p, y)| 2.0 * (p - y)).collect();

    let mut grads = S2SParams { encoder: zeros_like_stack(&model.encoder), decoder: zeros_like_stack(&model.decoder) };
    let d_handoff = backprop(&model.decoder, &dec, &d_y, None, &mut grads.decoder)?;
    let zeros = vec![0.0; enc.steps.len()];
    backprop(&model.encoder, &enc, &zeros, Some(d_handoff), &mut grads.encoder)?;
    Ok((loss, GradSet::from_params(&grads)))
}

/// Decoder loss of one block in evaluation mode.
pub fn block_loss(model: &S2SParams, block: &Block) -> Result<f64> {
    let enc_in: Vec<&Matrix> = block.encoder_inputs.iter().collect();
    let dec_in: Vec<&Matrix> = block.decoder_inputs.iter().collect();
    let none = DropoutSpec::disabled();
    let enc = unroll(&model.encoder, &enc_in, model.encoder.zero_states(), &none, None)?;
    let dec = unroll(&model.decoder, &dec_in, enc.final_states, &none, None)?;
    sse_loss(&block.targets, &dec.predictions())
}

/// Block starts (index of the first window load) whose window and horizon
/// are fully measured.
pub fn block_starts(data: &FeatureSeries, window: usize, horizon: usize, stride: usize) -> Vec<usize> {
    let span = window + horizon;
    let mut starts = Vec::new();
    let mut b = 0;
    while b + span <= data.len() {
        if data.all_valid(b..b + span) {
            starts.push(b);
        }
        b += stride;
    }
    starts
}

/// Epoch loop for joint encoder–decoder training.
pub struct JointTrainer {
    cfg: TrainConfig,
    adam: AdamState,
    rng: SeededRng,
    window: usize,
    horizon: usize,
    freeze_encoder: bool,
    epoch: usize,
    started: Instant,
}

impl JointTrainer {
    pub fn new(model: &S2SParams, cfg: TrainConfig, window: usize, horizon: usize) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if window == 0 || horizon == 0 {
            return Err(Error::invalid(format!("window ({window}) and horizon ({horizon}) must be at least 1")));
        }
        let rng = SeededRng::new(cfg.seed ^ 0x0005_25e0_c0de);
        Ok(JointTrainer {
            adam: AdamState::new(model),
            rng,
            window,
            horizon,
            freeze_encoder: false,
            epoch: 0,
            started: Instant::now(),
            cfg,
        })
    }

    /// Diagnostic mode: only the decoder is updated.
    pub fn freeze_encoder(mut self, freeze: bool) -> Self {
        self.freeze_encoder = freeze;
        self
    }

    /// One pass over blocks in data order, sliding by `cfg.stride` (default 1).
    /// Blocks touching a missing sample are skipped.
    pub fn run_epoch(&mut self, model: &mut S2SParams, data: &FeatureSeries) -> Result<EpochRecord> {
        let span = self.window + self.horizon;
        if data.len() < span {
            return Err(Error::data(format!(
                "series of length {} is shorter than window {} + horizon {}",
                data.len(),
                self.window,
                self.horizon
            )));
        }
        let starts = block_starts(data, self.window, self.horizon, self.cfg.stride.unwrap_or(1));
        if starts.is_empty() {
            return Err(Error::data("no fully valid training block"));
        }
        let dropout = self.cfg.dropout_spec();
        let mut sse = 0.0;
        let mut count = 0usize;
        for &b in &starts {
            let block = Block::from_series(data, b, self.window, self.horizon)?;
            let (loss, mut g) = block_loss_and_grads(model, &block, &dropout, Some(&mut self.rng))?;
            if !loss.is_finite() || !g.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss or gradient in epoch {}", self.epoch + 1)));
            }
            if self.freeze_encoder {
                g.zero_prefix("encoder.");
            }
            clip_global_norm_in_place(&mut g, self.cfg.clip_threshold);
            adam_step(model, &mut self.adam, &g, &self.cfg)?;
            sse += loss;
            count += self.horizon;
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

/// Joint training on the decoder loss for `cfg.epochs` epochs.
pub fn joint_train(model: &mut S2SParams, data: &FeatureSeries, cfg: &TrainConfig, window: usize, horizon: usize) -> Result<TrainLog> {
    let mut trainer = JointTrainer::new(model, cfg.clone(), window, horizon)?;
    let mut log = TrainLog::default();
    for _ in 0..cfg.epochs {
        log.epochs.push(trainer.run_epoch(model, data)?);
    }
    Ok(log)
}

/// Number of pre-training epochs out of a total budget.
pub fn pretrain_epochs(total: usize, fraction: f64) -> usize {
    ((total as f64) * fraction.clamp(0.0, 1.0)).round() as usize
}

/// Pre-training for a fraction of `cfg.epochs`, then joint training for the rest.
pub fn train_s2s(
    model: &mut S2SParams,
    data: &FeatureSeries,
    cfg: &TrainConfig,
    window: usize,
    horizon: usize,
    pretrain_fraction: f64,
) -> Result<(TrainLog, TrainLog)> {
    let pre = pretrain_epochs(cfg.epochs, pretrain_fraction);
    let pre_log = pretrain_encoder(model, data, &TrainConfig { epochs: pre, ..cfg.clone() })?;
    let joint_log = joint_train(model, data, &TrainConfig { epochs: cfg.epochs - pre, ..cfg.clone() }, window, horizon)?;
    Ok((pre_log, joint_log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_timestamp, Resolution};
    use crate::features::audit_decoder_inputs;
    use crate::lstm::cell_forward;

    fn hourly(values: &[f64]) -> LoadSeries {
        LoadSeries::new(Resolution::Hour, parse_timestamp("2009-01-05T00:00").unwrap(), values.iter().map(|v| Some(*v)).collect())
            .unwrap()
    }

    fn model(seed: u64) -> S2SModel {
        let mut rng = SeededRng::new(seed);
        S2SModel {
            params: S2SParams::init(&[5, 4], CellVariant::Standard, FeatureSpec::default(), 0.4, &mut rng).unwrap(),
            norm: NormStats { mean: 1.0, std: 0.5 },
            features: FeatureSpec::default(),
        }
    }

    #[test]
    fn zero_encoder_gives_zero_encoding() {
        let p = S2SParams::zeros(&[3, 3], CellVariant::Standard, FeatureSpec::default());
        let w = encoder_inputs(&hourly(&[1.0, 5.0, -2.0]), &NormStats::identity(), FeatureSpec::default()).unwrap();
        let enc = encode(&p, &w).unwrap();
        assert!(enc.states.iter().all(|s| s.x.max_abs() == 0.0 && s.o.max_abs() == 0.0));
    }

    #[test]
    fn encoding_shape_is_independent_of_window_length() {
        let m = model(1);
        let long: Vec<f64> = (0..100).map(|k| 1.0 + 0.1 * (k as f64).sin()).collect();
        let a = encode(&m.params, &encoder_inputs(&hourly(&long[..10]), &m.norm, m.features).unwrap()).unwrap();
        let b = encode(&m.params, &encoder_inputs(&hourly(&long), &m.norm, m.features).unwrap()).unwrap();
        let shapes = |e: &Encoding| e.states.iter().map(|s| (s.x.shape(), s.o.shape())).collect::<Vec<_>>();
        assert_eq!(shapes(&a), shapes(&b));
        assert_eq!((a.window_len, b.window_len), (10, 100));
        assert!(encode(&m.params, &[]).is_err());
    }

    #[test]
    fn single_step_encoding_is_one_cell_step_per_layer() {
        let m = model(2);
        let w = encoder_inputs(&hourly(&[1.3]), &m.norm, m.features).unwrap();
        let enc = encode(&m.params, &w).unwrap();
        let (s0, _) = cell_forward(w[0].as_matrix(), &CellState::zeros(5), &m.params.encoder.layers[0], CellVariant::Standard).unwrap();
        let (s1, _) = cell_forward(&s0.o, &CellState::zeros(4), &m.params.encoder.layers[1], CellVariant::Standard).unwrap();
        assert_eq!(enc.states, vec![s0, s1]);
    }

    #[test]
    fn zero_decoder_emits_its_bias() {
        let mut m = model(3);
        m.params.decoder = StackParams::zeros(3, &[5, 4], CellVariant::Standard);
        m.params.decoder.b_y.fill(0.5);
        m.norm = NormStats::identity();
        let f = s2s_forecast(&m, &hourly(&[1.0, 2.0, 3.0]), 7).unwrap();
        assert_eq!(f.predictions, vec![0.5; 7]);
    }

    #[test]
    fn decode_length_contract() {
        let m = model(4);
        let w = hourly(&[1.0, 1.5, 0.7, 1.2]);
        for n in [1, 60, 120] {
            assert_eq!(s2s_forecast(&m, &w, n).unwrap().horizon(), n);
        }
        let enc = encode(&m.params, &encoder_inputs(&w, &m.norm, m.features).unwrap()).unwrap();
        assert!(decode(&m, &enc, &[]).is_err());
        assert!(s2s_forecast(&m, &w, 0).is_err());
    }

    #[test]
    fn forecasts_are_deterministic_and_accept_any_window_length() {
        let m = model(5);
        let values: Vec<f64> = (0..168).map(|k| 1.0 + 0.3 * (k as f64 / 4.0).cos()).collect();
        let w24 = hourly(&values).slice(144..168).unwrap();
        let a = s2s_forecast(&m, &w24, 24).unwrap();
        let b = s2s_forecast(&m, &w24, 24).unwrap();
        assert_eq!(a, b);
        assert!(s2s_forecast(&m, &hourly(&values), 24).is_ok());
    }

    #[test]
    fn decoder_never_sees_a_load() {
        let m = model(6);
        let sentinel = 12345.678;
        let w = hourly(&[sentinel; 12]);
        let (f, rows) = audit_decoder_inputs(|| s2s_forecast(&m, &w, 9).unwrap());
        assert_eq!(rows.len(), 9);
        let z = m.norm.normalize(sentinel);
        for (row, ts) in rows.iter().zip(&f.timestamps) {
            assert_eq!(row.len(), 3);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v) && *v != z && *v != sentinel));
            assert_eq!(*row, calendar_features(*ts).scaled(false).unwrap());
        }
    }

    #[test]
    fn pretraining_touches_only_the_encoder() {
        let mut m = model(7);
        let values: Vec<f64> = (0..400).map(|k| 1.0 + (k as f64 * std::f64::consts::TAU / 24.0).sin()).collect();
        let data = FeatureSeries::new(&hourly(&values), &m.norm, m.features);
        let before = m.params.clone();
        let cfg = TrainConfig { epochs: 2, unroll_steps: 24, ..TrainConfig::default() };
        pretrain_encoder(&mut m.params, &data, &cfg).unwrap();
        assert_eq!(m.params.decoder, before.decoder);
        assert_ne!(m.params.encoder, before.encoder);

        let mut untouched = before.clone();
        let log = pretrain_encoder(&mut untouched, &data, &TrainConfig { epochs: 0, ..cfg }).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(untouched, before);
    }

    #[test]
    fn joint_gradient_reaches_the_encoder_but_not_its_readout() {
        let m = model(8);
        let values: Vec<f64> = (0..20).map(|k| 1.0 + 0.4 * (k as f64).sin()).collect();
        let data = FeatureSeries::new(&hourly(&values), &m.norm, m.features);
        let block = Block::from_series(&data, 0, 6, 4).unwrap();
        let (_, g) = block_loss_and_grads(&m.params, &block, &DropoutSpec::disabled(), None).unwrap();
        assert!(g.get("encoder.layer0.w_ix").unwrap().max_abs() > 0.0);
        assert_eq!(g.get("encoder.w_y").unwrap().max_abs(), 0.0);
        assert_eq!(g.get("encoder.b_y").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn minimal_block_trains_and_short_series_is_rejected() {
        let mut m = model(9);
        let data = FeatureSeries::new(&hourly(&[1.0, 1.2, 0.8, 1.1]), &m.norm, m.features);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        joint_train(&mut m.params, &data, &cfg, 1, 1).unwrap();
        assert!(joint_train(&mut m.params, &data, &cfg, 3, 2).is_err());
        assert!(joint_train(&mut m.params, &data, &cfg, 1, 0).is_err());
    }

    #[test]
    fn mismatched_stacks_are_rejected() {
        let mut p = S2SParams::zeros(&[3], CellVariant::Standard, FeatureSpec::default());
        p.decoder = StackParams::zeros(3, &[4], CellVariant::Standard);
        assert!(p.validate().is_err());
    }
}
