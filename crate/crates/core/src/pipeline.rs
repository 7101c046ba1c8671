//! End-to-end runs shared by the CLI, the Python bindings and the tests:
//! load → resample → split → normalise → train → evaluate → forecast.

use std::path::Path;

use chrono::NaiveDateTime;

use crate::checkpoint::{empty_model, Checkpoint};
use crate::config::{Architecture, RunConfig};
use crate::data::{fit_norm, read_series_file, resample_hourly, split, LoadSeries, NormStats, ParseReport, Resolution, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, BlockProtocol, EvalReport, Forecaster};
use crate::features::FeatureSeries;
use crate::forecast::{ForecastMode, ForecastResult};
use crate::lstm::StackParams;
use crate::rng::SeededRng;
use crate::s2s::{pretrain_epochs, JointTrainer, S2SParams};
use crate::train::{EpochRecord, TrainLog, Trainer};

/// Reads a raw benchmark file or canonical CSV and brings it to the
/// configured resolution.
pub fn load_series(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<(LoadSeries, Option<ParseReport>)> {
    let (series, report) = read_series_file(path)?;
    let series = match (series.resolution(), cfg.resolution) {
        (a, b) if a == b => series,
        (Resolution::Minute, Resolution::Hour) => resample_hourly(&series, cfg.hour_min_valid)?,
        (a, b) => {
            return Err(Error::Config(vec![format!(
                "series has {} resolution but the configuration asks for {}",
                a.as_str(),
                b.as_str()
            )]))
        }
    };
    Ok((series, report))
}

/// Train/test partitions and the statistics fitted on the training one.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: LoadSeries,
    pub test: LoadSeries,
    pub norm: NormStats,
    pub boundary: NaiveDateTime,
}

impl Prepared {
    /// Training partition after optional subsampling and forward fill.
    pub fn training_series(&self, cfg: &RunConfig) -> Result<LoadSeries> {
        let n = self.train.len();
        let keep = ((n as f64 * cfg.train_subsample).ceil() as usize).clamp(1, n);
        let s = self.train.slice(n - keep..n)?;
        Ok(if cfg.forward_fill { s.forward_filled() } else { s })
    }
}

/// Splits at `train_months` and fits normalisation on the training side only.
pub fn prepare(cfg: &RunConfig, series: &LoadSeries) -> Result<Prepared> {
    let spec = SplitSpec { train_months: cfg.train_months };
    let (train, test) = split(series, spec)?;
    let norm = fit_norm(&train)?;
    Ok(Prepared { boundary: spec.boundary(series)?, train, test, norm })
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Encoder pre-training epochs (S2S only).
    pub pretrain_log: TrainLog,
    pub log: TrainLog,
    /// `(epoch, normalised test RMSE)` at every evaluation point.
    pub test_history: Vec<(usize, f64)>,
    pub final_train: EvalReport,
    pub final_test: EvalReport,
}

impl TrainOutcome {
    /// Lowest test RMSE seen during training, with its epoch.
    pub fn best_test(&self) -> Option<(usize, f64)> {
        self.test_history.iter().copied().fold(None, |best, (e, r)| match best {
            Some((_, b)) if b <= r => best,
            _ => Some((e, r)),
        })
    }

    /// Per-epoch log with the test RMSE column; the resolved config is
    /// embedded as `#` comment lines.
    pub fn log_csv(&self) -> String {
        let mut s: String = self.checkpoint.config.to_text().lines().map(|l| format!("# {l}\n")).collect();
        s.push_str("phase,epoch,sse,rmse_train,rmse_test,seconds\n");
        let row = |phase: &str, r: &EpochRecord, test: Option<f64>| {
            format!(
                "{phase},{},{},{},{},{}\n",
                r.epoch,
                r.sse,
                r.rmse_train,
                test.map(|t| t.to_string()).unwrap_or_default(),
                r.seconds
            )
        };
        for r in &self.pretrain_log.epochs {
            s.push_str(&row("pretrain", r, None));
        }
        for r in &self.log.epochs {
            let t = self.test_history.iter().find(|(e, _)| *e == r.epoch).map(|(_, t)| *t);
            s.push_str(&row("train", r, t));
        }
        s
    }
}

pub fn protocol(cfg: &RunConfig) -> BlockProtocol {
    BlockProtocol { window: cfg.window, horizon: cfg.horizon }
}

/// Trains the configured architecture on `prepared`.
///
/// `last_good` holds the initialised model, then the model after each
/// finite epoch, so a numerical failure can still be saved by the caller.
pub fn train(cfg: &RunConfig, prepared: &Prepared, last_good: &mut Option<Checkpoint>, mut progress: impl FnMut(&str)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let features = cfg.features();
    let train_series = prepared.training_series(cfg)?;
    let data = FeatureSeries::new(&train_series, &prepared.norm, features);
    let mut rng = SeededRng::new(cfg.train.seed);
    let mut model = match empty_model(cfg, prepared.norm) {
        Forecaster::Standard(mut m) => {
            m.stack = StackParams::init(features.input_dim(), &cfg.hidden(), cfg.variant, cfg.init_range, &mut rng)?;
            Forecaster::Standard(m)
        }
        Forecaster::S2S(mut m) => {
            m.params = S2SParams::init(&cfg.hidden(), cfg.variant, features, cfg.init_range, &mut rng)?;
            Forecaster::S2S(m)
        }
    };
    *last_good = Some(Checkpoint::new(cfg.clone(), model.clone())?);
    let mut pretrain_log = TrainLog::default();
    let mut log = TrainLog::default();
    let mut test_history = Vec::new();
    let proto = protocol(cfg);

    let mut after_epoch = |model: &Forecaster, r: &EpochRecord, evaluate_now: bool, test_history: &mut Vec<(usize, f64)>| -> Result<()> {
        *last_good = Some(Checkpoint::new(cfg.clone(), model.clone())?);
        let mut msg = format!("epoch {:>4}  train rmse {:.5}", r.epoch, r.rmse_train);
        if evaluate_now {
            let t = evaluate(model, &prepared.test, proto, model.default_mode())?.rmse_norm;
            test_history.push((r.epoch, t));
            msg.push_str(&format!("  test rmse {t:.5}"));
        }
        progress(&msg);
        Ok(())
    };
    let due = |epoch: usize| cfg.eval_every > 0 && (epoch.is_multiple_of(cfg.eval_every) || epoch == cfg.train.epochs);

    match cfg.architecture {
        Architecture::Standard => {
            let Forecaster::Standard(m) = &mut model else { unreachable!() };
            let mut trainer = Trainer::new(&m.stack, cfg.train.clone())?;
            for _ in 0..cfg.train.epochs {
                let Forecaster::Standard(m) = &mut model else { unreachable!() };
                let r = trainer.run_epoch(&mut m.stack, &data, cfg.lag)?;
                after_epoch(&model, &r, due(r.epoch), &mut test_history)?;
                log.epochs.push(r);
            }
        }
        Architecture::S2S => {
            let Forecaster::S2S(m) = &mut model else { unreachable!() };
            let pre = pretrain_epochs(cfg.train.epochs, cfg.pretrain_fraction);
            let mut pre_trainer = Trainer::new(&m.params.encoder, cfg.train.clone())?;
            for _ in 0..pre {
                let Forecaster::S2S(m) = &mut model else { unreachable!() };
                let r = pre_trainer.run_epoch(&mut m.params.encoder, &data, 1)?;
                after_epoch(&model, &r, false, &mut test_history)?;
                pretrain_log.epochs.push(r);
            }
            let joint_epochs = cfg.train.epochs - pre;
            let Forecaster::S2S(m) = &mut model else { unreachable!() };
            let mut joint = JointTrainer::new(&m.params, cfg.train.clone(), cfg.window, cfg.horizon)?;
            for _ in 0..joint_epochs {
                let Forecaster::S2S(m) = &mut model else { unreachable!() };
                let r = joint.run_epoch(&mut m.params, &data)?;
                let last = r.epoch == joint_epochs;
                let evaluate_now = cfg.eval_every > 0 && (r.epoch % cfg.eval_every == 0 || last);
                after_epoch(&model, &r, evaluate_now, &mut test_history)?;
                log.epochs.push(r);
            }
        }
    }

    let mode = model.default_mode();
    let final_train = evaluate(&model, &prepared.train, proto, mode)?;
    let final_test = evaluate(&model, &prepared.test, proto, mode)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(cfg.clone(), model)?,
        pretrain_log,
        log,
        test_history,
        final_train,
        final_test,
    })
}

/// Forecast starting at `from` (default: the first step of the test
/// partition, or the first step with a full context if the series does not
/// reach it), with `window` steps of context before it.
pub fn forecast_at(
    ck: &Checkpoint,
    series: &LoadSeries,
    from: Option<NaiveDateTime>,
    window: usize,
    horizon: usize,
    mode: ForecastMode,
) -> Result<(ForecastResult, Vec<Option<f64>>)> {
    if series.resolution() != ck.config.resolution {
        return Err(Error::data(format!(
            "checkpoint was trained on {} data but the series has {} resolution",
            ck.config.resolution.as_str(),
            series.resolution().as_str()
        )));
    }
    if window == 0 || horizon == 0 {
        return Err(Error::invalid("window and horizon must be at least 1"));
    }
    let idx = match from {
        Some(ts) => {
            let step = series.resolution().step().num_seconds();
            let secs = (ts - series.start()).num_seconds();
            if secs % step != 0 {
                return Err(Error::invalid(format!("{ts} is not on the series grid")));
            }
            if secs < 0 || secs / step < window as i64 {
                return Err(Error::invalid(format!(
                    "a {window}-step window before {ts} extends past the series start {}",
                    series.start()
                )));
            }
            (secs / step) as usize
        }
        None => {
            let b = SplitSpec { train_months: ck.config.train_months }.boundary_index(series).unwrap_or(window);
            if b >= window && b < series.len() { b } else { window }
        }
    };
    if idx > series.len() {
        return Err(Error::invalid("forecast start lies beyond the end of the series"));
    }
    let context = series.slice(idx - window..idx)?;
    let known_end = (idx + horizon).min(series.len());
    let mut actual: Vec<Option<f64>> = series.values()[idx..known_end].to_vec();
    actual.resize(horizon, None);
    let full = if mode == ForecastMode::OneStep {
        if known_end < idx + horizon || actual.iter().any(Option::is_none) {
            return Err(Error::data("one-step forecasting needs measured loads for the whole horizon"));
        }
        Some(series.slice(idx - window..idx + horizon)?)
    } else {
        None
    };
    let f = ck.model.forecast(mode, &context, full.as_ref(), horizon)?;
    Ok((f, actual))
}

/// `timestamp,actual,predicted` with blank actuals where unknown.
pub fn forecast_csv(f: &ForecastResult, actual: &[Option<f64>]) -> String {
    let mut s = String::from("timestamp,actual,predicted\n");
    for (i, (ts, p)) in f.timestamps.iter().zip(&f.predictions).enumerate() {
        let a = actual.get(i).copied().flatten().map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{a},{p}\n", crate::data::format_timestamp(*ts)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{sine_daily_series, SyntheticSpec};

    fn small_cfg(arch: Architecture) -> RunConfig {
        let mut c = RunConfig { architecture: arch, units: 4, window: 12, horizon: 6, train_months: 1, ..Default::default() };
        c.train.epochs = 3;
        c.train.unroll_steps = 12;
        c
    }

    fn series() -> LoadSeries {
        sine_daily_series(&SyntheticSpec { len: 24 * 45, ..Default::default() }).unwrap()
    }

    #[test]
    fn norm_ignores_the_test_partition() {
        let cfg = small_cfg(Architecture::Standard);
        let s = series();
        let p = prepare(&cfg, &s).unwrap();
        let k = s.len() - p.test.len();
        let mut values = s.values().to_vec();
        for v in &mut values[k..] {
            *v = Some(1e6);
        }
        let poisoned = LoadSeries::new(s.resolution(), s.start(), values).unwrap();
        let q = prepare(&cfg, &poisoned).unwrap();
        assert_eq!(p.norm, q.norm);
        assert_eq!(p.norm, fit_norm(&p.train).unwrap());
        assert_eq!(p.boundary, crate::data::parse_timestamp("2007-02-01T00:00").unwrap());
    }

    #[test]
    fn training_is_deterministic_for_both_architectures() {
        for arch in [Architecture::Standard, Architecture::S2S] {
            let cfg = small_cfg(arch);
            let p = prepare(&cfg, &series()).unwrap();
            let mut slot = None;
            let a = train(&cfg, &p, &mut slot, |_| {}).unwrap();
            let b = train(&cfg, &p, &mut None, |_| {}).unwrap();
            assert_eq!(a.checkpoint.to_text(), b.checkpoint.to_text());
            assert_eq!(slot.unwrap(), a.checkpoint);
            assert_eq!(a.log.epochs.len() + a.pretrain_log.epochs.len(), 3);
            assert!(a.best_test().is_some());
            assert!(a.log_csv().starts_with("# architecture = "));
        }
    }

    #[test]
    fn subsample_keeps_the_tail() {
        let cfg = RunConfig { train_subsample: 0.5, ..small_cfg(Architecture::Standard) };
        let p = prepare(&cfg, &series()).unwrap();
        let t = p.training_series(&cfg).unwrap();
        assert_eq!(t.len(), p.train.len().div_ceil(2));
        assert_eq!(t.end(), p.train.end());
    }

    #[test]
    fn forecast_window_must_fit_after_series_start() {
        let cfg = small_cfg(Architecture::S2S);
        let s = series();
        let ck = Checkpoint::new(cfg.clone(), empty_model(&cfg, NormStats::identity())).unwrap();
        assert!(forecast_at(&ck, &s, Some(s.timestamp(5)), 12, 6, ForecastMode::S2S).is_err());
        let (f, actual) = forecast_at(&ck, &s, Some(s.timestamp(12)), 12, 6, ForecastMode::S2S).unwrap();
        assert_eq!((f.horizon(), actual.len()), (6, 6));
        let (f, actual) = forecast_at(&ck, &s, Some(s.timestamp(s.len() - 2)), 12, 6, ForecastMode::S2S).unwrap();
        assert_eq!(f.horizon(), 6);
        assert_eq!(actual.iter().filter(|a| a.is_none()).count(), 4);
        let csv = forecast_csv(&f, &actual);
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().last().unwrap().contains(",,"));
    }
}
