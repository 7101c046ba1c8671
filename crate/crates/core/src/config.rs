//! Run configuration: a line-oriented `key = value` file with `#` comments.
//!
//! Every key is optional and falls back to its default. Unknown keys,
//! duplicate keys and bad values are all collected and reported together.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::Resolution;
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::lstm::{CellVariant, DEFAULT_INIT_RANGE};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Architecture {
    #[default]
    Standard,
    S2S,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Standard => "standard",
            Architecture::S2S => "s2s",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Architecture::Standard),
            "s2s" => Ok(Architecture::S2S),
            other => Err(Error::invalid(format!("unknown architecture '{other}' (expected standard|s2s)"))),
        }
    }
}

/// Accepted keys, in the order they are written back out.
pub const KEYS: &[&str] = &[
    "architecture",
    "variant",
    "layers",
    "units",
    "resolution",
    "window",
    "horizon",
    "lag",
    "data",
    "out",
    "seed",
    "unroll_steps",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "clip_threshold",
    "epochs",
    "dropout",
    "reuse_dropout_mask",
    "loss_report_stride",
    "stride",
    "carry_state",
    "pretrain_fraction",
    "init_range",
    "minute_feature",
    "hour_min_valid",
    "train_months",
    "train_subsample",
    "eval_every",
    "forward_fill",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub architecture: Architecture,
    pub variant: CellVariant,
    pub layers: usize,
    pub units: usize,
    pub resolution: Resolution,
    /// Context length `M` for forecasting, evaluation and S2S training.
    pub window: usize,
    /// Forecast horizon `n`.
    pub horizon: usize,
    /// Steps between the load input and the predicted step (standard only).
    pub lag: usize,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub train: TrainConfig,
    /// Share of the epoch budget spent pre-training the S2S encoder.
    pub pretrain_fraction: f64,
    pub init_range: f64,
    pub minute_feature: bool,
    /// Valid minutes required for an hourly mean.
    pub hour_min_valid: usize,
    pub train_months: u32,
    /// Fraction of the training partition used, taken from its end.
    pub train_subsample: f64,
    /// Evaluate on the test partition every this many epochs (0 = never).
    pub eval_every: usize,
    /// Forward-fill missing samples before training.
    pub forward_fill: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            architecture: Architecture::Standard,
            variant: CellVariant::Standard,
            layers: 1,
            units: 10,
            resolution: Resolution::Hour,
            window: 60,
            horizon: 60,
            lag: 1,
            data: None,
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
            pretrain_fraction: 0.2,
            init_range: DEFAULT_INIT_RANGE,
            minute_feature: false,
            hour_min_valid: 1,
            train_months: 36,
            train_subsample: 1.0,
            eval_every: 1,
            forward_fill: false,
        }
    }
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

impl RunConfig {
    pub fn hidden(&self) -> Vec<usize> {
        vec![self.units; self.layers]
    }

    pub fn features(&self) -> FeatureSpec {
        FeatureSpec { minute_of_hour: self.minute_feature }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "architecture" => self.architecture = value.parse().map_err(|e: Error| e.to_string())?,
            "variant" => self.variant = value.parse().map_err(|e: Error| e.to_string())?,
            "layers" => self.layers = parse_value(value)?,
            "units" => self.units = parse_value(value)?,
            "resolution" => self.resolution = value.parse().map_err(|e: Error| e.to_string())?,
            "window" => self.window = parse_value(value)?,
            "horizon" => self.horizon = parse_value(value)?,
            "lag" => self.lag = parse_value(value)?,
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => t.seed = parse_value(value)?,
            "unroll_steps" => t.unroll_steps = parse_value(value)?,
            "learning_rate" => t.learning_rate = parse_value(value)?,
            "beta1" => t.beta1 = parse_value(value)?,
            "beta2" => t.beta2 = parse_value(value)?,
            "epsilon" => t.epsilon = parse_value(value)?,
            "clip_threshold" => t.clip_threshold = parse_value(value)?,
            "epochs" => t.epochs = parse_value(value)?,
            "dropout" => t.dropout = parse_value(value)?,
            "reuse_dropout_mask" => t.reuse_dropout_mask = parse_bool(value)?,
            "loss_report_stride" => t.loss_report_stride = parse_value(value)?,
            "stride" => t.stride = if value == "auto" { None } else { Some(parse_value(value)?) },
            "carry_state" => t.carry_state = parse_bool(value)?,
            "pretrain_fraction" => self.pretrain_fraction = parse_value(value)?,
            "init_range" => self.init_range = parse_value(value)?,
            "minute_feature" => self.minute_feature = parse_bool(value)?,
            "hour_min_valid" => self.hour_min_valid = parse_value(value)?,
            "train_months" => self.train_months = parse_value(value)?,
            "train_subsample" => self.train_subsample = parse_value(value)?,
            "eval_every" => self.eval_every = parse_value(value)?,
            "forward_fill" => self.forward_fill = parse_bool(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Textual value of a config key, `None` for unknown keys.
    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.contains(&key).then(|| self.value_of(key))
    }

    fn value_of(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "architecture" => self.architecture.to_string(),
            "variant" => self.variant.to_string(),
            "layers" => self.layers.to_string(),
            "units" => self.units.to_string(),
            "resolution" => self.resolution.as_str().to_string(),
            "window" => self.window.to_string(),
            "horizon" => self.horizon.to_string(),
            "lag" => self.lag.to_string(),
            "data" => self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "out" => self.out.display().to_string(),
            "seed" => t.seed.to_string(),
            "unroll_steps" => t.unroll_steps.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "epsilon" => t.epsilon.to_string(),
            "clip_threshold" => t.clip_threshold.to_string(),
            "epochs" => t.epochs.to_string(),
            "dropout" => t.dropout.to_string(),
            "reuse_dropout_mask" => t.reuse_dropout_mask.to_string(),
            "loss_report_stride" => t.loss_report_stride.to_string(),
            "stride" => t.stride.map(|s| s.to_string()).unwrap_or_else(|| "auto".into()),
            "carry_state" => t.carry_state.to_string(),
            "pretrain_fraction" => self.pretrain_fraction.to_string(),
            "init_range" => self.init_range.to_string(),
            "minute_feature" => self.minute_feature.to_string(),
            "hour_min_valid" => self.hour_min_valid.to_string(),
            "train_months" => self.train_months.to_string(),
            "train_subsample" => self.train_subsample.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "forward_fill" => self.forward_fill.to_string(),
            _ => unreachable!("key list and getter disagree on '{key}'"),
        }
    }

    /// Parses a config file body, then validates the result as a whole.
    pub fn parse(text: &str, source: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{source}:{}", i + 1);
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("{at}: expected 'key = value', got '{line}'"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                problems.push(format!("{at}: duplicate key '{key}'"));
                continue;
            }
            seen.push(key);
            if let Err(e) = cfg.set(key, value) {
                problems.push(format!("{at}: {key}: {e}"));
            }
        }
        if let Err(Error::Config(more)) = cfg.validate() {
            problems.extend(more);
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(Error::Config(p)) = self.train.validate() {
            problems.extend(p);
        }
        let mut need = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        need(self.layers >= 1, format!("layers must be at least 1, got {}", self.layers));
        need(self.units >= 1, format!("units must be at least 1, got {}", self.units));
        need(self.window >= 1, format!("window must be at least 1, got {}", self.window));
        need(self.horizon >= 1, format!("horizon must be at least 1, got {}", self.horizon));
        need(self.lag >= 1, format!("lag must be at least 1, got {}", self.lag));
        need(
            self.lag <= self.window,
            format!("lag ({}) cannot exceed the window ({})", self.lag, self.window),
        );
        need(
            (0.0..=1.0).contains(&self.pretrain_fraction),
            format!("pretrain_fraction must be in [0, 1], got {}", self.pretrain_fraction),
        );
        need(
            self.init_range > 0.0 && self.init_range.is_finite(),
            format!("init_range must be positive, got {}", self.init_range),
        );
        need(
            (1..=60).contains(&self.hour_min_valid),
            format!("hour_min_valid must be in 1..=60, got {}", self.hour_min_valid),
        );
        need(self.train_months >= 1, "train_months must be at least 1".into());
        need(
            self.train_subsample > 0.0 && self.train_subsample <= 1.0,
            format!("train_subsample must be in (0, 1], got {}", self.train_subsample),
        );
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// The fully resolved configuration in file syntax; parses back to `self`.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value_of(k))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text(), "t").unwrap(), cfg);
        assert_eq!(RunConfig::parse("", "t").unwrap(), cfg);
    }

    #[test]
    fn table_two_config_parses() {
        let text = "# hourly s2s\narchitecture = s2s\nlayers = 2\nunits = 10   # per layer\nhorizon = 60\nwindow = 60\nseed = 42\n";
        let cfg = RunConfig::parse(text, "t").unwrap();
        assert_eq!(cfg.architecture, Architecture::S2S);
        assert_eq!(cfg.hidden(), vec![10, 10]);
        assert_eq!(cfg.train.seed, 42);
        let mut tweaked = cfg.clone();
        tweaked.train.stride = Some(3);
        tweaked.data = Some("x/y.txt".into());
        assert_eq!(RunConfig::parse(&tweaked.to_text(), "t").unwrap(), tweaked);
    }

    #[test]
    fn all_problems_are_reported() {
        let text = "layers = 0\nfoo = 1\nunits = ten\nlearning_rate = -1\nlayers = 2\nnot a pair\n";
        let Err(Error::Config(p)) = RunConfig::parse(text, "cfg") else { panic!("expected config error") };
        let joined = p.join("\n");
        for needle in ["cfg:2: foo: unknown key", "cfg:3: units", "cfg:5: duplicate key 'layers'", "cfg:6: expected", "layers must be", "learning_rate"] {
            assert!(joined.contains(needle), "missing '{needle}' in:\n{joined}");
        }
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        for k in KEYS {
            let mut c = cfg.clone();
            assert!(c.set(k, &cfg.get(k).unwrap()).is_ok(), "{k}");
            assert_eq!(c, cfg, "{k}");
        }
    }
}
