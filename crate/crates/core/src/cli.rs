//! `gridcast` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{parse_timestamp, read_series_file, resample_hourly, LoadSeries, Resolution};
use crate::error::{Error, Result};
use crate::eval::{evaluate, BlockProtocol};
use crate::forecast::ForecastMode;
use crate::gradcheck::{check_s2s, check_stack, GradCheckOptions};
use crate::lstm::CellVariant;
use crate::pipeline::{forecast_at, forecast_csv, load_series, prepare, protocol, train};
use crate::svg::{line_plot, Line};
use crate::synthetic::{sine_daily_series, SyntheticSpec};

#[derive(Parser, Debug)]
#[command(name = "gridcast", version, about = "LSTM and encoder-decoder building load forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration file (key = value).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input series: raw benchmark file or canonical CSV.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory (or file, for resample and synth).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Average the minute series into clock hours and write a canonical CSV.
    Resample {
        /// Minimum valid minutes per hour.
        #[arg(long, default_value_t = 1)]
        min_valid: usize,
    },
    /// Train the configured model; writes checkpoint, log and metrics.
    Train,
    /// Forecast from a checkpoint.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// First forecast timestamp (YYYY-MM-DDTHH:MM[:SS]).
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Also write an SVG plot.
        #[arg(long)]
        svg: bool,
    },
    /// Block evaluation of a checkpoint on a partition.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
        partition: PartitionArg,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        units: usize,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::Standard)]
        variant: VariantArg,
        /// Check the encoder-decoder instead of a single stack.
        #[arg(long)]
        s2s: bool,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Write a seeded synthetic hourly series as canonical CSV.
    Synth {
        #[arg(long, default_value_t = 24 * 7 * 12)]
        len: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    OneStep,
    Recursive,
    Delayed,
    S2s,
    Persistence,
}

impl From<ModeArg> for ForecastMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OneStep => ForecastMode::OneStep,
            ModeArg::Recursive => ForecastMode::Recursive,
            ModeArg::Delayed => ForecastMode::Delayed,
            ModeArg::S2s => ForecastMode::S2S,
            ModeArg::Persistence => ForecastMode::Persistence,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Standard,
    PaperVerbatim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Train,
    Test,
    All,
}

struct Ctx {
    common: Common,
}

impl Ctx {
    fn say(&self, msg: &str) {
        if !self.common.quiet {
            eprintln!("{msg}");
        }
    }

    fn out_dir(&self, fallback: &Path) -> Result<PathBuf> {
        let dir = self.common.out.clone().unwrap_or_else(|| fallback.to_path_buf());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn data_path(&self, cfg: Option<&RunConfig>) -> Result<PathBuf> {
        self.common
            .data
            .clone()
            .or_else(|| cfg.and_then(|c| c.data.clone()))
            .ok_or_else(|| Error::Config(vec!["no input series: pass --data or set 'data' in the config".into()]))
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.common.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.common.seed {
            cfg.train.seed = s;
        }
        if let Some(d) = &self.common.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.common.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, &format!("{}\n", serde_json::to_string_pretty(value).expect("json serialises")))
}

fn partition(cfg: &RunConfig, series: &LoadSeries, which: PartitionArg) -> Result<LoadSeries> {
    if which == PartitionArg::All {
        return Ok(series.clone());
    }
    let p = prepare(cfg, series)?;
    Ok(if which == PartitionArg::Train { p.train } else { p.test })
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let ctx = Ctx { common: cli.common };
    match cli.command {
        Command::Resample { min_valid } => cmd_resample(&ctx, min_valid),
        Command::Train => cmd_train(&ctx),
        Command::Forecast { checkpoint, from, window, horizon, mode, svg } => {
            cmd_forecast(&ctx, &checkpoint, from.as_deref(), window, horizon, mode, svg)
        }
        Command::Eval { checkpoint, partition, window, horizon, mode } => cmd_eval(&ctx, &checkpoint, partition, window, horizon, mode),
        Command::Gradcheck { layers, units, steps, variant, s2s, corrupt_backward } => {
            let opts = GradCheckOptions {
                layers,
                units,
                steps,
                variant: match variant {
                    VariantArg::Standard => CellVariant::Standard,
                    VariantArg::PaperVerbatim => CellVariant::PaperVerbatim,
                },
                seed: ctx.common.seed.unwrap_or(GradCheckOptions::default().seed),
                corrupt_backward,
                ..Default::default()
            };
            let report = if s2s { check_s2s(&opts)? } else { check_stack(&opts)? };
            println!("{report}");
            Ok(if report.passed() { 0 } else { 3 })
        }
        Command::Synth { len, noise } => {
            let spec = SyntheticSpec { len, noise_std: noise, seed: ctx.common.seed.unwrap_or(0), ..Default::default() };
            let s = sine_daily_series(&spec)?;
            let out = ctx.common.out.clone().unwrap_or_else(|| PathBuf::from("synthetic_hourly.csv"));
            s.write_canonical_file(&out)?;
            ctx.say(&format!("wrote {} hourly samples to {}", s.len(), out.display()));
            Ok(0)
        }
    }
}

fn cmd_resample(ctx: &Ctx, min_valid: usize) -> Result<i32> {
    let input = ctx.data_path(None)?;
    let (series, report) = read_series_file(&input)?;
    let hourly = match series.resolution() {
        Resolution::Minute => resample_hourly(&series, min_valid)?,
        Resolution::Hour => series.clone(),
    };
    let out = ctx.common.out.clone().unwrap_or_else(|| PathBuf::from("hourly.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    hourly.write_canonical_file(&out)?;
    let summary = json!({
        "rows_read": report.as_ref().map(|r| r.records).unwrap_or(series.len()),
        "lines": report.as_ref().map(|r| r.total),
        "missing": report.as_ref().map(|r| r.missing).unwrap_or(series.len() - series.valid_count()),
        "malformed": report.as_ref().map(|r| r.malformed).unwrap_or(0),
        "minutes_on_grid": series.len(),
        "hours_emitted": hourly.len(),
        "hours_valid": hourly.valid_count(),
        "start": crate::data::format_timestamp(hourly.start()),
        "end": crate::data::format_timestamp(hourly.end()),
    });
    println!("{}", serde_json::to_string(&summary).expect("json"));
    if let Some(r) = &report {
        for (line, why) in &r.malformed_lines {
            ctx.say(&format!("skipped line {line}: {why}"));
        }
    }
    Ok(0)
}

fn cmd_train(ctx: &Ctx) -> Result<i32> {
    let cfg = ctx.run_config()?;
    let data = ctx.data_path(Some(&cfg))?;
    let out = ctx.out_dir(&cfg.out)?;
    let (series, _) = load_series(&cfg, &data)?;
    let prepared = prepare(&cfg, &series)?;
    ctx.say(&format!(
        "train {} .. {} ({} steps), test {} .. {} ({} steps)",
        prepared.train.start(),
        prepared.train.end(),
        prepared.train.len(),
        prepared.test.start(),
        prepared.test.end(),
        prepared.test.len()
    ));
    let mut last_good = None;
    let outcome = match train(&cfg, &prepared, &mut last_good, |m| ctx.say(m)) {
        Ok(o) => o,
        Err(e) => {
            if let (Error::Numerical(_), Some(ck)) = (&e, &last_good) {
                let p = out.join("checkpoint.last_good.ckpt");
                ck.save(&p)?;
                eprintln!("saved last good checkpoint to {}", p.display());
            }
            return Err(e);
        }
    };
    outcome.checkpoint.save(out.join("checkpoint.ckpt"))?;
    write(&out.join("train_log.csv"), &outcome.log_csv())?;
    let best = outcome.best_test();
    let metrics = json!({
        "architecture": cfg.architecture.as_str(),
        "rmse_train_norm": outcome.final_train.rmse_norm,
        "rmse_train_kw": outcome.final_train.rmse_kw,
        "rmse_norm": outcome.final_test.rmse_norm,
        "rmse_kw": outcome.final_test.rmse_kw,
        "rmse_persistence": outcome.final_test.rmse_persistence,
        "rmse_persistence_norm": outcome.final_test.rmse_persistence_norm,
        "best_test_rmse_norm": best.map(|b| b.1),
        "best_test_epoch": best.map(|b| b.0),
        "last_epoch_rmse_train": outcome.log.last_rmse(),
        "n_blocks": outcome.final_test.n_blocks,
        "wall_seconds": outcome.log.epochs.last().map(|r| r.seconds).unwrap_or(0.0),
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string(&metrics).expect("json"));
    Ok(0)
}

fn cmd_forecast(
    ctx: &Ctx,
    checkpoint: &Path,
    from: Option<&str>,
    window: Option<usize>,
    horizon: Option<usize>,
    mode: Option<ModeArg>,
    svg: bool,
) -> Result<i32> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = ctx.data_path(Some(&ck.config))?;
    let (series, _) = load_series(&ck.config, &data)?;
    let from = from.map(parse_timestamp).transpose()?;
    let mode = mode.map(ForecastMode::from).unwrap_or_else(|| ck.model.default_mode());
    let window = window.unwrap_or(ck.config.window);
    let horizon = horizon.unwrap_or(ck.config.horizon);
    let (f, actual) = forecast_at(&ck, &series, from, window, horizon, mode)?;
    let out = ctx.out_dir(&ck.config.out)?;
    write(&out.join("forecast.csv"), &forecast_csv(&f, &actual))?;
    if svg {
        let start = f.timestamps.first().copied().expect("horizon >= 1");
        let context_actual: Vec<Option<f64>> = series.values()[series.index_of(start).unwrap_or(series.len()).saturating_sub(window)..]
            .iter()
            .take(window)
            .copied()
            .chain(actual.iter().copied())
            .collect();
        let predicted: Vec<Option<f64>> = std::iter::repeat_n(None, window).chain(f.predictions.iter().map(|p| Some(*p))).collect();
        let plot = line_plot(
            &format!("{} forecast from {start}", mode),
            &format!("step ({})", series.resolution().as_str()),
            "active power (kW)",
            &[Line { label: "actual", values: &context_actual }, Line { label: "predicted", values: &predicted }],
        );
        write(&out.join("forecast.svg"), &plot)?;
    }
    ctx.say(&format!("wrote {} predictions to {}", f.horizon(), out.join("forecast.csv").display()));
    Ok(0)
}

fn cmd_eval(
    ctx: &Ctx,
    checkpoint: &Path,
    which: PartitionArg,
    window: Option<usize>,
    horizon: Option<usize>,
    mode: Option<ModeArg>,
) -> Result<i32> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = ctx.data_path(Some(&ck.config))?;
    let (series, _) = load_series(&ck.config, &data)?;
    let part = partition(&ck.config, &series, which)?;
    let mut proto: BlockProtocol = protocol(&ck.config);
    proto.window = window.unwrap_or(proto.window);
    proto.horizon = horizon.unwrap_or(proto.horizon);
    let mode = mode.map(ForecastMode::from).unwrap_or_else(|| ck.model.default_mode());
    let report = evaluate(&ck.model, &part, proto, mode)?;
    let metrics = report.metrics_json();
    if let Some(o) = &ctx.common.out {
        fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        write_json(&o.join("eval_metrics.json"), &metrics)?;
    }
    println!("{}", serde_json::to_string(&metrics).expect("json"));
    Ok(0)
}
