//! Property checks shared by the property suite and the acceptance harness.
//! Each check runs a deterministic proptest runner and returns the first
//! counterexample as an error string.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use gridcast::checkpoint::Checkpoint;
use gridcast::config::{Architecture, RunConfig};
use gridcast::data::{calendar_features, parse_timestamp, LoadSeries, NormStats, Resolution};
use gridcast::eval::Forecaster;
use gridcast::features::{audit_decoder_inputs, FeatureSpec};
use gridcast::forecast::StandardModel;
use gridcast::lstm::{CellVariant, StackParams};
use gridcast::pipeline::{prepare, train};
use gridcast::s2s::{s2s_forecast, S2SModel, S2SParams};
use gridcast::synthetic::{sine_daily_series, SyntheticSpec};
use gridcast::train::{adam_step, clip_global_norm, AdamState, TrainConfig};
use gridcast::{GradSet, ParamSet, SeededRng};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha))
}

fn grads_from(values: &[f64]) -> GradSet {
    let mut s = StackParams::zeros(4, &[3], CellVariant::Standard);
    let mut it = values.iter().cycle();
    for t in s.tensors_mut() {
        for v in t.as_mut_slice() {
            *v = *it.next().unwrap();
        }
    }
    GradSet::from_params(&s)
}

pub fn clip_properties(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(-1.0f64..1.0, 1..64), -3.0f64..3.0, 0.1f64..10.0);
    runner(cases)
        .run(&strategy, |(raw, log_scale, threshold)| {
            let scaled: Vec<f64> = raw.iter().map(|v| v * 10f64.powf(log_scale)).collect();
            let g = grads_from(&scaled);
            let before = g.global_norm();
            let c = clip_global_norm(&g, threshold);
            let after = c.global_norm();
            prop_assert!(after <= threshold * (1.0 + 1e-12), "post-clip norm {after} > {threshold}");
            if before <= threshold {
                prop_assert_eq!(&c, &g);
            } else {
                let k = threshold / before;
                for ((_, a), (_, b)) in g.iter().zip(c.iter()) {
                    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                        prop_assert!((y - k * x).abs() <= 1e-12 * x.abs().max(1e-300), "direction changed");
                        prop_assert!(x * y >= 0.0);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn adam_first_step_properties(cases: u32) -> Result<(), String> {
    let strategy = (prop::collection::vec(-2.0f64..2.0, 8), prop::collection::vec(1e-3f64..1e3, 8), prop::collection::vec(any::<bool>(), 8), 1e-4f64..1e-2);
    runner(cases)
        .run(&strategy, |(p0, mag, sign, lr)| {
            let cfg = TrainConfig { learning_rate: lr, ..TrainConfig::default() };
            let mut params = StackParams::zeros(1, &[1], CellVariant::Standard);
            let mut k = 0;
            for t in params.tensors_mut() {
                for v in t.as_mut_slice() {
                    *v = p0[k % 8];
                    k += 1;
                }
            }
            let before = params.clone();
            let signed: Vec<f64> = mag.iter().zip(&sign).map(|(m, s)| if *s { *m } else { -*m }).collect();
            let mut g = GradSet::zeros_like(&params);
            let mut k = 0;
            for t in g.tensors_mut() {
                for v in t.as_mut_slice() {
                    *v = signed[k % 8];
                    k += 1;
                }
            }
            let mut st = AdamState::new(&params);
            adam_step(&mut params, &mut st, &g, &cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for (((_, a), (_, b)), (_, gt)) in before.named_tensors().into_iter().zip(params.named_tensors()).zip(g.iter()) {
                for ((x, y), gv) in a.as_slice().iter().zip(b.as_slice()).zip(gt.as_slice()) {
                    let step = x - y;
                    prop_assert!((step.abs() - lr).abs() <= 1e-4 * lr, "step {step} vs lr {lr}");
                    prop_assert!(step * gv > 0.0, "step must oppose the gradient");
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn hourly_window(values: &[f64]) -> LoadSeries {
    LoadSeries::new(Resolution::Hour, parse_timestamp("2008-03-10T07:00").unwrap(), values.iter().map(|v| Some(*v)).collect()).unwrap()
}

fn random_model(arch: Architecture, layers: usize, units: usize, seed: u64) -> (RunConfig, Forecaster) {
    let cfg = RunConfig { architecture: arch, layers, units, ..RunConfig::default() };
    let mut rng = SeededRng::new(seed);
    let norm = NormStats { mean: 1.0 + rng.next_f64(), std: 0.5 + rng.next_f64() };
    let features = FeatureSpec::default();
    let model = match arch {
        Architecture::Standard => Forecaster::Standard(StandardModel {
            stack: StackParams::init(features.input_dim(), &cfg.hidden(), cfg.variant, 0.3, &mut rng).unwrap(),
            norm,
            lag: 1,
            features,
        }),
        Architecture::S2S => Forecaster::S2S(S2SModel { params: S2SParams::init(&cfg.hidden(), cfg.variant, features, 0.3, &mut rng).unwrap(), norm, features }),
    };
    (cfg, model)
}

pub fn checkpoint_round_trip_properties(cases: u32) -> Result<(), String> {
    let strategy = (any::<bool>(), 1usize..4, 1usize..7, any::<u64>(), prop::collection::vec(0.1f64..4.0, 3..30), 1usize..40);
    runner(cases)
        .run(&strategy, |(s2s, layers, units, seed, loads, horizon)| {
            let arch = if s2s { Architecture::S2S } else { Architecture::Standard };
            let (cfg, model) = random_model(arch, layers, units, seed);
            let ck = Checkpoint::new(cfg, model).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = Checkpoint::parse(&ck.to_text(), "mem").map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &ck);
            let w = hourly_window(&loads);
            let mode = ck.model.default_mode();
            let a = ck.model.forecast(mode, &w, None, horizon).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let b = back.model.forecast(mode, &w, None, horizon).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.predictions), bits(&b.predictions));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Same seed gives byte-identical checkpoints and logs; another seed differs.
pub fn determinism_check(seed: u64) -> Result<(), String> {
    let series = sine_daily_series(&SyntheticSpec { len: 24 * 40, seed, ..Default::default() }).map_err(|e| e.to_string())?;
    for arch in [Architecture::Standard, Architecture::S2S] {
        let mut cfg = RunConfig { architecture: arch, units: 4, window: 12, horizon: 12, train_months: 1, ..RunConfig::default() };
        cfg.train.epochs = 2;
        cfg.train.unroll_steps = 12;
        cfg.train.seed = seed;
        let p = prepare(&cfg, &series).map_err(|e| e.to_string())?;
        let run = |cfg: &RunConfig| train(cfg, &p, &mut None, |_| {}).map_err(|e| e.to_string());
        let (a, b) = (run(&cfg)?, run(&cfg)?);
        if a.checkpoint.to_text() != b.checkpoint.to_text() {
            return Err(format!("{arch}: same seed produced different checkpoints"));
        }
        let strip = |s: String| s.lines().map(|l| l.rsplit_once(',').map(|x| x.0.to_string()).unwrap_or_default()).collect::<Vec<_>>();
        if strip(a.log_csv()) != strip(b.log_csv()) {
            return Err(format!("{arch}: same seed produced different logs"));
        }
        cfg.train.seed = seed + 1;
        if run(&cfg)?.checkpoint.to_text() == a.checkpoint.to_text() {
            return Err(format!("{arch}: different seeds produced identical checkpoints"));
        }
    }
    Ok(())
}

pub fn decoder_audit_properties(cases: u32) -> Result<(), String> {
    let strategy = (any::<u64>(), prop::collection::vec(100.0f64..1e6, 1..48), 1usize..72);
    runner(cases)
        .run(&strategy, |(seed, sentinels, horizon)| {
            let (_, model) = random_model(Architecture::S2S, 2, 3, seed);
            let Forecaster::S2S(m) = model else { unreachable!() };
            let w = hourly_window(&sentinels);
            let (f, rows) = audit_decoder_inputs(|| s2s_forecast(&m, &w, horizon));
            let f = f.map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(rows.len(), horizon);
            let forbidden: Vec<f64> = sentinels.iter().flat_map(|v| [*v, m.norm.normalize(*v)]).collect();
            for (row, ts) in rows.iter().zip(&f.timestamps) {
                prop_assert_eq!(row.len(), 3);
                for v in row {
                    prop_assert!((0.0..=1.0).contains(v), "decoder input {v} outside the calendar range");
                    prop_assert!(!forbidden.contains(v), "load value {v} reached the decoder");
                }
                prop_assert_eq!(row, &calendar_features(*ts).scaled(false).unwrap());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}
