//! Versioned text checkpoints.
//!
//! ```text
//! GRIDCAST-CKPT 1
//! [config]
//! architecture = s2s
//! ...
//! [norm]
//! mean = 1.0891634...e0
//! std = 1.0572...e0
//! [tensors]
//! encoder.layer0.w_ix 4 10
//! <row-major values, one matrix row per line>
//! ...
//! ```
//!
//! Values are written with 17 significant digits, so every `f64` reads back
//! to the identical bit pattern.

use std::path::Path;

use crate::config::{Architecture, RunConfig};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::eval::Forecaster;
use crate::forecast::StandardModel;
use crate::lstm::StackParams;
use crate::matrix::Matrix;
use crate::params::ParamSet;
use crate::s2s::{S2SModel, S2SParams};

pub const HEADER: &str = "GRIDCAST-CKPT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Forecaster,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Zero-valued model with the shapes `cfg` describes.
pub fn empty_model(cfg: &RunConfig, norm: NormStats) -> Forecaster {
    let features = cfg.features();
    match cfg.architecture {
        Architecture::Standard => Forecaster::Standard(StandardModel {
            stack: StackParams::zeros(features.input_dim(), &cfg.hidden(), cfg.variant),
            norm,
            lag: cfg.lag,
            features,
        }),
        Architecture::S2S => Forecaster::S2S(S2SModel {
            params: S2SParams::zeros(&cfg.hidden(), cfg.variant, features),
            norm,
            features,
        }),
    }
}

fn params_of(model: &Forecaster) -> Vec<(String, &Matrix)> {
    match model {
        Forecaster::Standard(m) => m.stack.named_tensors(),
        Forecaster::S2S(m) => m.params.named_tensors(),
    }
}

fn params_of_mut(model: &mut Forecaster) -> Vec<&mut Matrix> {
    match model {
        Forecaster::Standard(m) => m.stack.tensors_mut(),
        Forecaster::S2S(m) => m.params.tensors_mut(),
    }
}

impl Checkpoint {
    pub fn new(config: RunConfig, model: Forecaster) -> Result<Checkpoint> {
        let probe = empty_model(&config, *model.norm());
        let want: Vec<_> = params_of(&probe).into_iter().map(|(n, m)| (n, m.shape())).collect();
        let have: Vec<_> = params_of(&model).into_iter().map(|(n, m)| (n, m.shape())).collect();
        if want != have {
            return Err(Error::invalid("model shapes do not match the configuration"));
        }
        Ok(Checkpoint { config, model })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push_str("\n[config]\n");
        s.push_str(&self.config.to_text());
        let norm = self.model.norm();
        s.push_str(&format!("[norm]\nmean = {}\nstd = {}\n[tensors]\n", fmt_f64(norm.mean), fmt_f64(norm.std)));
        for (name, m) in params_of(&self.model) {
            s.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
            for r in 0..m.rows() {
                let row: Vec<String> = (0..m.cols()).map(|c| fmt_f64(m.get(r, c))).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Checkpoint> {
        let perr = |line: usize, msg: String| Error::Parse { path: source.into(), line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, other)) => return Err(perr(n, format!("expected '{HEADER}', got '{other}'"))),
            None => return Err(perr(1, "empty checkpoint".into())),
        }
        let mut section = "";
        let mut config_text = String::new();
        let (mut mean, mut std) = (None, None);
        let mut model: Option<Forecaster> = None;
        let mut tensor_idx = 0usize;
        let mut pending: Option<(String, usize, usize, Vec<f64>, usize)> = None;
        for (n, line) in lines.by_ref() {
            if let Some((name, rows, cols, values, _)) = pending.as_mut() {
                for tok in line.split_whitespace() {
                    values.push(tok.parse().map_err(|_| perr(n, format!("bad value '{tok}' in {name}")))?);
                }
                if values.len() >= *rows * *cols {
                    let (name, rows, cols, values, start) = pending.take().expect("pending tensor");
                    if values.len() != rows * cols {
                        return Err(perr(start, format!("{name}: expected {} values, got {}", rows * cols, values.len())));
                    }
                    let m = model.as_mut().expect("model built before tensors");
                    let expected = params_of(m).get(tensor_idx).map(|(k, t)| (k.clone(), t.shape()));
                    if expected != Some((name.clone(), (rows, cols))) {
                        return Err(perr(start, format!("unexpected tensor {name} {rows}x{cols}, wanted {expected:?}")));
                    }
                    params_of_mut(m)[tensor_idx].as_mut_slice().copy_from_slice(&values);
                    tensor_idx += 1;
                }
                continue;
            }
            if line.starts_with('[') {
                section = match line {
                    "[config]" | "[norm]" => line,
                    "[tensors]" => {
                        let cfg = RunConfig::parse(&config_text, &format!("{source} [config]"))?;
                        let norm = NormStats {
                            mean: mean.ok_or_else(|| perr(n, "missing norm mean".into()))?,
                            std: std.ok_or_else(|| perr(n, "missing norm std".into()))?,
                        };
                        model = Some(empty_model(&cfg, norm));
                        config_text = cfg.to_text();
                        "[tensors]"
                    }
                    other => return Err(perr(n, format!("unknown section {other}"))),
                };
                continue;
            }
            match section {
                "[config]" => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
                "[norm]" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| perr(n, format!("bad norm line '{line}'")))?;
                    let v: f64 = v.trim().parse().map_err(|_| perr(n, format!("bad norm value '{}'", v.trim())))?;
                    match k.trim() {
                        "mean" => mean = Some(v),
                        "std" => std = Some(v),
                        other => return Err(perr(n, format!("unknown norm field '{other}'"))),
                    }
                }
                "[tensors]" => {
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    let [name, rows, cols] = parts[..] else {
                        return Err(perr(n, format!("expected 'name rows cols', got '{line}'")));
                    };
                    let dim = |s: &str| s.parse::<usize>().map_err(|_| perr(n, format!("bad dimension '{s}'")));
                    pending = Some((name.to_string(), dim(rows)?, dim(cols)?, Vec::new(), n));
                }
                _ => return Err(perr(n, format!("content outside a section: '{line}'"))),
            }
        }
        if let Some((name, ..)) = pending {
            return Err(perr(text.lines().count(), format!("truncated tensor {name}")));
        }
        let model = model.ok_or_else(|| perr(text.lines().count(), "missing [tensors] section".into()))?;
        if tensor_idx != params_of(&model).len() {
            return Err(perr(text.lines().count(), format!("expected {} tensors, found {tensor_idx}", params_of(&model).len())));
        }
        let config = RunConfig::parse(&config_text, source)?;
        Ok(Checkpoint { config, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn trained_like(arch: Architecture) -> Checkpoint {
        let cfg = RunConfig { architecture: arch, layers: 2, units: 3, lag: 2, ..Default::default() };
        let mut model = empty_model(&cfg, NormStats { mean: 1.0 / 3.0, std: std::f64::consts::PI });
        let mut rng = SeededRng::new(11);
        for m in params_of_mut(&mut model) {
            for v in m.as_mut_slice() {
                *v = rng.normal() * 1e-3 + rng.next_f64() * 1e5;
            }
        }
        Checkpoint::new(cfg, model).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in [Architecture::Standard, Architecture::S2S] {
            let ck = trained_like(arch);
            let back = Checkpoint::parse(&ck.to_text(), "mem").unwrap();
            assert_eq!(back, ck);
            for ((_, a), (_, b)) in params_of(&ck.model).into_iter().zip(params_of(&back.model)) {
                let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
            assert_eq!(back.to_text(), ck.to_text());
        }
    }

    #[test]
    fn extreme_values_survive() {
        let mut ck = trained_like(Architecture::Standard);
        let vals = [f64::MIN_POSITIVE, -0.0, 5e-324, f64::MAX, 0.1 + 0.2];
        params_of_mut(&mut ck.model)[0].as_mut_slice()[..5].copy_from_slice(&vals);
        let back = Checkpoint::parse(&ck.to_text(), "mem").unwrap();
        let got = &params_of(&back.model)[0].1.as_slice()[..5];
        assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let text = trained_like(Architecture::S2S).to_text();
        assert!(Checkpoint::parse(&text.replacen(HEADER, "GRIDCAST-CKPT 2", 1), "m").is_err());
        let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::parse(&truncated, "m").is_err());
        assert!(Checkpoint::parse(&text.replace("units = 3", "units = 4"), "m").is_err());
        assert!(Checkpoint::parse(&text.replace("encoder.layer0.w_ix", "encoder.layer0.w_xx"), "m").is_err());
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let ck = trained_like(Architecture::Standard);
        let cfg = RunConfig { units: 5, ..ck.config.clone() };
        assert!(Checkpoint::new(cfg, ck.model).is_err());
    }
}
