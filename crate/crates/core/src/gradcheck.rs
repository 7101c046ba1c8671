//! Analytic-vs-numerical gradient comparison for the stacked LSTM and the
//! encoder–decoder handoff.

use std::fmt;

use crate::error::{Error, Result};
use crate::lstm::{CellVariant, DropoutSpec, StackParams};
use crate::matrix::Matrix;
use crate::params::GradSet;
use crate::rng::SeededRng;
use crate::s2s::{block_loss, block_loss_and_grads, Block, S2SParams};
use crate::train::{bptt_window_from, finite_diff_grad, window_loss, Window};
use crate::features::FeatureSpec;

pub const MAX_UNITS: usize = 16;
pub const MAX_STEPS: usize = 10;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub layers: usize,
    pub units: usize,
    pub steps: usize,
    pub variant: CellVariant,
    pub seed: u64,
    pub h: f64,
    pub tolerance: f64,
    pub init_range: f64,
    /// Test hook: flip the sign of one analytic gradient tensor so the
    /// check must fail.
    pub corrupt_backward: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            layers: 2,
            units: 4,
            steps: 5,
            variant: CellVariant::Standard,
            seed: 7,
            h: 1e-5,
            tolerance: DEFAULT_TOLERANCE,
            init_range: 0.5,
            corrupt_backward: false,
        }
    }
}

impl GradCheckOptions {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.layers == 0 {
            problems.push("layers must be at least 1".to_string());
        }
        if self.units == 0 || self.units > MAX_UNITS {
            problems.push(format!("units must be in 1..={MAX_UNITS}, got {}", self.units));
        }
        if self.steps == 0 || self.steps > MAX_STEPS {
            problems.push(format!("steps must be in 1..={MAX_STEPS}, got {}", self.steps));
        }
        if !(self.h > 0.0) {
            problems.push(format!("h must be positive, got {}", self.h));
        }
        if !(self.init_range > 0.0) {
            problems.push(format!("init_range must be positive, got {}", self.init_range));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn get(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.label)?;
        for t in &self.tensors {
            writeln!(f, "  {:<22} {:.3e}  {}", t.name, t.max_rel_error, if t.passed { "ok" } else { "FAIL" })?;
        }
        write!(
            f,
            "{}: max relative error {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        )
    }
}

/// `max |a − n| / max(1, |a|, |n|)` over matching entries.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

pub fn compare(label: impl Into<String>, analytic: &GradSet, numeric: &GradSet, tolerance: f64) -> Result<GradCheckReport> {
    if analytic.names() != numeric.names() {
        return Err(Error::invalid("analytic and numerical gradients list different tensors"));
    }
    let tensors = analytic
        .iter()
        .zip(numeric.tensors())
        .map(|((name, a), n)| {
            let e = max_relative_error(a, n);
            TensorCheck { name: name.to_string(), max_rel_error: e, passed: e < tolerance }
        })
        .collect();
    Ok(GradCheckReport { label: label.into(), tensors, tolerance })
}

fn corrupt(g: &mut GradSet, name: &str) {
    if let Some(m) = g.get_mut(name) {
        m.scale_in_place(-1.0);
    }
}

fn random_row(cols: usize, rng: &mut SeededRng, calendar: bool) -> Matrix {
    let v: Vec<f64> = (0..cols).map(|j| if calendar || j > 0 { rng.next_f64() } else { rng.normal() }).collect();
    Matrix::row(&v)
}

/// Checks a stacked LSTM on one random window of `opts.steps` steps.
pub fn check_stack(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    opts.validate()?;
    let spec = FeatureSpec::default();
    let mut rng = SeededRng::new(opts.seed);
    let hidden = vec![opts.units; opts.layers];
    let model = StackParams::init(spec.input_dim(), &hidden, opts.variant, opts.init_range, &mut rng)?;
    let window = Window {
        inputs: (0..opts.steps).map(|_| random_row(spec.input_dim(), &mut rng, false)).collect(),
        targets: (0..opts.steps).map(|_| rng.normal()).collect(),
    };
    let (_, grads, _) = bptt_window_from(&window, &model, model.zero_states(), &DropoutSpec::disabled(), None)?;
    let mut analytic = GradSet::from_params(&grads);
    if opts.corrupt_backward {
        corrupt(&mut analytic, "layer0.b_u");
    }
    let numeric = finite_diff_grad(|p: &StackParams| window_loss(&window, p), &model, opts.h)?;
    compare(
        format!("stack layers={} units={} steps={} variant={}", opts.layers, opts.units, opts.steps, opts.variant),
        &analytic,
        &numeric,
        opts.tolerance,
    )
}

/// Checks the encoder–decoder on one random block: `opts.steps` encoder
/// steps followed by `opts.steps` decoder steps. Encoder gradients only
/// exist through the state handoff.
pub fn check_s2s(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    opts.validate()?;
    let spec = FeatureSpec::default();
    let mut rng = SeededRng::new(opts.seed);
    let hidden = vec![opts.units; opts.layers];
    let model = S2SParams::init(&hidden, opts.variant, spec, opts.init_range, &mut rng)?;
    let block = Block {
        encoder_inputs: (0..opts.steps).map(|_| random_row(spec.input_dim(), &mut rng, false)).collect(),
        decoder_inputs: (0..opts.steps).map(|_| random_row(spec.calendar_dim(), &mut rng, true)).collect(),
        targets: (0..opts.steps).map(|_| rng.normal()).collect(),
    };
    let (_, mut analytic) = block_loss_and_grads(&model, &block, &DropoutSpec::disabled(), None)?;
    if opts.corrupt_backward {
        corrupt(&mut analytic, "encoder.layer0.b_u");
    }
    let numeric = finite_diff_grad(|p: &S2SParams| block_loss(p, &block), &model, opts.h)?;
    compare(
        format!("s2s layers={} units={} steps={} variant={}", opts.layers, opts.units, opts.steps, opts.variant),
        &analytic,
        &numeric,
        opts.tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_passes_for_both_variants() {
        for variant in [CellVariant::Standard, CellVariant::PaperVerbatim] {
            let opts = GradCheckOptions { variant, ..Default::default() };
            let r = check_stack(&opts).unwrap();
            assert!(r.passed(), "{r}");
            assert!(r.max_rel_error() < 1e-5);
            assert_eq!(r.tensors.len(), 2 * 12 + 2);
        }
    }

    #[test]
    fn handoff_gradient_matches() {
        let r = check_s2s(&GradCheckOptions { layers: 2, units: 3, steps: 4, ..Default::default() }).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.get("encoder.layer0.w_ix").is_some());
    }

    #[test]
    fn corrupted_backward_fails() {
        let opts = GradCheckOptions { corrupt_backward: true, ..Default::default() };
        let r = check_stack(&opts).unwrap();
        assert!(!r.passed());
        assert!(!r.get("layer0.b_u").unwrap().passed);
        assert!(r.get("layer0.w_ix").unwrap().passed);
        assert!(!check_s2s(&GradCheckOptions { layers: 1, units: 2, steps: 3, ..opts }).unwrap().passed());
    }

    #[test]
    fn oversize_dims_are_refused() {
        assert!(check_stack(&GradCheckOptions { units: 17, ..Default::default() }).is_err());
        assert!(check_stack(&GradCheckOptions { steps: 11, ..Default::default() }).is_err());
        assert!(check_stack(&GradCheckOptions { layers: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn relative_error_uses_unit_floor() {
        let a = Matrix::row(&[1e-3, 200.0]);
        let n = Matrix::row(&[2e-3, 202.0]);
        assert_eq!(max_relative_error(&a, &n), 2.0 / 202.0);
        assert_eq!(max_relative_error(&Matrix::row(&[1e-3]), &Matrix::row(&[2e-3])), 1e-3);
    }
}
