//! LSTM cell, stacked layers with an affine readout, dropout masks, and the
//! single-step backward pass used by BPTT.
//!
//! Gate equations, with row-vector inputs:
//!
//! ```text
//! i_g = sigm(i W_ix + o_prev W_im + b_i)
//! f_g = sigm(i W_fx + o_prev W_fm + b_f)
//! o_g = sigm(i W_ox + o_prev W_om + b_o)
//! u   = tanh(i W_ux + o_prev W_um + b_u)
//! x   = f_g ∘ x_prev + i_g ∘ u
//! o   = o_g ∘ tanh(x)        (CellVariant::Standard)
//! o   = o_g ∘ tanh(u)        (CellVariant::PaperVerbatim)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::ParamSet;
use crate::rng::{uniform_init, SeededRng};

/// Default half-width of the uniform weight initialisation.
pub const DEFAULT_INIT_RANGE: f64 = 0.08;

/// Which cell-output equation is active.
///
/// `PaperVerbatim` squashes the update signal `u` (already a tanh) a second
/// time; `Standard` squashes the new memory state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CellVariant {
    PaperVerbatim,
    #[default]
    Standard,
}

impl CellVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            CellVariant::PaperVerbatim => "paper_verbatim",
            CellVariant::Standard => "standard",
        }
    }
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_verbatim" => Ok(CellVariant::PaperVerbatim),
            "standard" => Ok(CellVariant::Standard),
            other => Err(Error::invalid(format!("unknown cell variant '{other}' (expected standard|paper_verbatim)"))),
        }
    }
}

/// The twelve tensors of one LSTM cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub w_ix: Matrix,
    pub w_im: Matrix,
    pub w_fx: Matrix,
    pub w_fm: Matrix,
    pub w_ox: Matrix,
    pub w_om: Matrix,
    pub w_ux: Matrix,
    pub w_um: Matrix,
    pub b_i: Matrix,
    pub b_f: Matrix,
    pub b_o: Matrix,
    pub b_u: Matrix,
}

const CELL_TENSOR_NAMES: [&str; 12] =
    ["w_ix", "w_im", "w_fx", "w_fm", "w_ox", "w_om", "w_ux", "w_um", "b_i", "b_f", "b_o", "b_u"];

impl CellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let wx = || Matrix::zeros(input_dim, hidden_dim);
        let wm = || Matrix::zeros(hidden_dim, hidden_dim);
        let b = || Matrix::zeros(1, hidden_dim);
        CellParams {
            w_ix: wx(),
            w_im: wm(),
            w_fx: wx(),
            w_fm: wm(),
            w_ox: wx(),
            w_om: wm(),
            w_ux: wx(),
            w_um: wm(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_u: b(),
        }
    }

    /// Weights uniform in `[-range, range]`, biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, range: f64, rng: &mut SeededRng) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for w in [
            &mut p.w_ix,
            &mut p.w_im,
            &mut p.w_fx,
            &mut p.w_fm,
            &mut p.w_ox,
            &mut p.w_om,
            &mut p.w_ux,
            &mut p.w_um,
        ] {
            *w = uniform_init(w.rows(), w.cols(), range, rng)?;
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.w_ix.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_ix.cols()
    }

    fn tensors_in_order(&self) -> [&Matrix; 12] {
        [
            &self.w_ix, &self.w_im, &self.w_fx, &self.w_fm, &self.w_ox, &self.w_om, &self.w_ux, &self.w_um, &self.b_i,
            &self.b_f, &self.b_o, &self.b_u,
        ]
    }

    fn tensors_in_order_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.w_ix,
            &mut self.w_im,
            &mut self.w_fx,
            &mut self.w_fm,
            &mut self.w_ox,
            &mut self.w_om,
            &mut self.w_ux,
            &mut self.w_um,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_u,
        ]
    }

    /// Checks every tensor against the shapes implied by `w_ix`.
    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        for (name, t) in CELL_TENSOR_NAMES.iter().zip(self.tensors_in_order()) {
            let want = match name.as_bytes() {
                [b'w', _, _, b'x'] => (d, h),
                [b'w', _, _, b'm'] => (h, h),
                _ => (1, h),
            };
            if t.shape() != want {
                return Err(Error::Shape {
                    op: "cell params",
                    left_name: (*name).into(),
                    left: t.shape(),
                    right_name: "expected".into(),
                    right: want,
                });
            }
        }
        Ok(())
    }
}

impl ParamSet for CellParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        for (name, t) in CELL_TENSOR_NAMES.iter().zip(self.tensors_in_order()) {
            out.push((format!("{prefix}{name}"), t));
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        out.extend(self.tensors_in_order_mut());
    }
}

/// Memory state `x` and output `o` of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub x: Matrix,
    pub o: Matrix,
}

impl CellState {
    pub fn zeros(hidden_dim: usize) -> Self {
        CellState { x: Matrix::zeros(1, hidden_dim), o: Matrix::zeros(1, hidden_dim) }
    }
}

/// Everything one cell step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct CellCache {
    pub input: Matrix,
    pub o_prev: Matrix,
    pub x_prev: Matrix,
    pub i_g: Matrix,
    pub f_g: Matrix,
    pub o_g: Matrix,
    pub u: Matrix,
    pub x: Matrix,
    pub o: Matrix,
}

fn shape_check(op: &'static str, name: &str, m: &Matrix, want: (usize, usize)) -> Result<()> {
    if m.shape() != want {
        return Err(Error::Shape {
            op,
            left_name: name.into(),
            left: m.shape(),
            right_name: "expected".into(),
            right: want,
        });
    }
    Ok(())
}

fn gate_preactivation(input: &Matrix, o_prev: &Matrix, wx: &Matrix, wm: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut z = input.matmul(wx)?;
    z.add_assign(&o_prev.matmul(wm)?)?;
    z.add_assign(b)?;
    Ok(z)
}

pub fn cell_forward(input: &Matrix, prev: &CellState, p: &CellParams, v: CellVariant) -> Result<(CellState, CellCache)> {
    let (d, h) = (p.input_dim(), p.hidden_dim());
    shape_check("cell_forward", "input", input, (1, d))?;
    shape_check("cell_forward", "prev.x", &prev.x, (1, h))?;
    shape_check("cell_forward", "prev.o", &prev.o, (1, h))?;

    let i_g = gate_preactivation(input, &prev.o, &p.w_ix, &p.w_im, &p.b_i)?.map_sigmoid();
    let f_g = gate_preactivation(input, &prev.o, &p.w_fx, &p.w_fm, &p.b_f)?.map_sigmoid();
    let o_g = gate_preactivation(input, &prev.o, &p.w_ox, &p.w_om, &p.b_o)?.map_sigmoid();
    let u = gate_preactivation(input, &prev.o, &p.w_ux, &p.w_um, &p.b_u)?.map_tanh();

    let mut x = f_g.hadamard(&prev.x)?;
    x.add_assign(&i_g.hadamard(&u)?)?;
    let squashed = match v {
        CellVariant::Standard => x.map_tanh(),
        CellVariant::PaperVerbatim => u.map_tanh(),
    };
    let o = o_g.hadamard(&squashed)?;

    let cache = CellCache {
        input: input.clone(),
        o_prev: prev.o.clone(),
        x_prev: prev.x.clone(),
        i_g,
        f_g,
        o_g,
        u,
        x: x.clone(),
        o: o.clone(),
    };
    Ok((CellState { x, o }, cache))
}

/// Gradients flowing out of one cell step.
#[derive(Clone, Debug)]
pub struct CellGrads {
    pub params: CellParams,
    pub input: Matrix,
    pub o_prev: Matrix,
    pub x_prev: Matrix,
}

/// Reverse-mode step through one cell.
///
/// `grad_o` is dL/do for this step's output, `grad_x_next` is dL/dx arriving
/// from the following step through the memory path.
pub fn cell_backward(
    cache: &CellCache,
    grad_o: &Matrix,
    grad_x_next: &Matrix,
    p: &CellParams,
    v: CellVariant,
) -> Result<CellGrads> {
    let mut params = CellParams::zeros(p.input_dim(), p.hidden_dim());
    let (input, o_prev, x_prev) = cell_backward_acc(cache, grad_o, grad_x_next, p, v, &mut params)?;
    Ok(CellGrads { params, input, o_prev, x_prev })
}

/// Like [`cell_backward`] but accumulates parameter gradients into `acc`.
/// Returns `(d_input, d_o_prev, d_x_prev)`.
pub fn cell_backward_acc(
    cache: &CellCache,
    grad_o: &Matrix,
    grad_x_next: &Matrix,
    p: &CellParams,
    v: CellVariant,
    acc: &mut CellParams,
) -> Result<(Matrix, Matrix, Matrix)> {
    let (d, h) = (p.input_dim(), p.hidden_dim());
    let op = "cell_backward";
    shape_check(op, "cache.input", &cache.input, (1, d))?;
    for (name, m) in [
        ("cache.o_prev", &cache.o_prev),
        ("cache.x_prev", &cache.x_prev),
        ("cache.i_g", &cache.i_g),
        ("cache.f_g", &cache.f_g),
        ("cache.o_g", &cache.o_g),
        ("cache.u", &cache.u),
        ("cache.x", &cache.x),
        ("cache.o", &cache.o),
        ("grad_o", grad_o),
        ("grad_x_next", grad_x_next),
    ] {
        shape_check(op, name, m, (1, h))?;
    }
    shape_check(op, "acc.w_ix", &acc.w_ix, (d, h))?;

    let mut d_o_g = Matrix::zeros(1, h);
    let mut d_x = grad_x_next.clone();
    let mut d_u = Matrix::zeros(1, h);
    {
        let go = grad_o.as_slice();
        let og = cache.o_g.as_slice();
        let dog = d_o_g.as_mut_slice();
        match v {
            CellVariant::Standard => {
                let dx = d_x.as_mut_slice();
                for (j, &x) in cache.x.as_slice().iter().enumerate() {
                    let th = x.tanh();
                    dog[j] = go[j] * th;
                    dx[j] += go[j] * og[j] * (1.0 - th * th);
                }
            }
            CellVariant::PaperVerbatim => {
                let du = d_u.as_mut_slice();
                for (j, &u) in cache.u.as_slice().iter().enumerate() {
                    let tu = u.tanh();
                    dog[j] = go[j] * tu;
                    du[j] += go[j] * og[j] * (1.0 - tu * tu);
                }
            }
        }
    }

    // Pre-activation gradients of the four gates.
    let mut a_i = Matrix::zeros(1, h);
    let mut a_f = Matrix::zeros(1, h);
    let mut a_o = Matrix::zeros(1, h);
    let mut a_u = Matrix::zeros(1, h);
    let mut d_x_prev = Matrix::zeros(1, h);
    for j in 0..h {
        let dx = d_x.as_slice()[j];
        let ig = cache.i_g.as_slice()[j];
        let fg = cache.f_g.as_slice()[j];
        let og = cache.o_g.as_slice()[j];
        let u = cache.u.as_slice()[j];
        let d_ig = dx * u;
        let d_fg = dx * cache.x_prev.as_slice()[j];
        let d_uj = dx * ig + d_u.as_slice()[j];
        a_i.as_mut_slice()[j] = d_ig * ig * (1.0 - ig);
        a_f.as_mut_slice()[j] = d_fg * fg * (1.0 - fg);
        a_o.as_mut_slice()[j] = d_o_g.as_slice()[j] * og * (1.0 - og);
        a_u.as_mut_slice()[j] = d_uj * (1.0 - u * u);
        d_x_prev.as_mut_slice()[j] = dx * fg;
    }

    let mut d_input = Matrix::zeros(1, d);
    let mut d_o_prev = Matrix::zeros(1, h);
    for (a, wx, wm, gwx, gwm, gb) in [
        (&a_i, &p.w_ix, &p.w_im, &mut acc.w_ix, &mut acc.w_im, &mut acc.b_i),
        (&a_f, &p.w_fx, &p.w_fm, &mut acc.w_fx, &mut acc.w_fm, &mut acc.b_f),
        (&a_o, &p.w_ox, &p.w_om, &mut acc.w_ox, &mut acc.w_om, &mut acc.b_o),
        (&a_u, &p.w_ux, &p.w_um, &mut acc.w_ux, &mut acc.w_um, &mut acc.b_u),
    ] {
        cache.input.t_matmul_acc(a, gwx)?;
        cache.o_prev.t_matmul_acc(a, gwm)?;
        gb.add_assign(a)?;
        d_input.add_assign(&a.matmul_t(wx)?)?;
        d_o_prev.add_assign(&a.matmul_t(wm)?)?;
    }

    Ok((d_input, d_o_prev, d_x_prev))
}

/// Dropout on the non-recurrent connections: between stacked layers and in
/// front of the readout. Masks are inverted (`Bernoulli(1-rate) / (1-rate)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    /// Reuse one mask set for every step of an unrolled window.
    pub reuse_across_window: bool,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec { rate: 0.2, reuse_across_window: false }
    }
}

impl DropoutSpec {
    pub fn disabled() -> Self {
        DropoutSpec { rate: 0.0, reuse_across_window: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {}", self.rate)));
        }
        Ok(())
    }

    /// One mask per layer output (index `l` masks layer `l`'s output on its way
    /// to layer `l+1`, the last one masks the readout input). `None` when the
    /// rate is zero.
    pub fn sample_masks(&self, stack: &StackParams, rng: &mut SeededRng) -> Option<DropoutMasks> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let masks = stack
            .layers
            .iter()
            .map(|l| {
                let h = l.hidden_dim();
                let data = (0..h).map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 }).collect();
                Matrix::from_vec(1, h, data).expect("mask shape")
            })
            .collect();
        Some(DropoutMasks(masks))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks(pub Vec<Matrix>);

/// A multi-layer LSTM with a scalar affine readout `ŷ = o_last W_y + b_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackParams {
    pub layers: Vec<CellParams>,
    pub w_y: Matrix,
    pub b_y: Matrix,
    pub variant: CellVariant,
}

impl StackParams {
    pub fn zeros(input_dim: usize, hidden: &[usize], variant: CellVariant) -> Self {
        assert!(!hidden.is_empty(), "a stack needs at least one layer");
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = input_dim;
        for &h in hidden {
            layers.push(CellParams::zeros(d, h));
            d = h;
        }
        StackParams { layers, w_y: Matrix::zeros(d, 1), b_y: Matrix::zeros(1, 1), variant }
    }

    pub fn init(input_dim: usize, hidden: &[usize], variant: CellVariant, range: f64, rng: &mut SeededRng) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || input_dim == 0 {
            return Err(Error::invalid(format!("invalid stack dimensions: input {input_dim}, hidden {hidden:?}")));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = input_dim;
        for &h in hidden {
            layers.push(CellParams::init(d, h, range, rng)?);
            d = h;
        }
        let w_y = uniform_init(d, 1, range, rng)?;
        Ok(StackParams { layers, w_y, b_y: Matrix::zeros(1, 1), variant })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers.iter().map(CellParams::hidden_dim).collect()
    }

    pub fn zero_states(&self) -> Vec<CellState> {
        self.layers.iter().map(|l| CellState::zeros(l.hidden_dim())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut d = self.input_dim();
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.input_dim() != d {
                return Err(Error::invalid(format!("layer {i} expects input {} but receives {d}", l.input_dim())));
            }
            d = l.hidden_dim();
        }
        shape_check("stack params", "w_y", &self.w_y, (d, 1))?;
        shape_check("stack params", "b_y", &self.b_y, (1, 1))
    }
}

impl ParamSet for StackParams {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}layer{i}."), out);
        }
        out.push((format!("{prefix}w_y"), &self.w_y));
        out.push((format!("{prefix}b_y"), &self.b_y));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        for l in &mut self.layers {
            l.visit_mut(out);
        }
        out.push(&mut self.w_y);
        out.push(&mut self.b_y);
    }
}

/// Per-step record of a stacked forward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub layers: Vec<CellCache>,
    pub masks: Option<DropoutMasks>,
    /// Readout input after dropout.
    pub top: Matrix,
    pub y_hat: f64,
}

/// One time step through every layer and the readout.
///
/// Passing `masks = None` is evaluation mode: no dropout is applied.
pub fn stack_step(
    input: &Matrix,
    prev: &[CellState],
    s: &StackParams,
    masks: Option<&DropoutMasks>,
) -> Result<(Vec<CellState>, f64, StepCache)> {
    if prev.len() != s.layers.len() {
        return Err(Error::invalid(format!("{} layer states supplied for a {}-layer stack", prev.len(), s.layers.len())));
    }
    let mut states = Vec::with_capacity(s.layers.len());
    let mut caches = Vec::with_capacity(s.layers.len());
    let mut feed = input.clone();
    for (l, (p, st)) in s.layers.iter().zip(prev).enumerate() {
        let (next, cache) = cell_forward(&feed, st, p, s.variant)?;
        feed = match masks {
            Some(m) => next.o.hadamard(&m.0[l])?,
            None => next.o.clone(),
        };
        states.push(next);
        caches.push(cache);
    }
    let y_hat = feed.matmul(&s.w_y)?.get(0, 0) + s.b_y.get(0, 0);
    let cache = StepCache { layers: caches, masks: masks.cloned(), top: feed, y_hat };
    Ok((states, y_hat, cache))
}

/// Reverse step through the readout and every layer of one cached step.
///
/// `d_o_rec`/`d_x_rec` hold the recurrent gradients per layer arriving from
/// the following step; they are replaced by the gradients for the previous
/// step. Returns dL/d(input).
pub fn stack_step_backward(
    cache: &StepCache,
    d_y_hat: f64,
    s: &StackParams,
    d_o_rec: &mut [Matrix],
    d_x_rec: &mut [Matrix],
    grads: &mut StackParams,
) -> Result<Matrix> {
    let n = s.layers.len();
    if cache.layers.len() != n || d_o_rec.len() != n || d_x_rec.len() != n {
        return Err(Error::invalid("step cache does not match the stack depth"));
    }
    // Readout.
    if d_y_hat != 0.0 {
        cache.top.t_matmul_acc(&Matrix::scalar(d_y_hat), &mut grads.w_y)?;
        grads.b_y.as_mut_slice()[0] += d_y_hat;
    }
    let mut d_feed = s.w_y.transpose().scale(d_y_hat);

    for l in (0..n).rev() {
        if let Some(m) = &cache.masks {
            d_feed = d_feed.hadamard(&m.0[l])?;
        }
        let mut grad_o = d_feed;
        grad_o.add_assign(&d_o_rec[l])?;
        let (d_in, d_o_prev, d_x_prev) =
            cell_backward_acc(&cache.layers[l], &grad_o, &d_x_rec[l], &s.layers[l], s.variant, &mut grads.layers[l])?;
        d_o_rec[l] = d_o_prev;
        d_x_rec[l] = d_x_prev;
        d_feed = d_in;
    }
    Ok(d_feed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::sigmoid;

    fn scalar_oracle(input: &[f64], x_prev: &[f64], o_prev: &[f64], p: &CellParams, v: CellVariant) -> (Vec<f64>, Vec<f64>) {
        let h = p.hidden_dim();
        let pre = |wx: &Matrix, wm: &Matrix, b: &Matrix, j: usize| {
            let mut z = b.get(0, j);
            for (k, &iv) in input.iter().enumerate() {
                z += iv * wx.get(k, j);
            }
            for (k, &ov) in o_prev.iter().enumerate() {
                z += ov * wm.get(k, j);
            }
            z
        };
        let mut xs = vec![0.0; h];
        let mut os = vec![0.0; h];
        for j in 0..h {
            let ig = sigmoid(pre(&p.w_ix, &p.w_im, &p.b_i, j));
            let fg = sigmoid(pre(&p.w_fx, &p.w_fm, &p.b_f, j));
            let og = sigmoid(pre(&p.w_ox, &p.w_om, &p.b_o, j));
            let u = pre(&p.w_ux, &p.w_um, &p.b_u, j).tanh();
            xs[j] = fg * x_prev[j] + ig * u;
            os[j] = og
                * match v {
                    CellVariant::Standard => xs[j].tanh(),
                    CellVariant::PaperVerbatim => u.tanh(),
                };
        }
        (xs, os)
    }

    #[test]
    fn zero_cell_analytic_values() {
        let p = CellParams::zeros(1, 1);
        let prev = CellState { x: Matrix::scalar(2.0), o: Matrix::scalar(0.0) };
        let input = Matrix::scalar(0.7);
        let (s, c) = cell_forward(&input, &prev, &p, CellVariant::PaperVerbatim).unwrap();
        assert_eq!(c.i_g.get(0, 0), 0.5);
        assert_eq!(c.f_g.get(0, 0), 0.5);
        assert_eq!(c.o_g.get(0, 0), 0.5);
        assert_eq!(c.u.get(0, 0), 0.0);
        assert_eq!(s.x.get(0, 0), 1.0);
        assert_eq!(s.o.get(0, 0), 0.0);
        let (s, _) = cell_forward(&input, &prev, &p, CellVariant::Standard).unwrap();
        assert!((s.o.get(0, 0) - 0.380797).abs() < 1e-6);
        assert_eq!(s.o.get(0, 0), 0.5 * 1.0f64.tanh());
    }

    #[test]
    fn saturated_gates_preserve_state() {
        let mut rng = SeededRng::new(5);
        let mut p = CellParams::init(3, 2, 0.08, &mut rng).unwrap();
        p.b_f.fill(20.0);
        p.b_i.fill(-20.0);
        let prev = CellState { x: Matrix::row(&[0.3, -1.2]), o: Matrix::row(&[0.1, 0.2]) };
        let (s, _) = cell_forward(&Matrix::row(&[1.0, -0.5, 0.25]), &prev, &p, CellVariant::Standard).unwrap();
        for (a, b) in s.x.as_slice().iter().zip(prev.x.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = SeededRng::new(9);
        for v in [CellVariant::Standard, CellVariant::PaperVerbatim] {
            let p = CellParams::init(3, 4, 0.5, &mut rng).unwrap();
            let input = uniform_init(1, 3, 1.0, &mut rng).unwrap();
            let prev = CellState { x: uniform_init(1, 4, 1.0, &mut rng).unwrap(), o: uniform_init(1, 4, 0.9, &mut rng).unwrap() };
            let (s, _) = cell_forward(&input, &prev, &p, v).unwrap();
            let (xs, os) = scalar_oracle(input.as_slice(), prev.x.as_slice(), prev.o.as_slice(), &p, v);
            for j in 0..4 {
                assert!((s.x.get(0, j) - xs[j]).abs() < 1e-12);
                assert!((s.o.get(0, j) - os[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_shape_errors_name_the_tensor() {
        let p = CellParams::zeros(3, 2);
        let err = cell_forward(&Matrix::zeros(1, 4), &CellState::zeros(2), &p, CellVariant::Standard).unwrap_err();
        assert!(err.to_string().contains("input"), "{err}");
        let err = cell_forward(&Matrix::zeros(1, 3), &CellState::zeros(3), &p, CellVariant::Standard).unwrap_err();
        assert!(err.to_string().contains("prev.x"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(1);
        let p = CellParams::init(3, 2, 0.3, &mut rng).unwrap();
        let (_, cache) = cell_forward(&Matrix::row(&[0.5, 0.1, -0.3]), &CellState::zeros(2), &p, CellVariant::Standard).unwrap();
        let g = cell_backward(&cache, &Matrix::zeros(1, 2), &Matrix::zeros(1, 2), &p, CellVariant::Standard).unwrap();
        let mut all = Vec::new();
        g.params.visit("", &mut all);
        assert!(all.iter().all(|(_, m)| m.max_abs() == 0.0));
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.o_prev.max_abs(), 0.0);
        assert_eq!(g.x_prev.max_abs(), 0.0);
    }

    #[test]
    fn forced_gates_pass_state_gradient_through() {
        let p = CellParams::zeros(2, 3);
        let cache = CellCache {
            input: Matrix::row(&[0.2, 0.4]),
            o_prev: Matrix::zeros(1, 3),
            x_prev: Matrix::row(&[0.5, -0.5, 1.0]),
            i_g: Matrix::zeros(1, 3),
            f_g: Matrix::filled(1, 3, 1.0),
            o_g: Matrix::filled(1, 3, 0.5),
            u: Matrix::zeros(1, 3),
            x: Matrix::row(&[0.5, -0.5, 1.0]),
            o: Matrix::zeros(1, 3),
        };
        let upstream = Matrix::row(&[0.3, -1.7, 2.5]);
        for v in [CellVariant::Standard, CellVariant::PaperVerbatim] {
            let g = cell_backward(&cache, &Matrix::zeros(1, 3), &upstream, &p, v).unwrap();
            assert_eq!(g.x_prev, upstream);
        }
    }

    #[test]
    fn backward_rejects_inconsistent_cache() {
        let p = CellParams::zeros(2, 3);
        let (_, mut cache) = cell_forward(&Matrix::zeros(1, 2), &CellState::zeros(3), &p, CellVariant::Standard).unwrap();
        cache.f_g = Matrix::zeros(1, 2);
        let err = cell_backward(&cache, &Matrix::zeros(1, 3), &Matrix::zeros(1, 3), &p, CellVariant::Standard).unwrap_err();
        assert!(err.to_string().contains("cache.f_g"), "{err}");
    }

    #[test]
    fn variants_agree_when_state_equals_update() {
        // Zero prior state and a closed forget gate give x == i_g ∘ u; with i_g
        // saturated open, x == u.
        let mut rng = SeededRng::new(2);
        let mut p = CellParams::init(2, 3, 0.3, &mut rng).unwrap();
        p.b_f.fill(-40.0);
        p.b_i.fill(40.0);
        let input = Matrix::row(&[0.4, -0.9]);
        let (a, _) = cell_forward(&input, &CellState::zeros(3), &p, CellVariant::Standard).unwrap();
        let (b, _) = cell_forward(&input, &CellState::zeros(3), &p, CellVariant::PaperVerbatim).unwrap();
        assert_eq!(a.o, b.o);
    }

    #[test]
    fn stack_single_layer_reduces_to_cell_plus_readout() {
        let mut rng = SeededRng::new(4);
        let s = StackParams::init(4, &[5], CellVariant::Standard, 0.3, &mut rng).unwrap();
        let input = Matrix::row(&[0.1, 0.2, 0.3, 0.4]);
        let (states, y, _) = stack_step(&input, &s.zero_states(), &s, None).unwrap();
        let (cell, _) = cell_forward(&input, &CellState::zeros(5), &s.layers[0], s.variant).unwrap();
        assert_eq!(states[0], cell);
        assert_eq!(y, cell.o.matmul(&s.w_y).unwrap().get(0, 0) + s.b_y.get(0, 0));
    }

    #[test]
    fn stack_constant_readout() {
        let mut s = StackParams::zeros(4, &[3, 3], CellVariant::Standard);
        s.b_y.fill(1.25);
        for input in [Matrix::row(&[0.0, 1.0, 2.0, 3.0]), Matrix::row(&[-5.0, 0.5, 0.0, 9.0])] {
            let (_, y, _) = stack_step(&input, &s.zero_states(), &s, None).unwrap();
            assert_eq!(y, 1.25);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_unmasked() {
        let mut rng = SeededRng::new(8);
        let s = StackParams::init(4, &[6, 6], CellVariant::Standard, 0.3, &mut rng).unwrap();
        let input = Matrix::row(&[0.3, 0.1, 0.2, 0.9]);
        let (_, y1, c1) = stack_step(&input, &s.zero_states(), &s, None).unwrap();
        let (_, y2, _) = stack_step(&input, &s.zero_states(), &s, None).unwrap();
        assert_eq!(y1, y2);
        assert!(c1.masks.is_none());
        assert_eq!(c1.top, c1.layers[1].o);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let s = StackParams::zeros(1, &[4], CellVariant::Standard);
        let spec = DropoutSpec::default();
        let mut rng = SeededRng::new(123);
        let activation = [0.7, -0.3, 0.05, 1.0];
        let mut sums = [0.0; 4];
        let trials = 10_000;
        for _ in 0..trials {
            let m = spec.sample_masks(&s, &mut rng).unwrap();
            for (j, s) in sums.iter_mut().enumerate() {
                *s += activation[j] * m.0[0].get(0, j);
            }
        }
        for j in 0..4 {
            let mean = sums[j] / trials as f64;
            assert!((mean - activation[j]).abs() <= 0.02 * activation[j].abs(), "unit {j}: {mean}");
        }
        assert!(DropoutSpec::disabled().sample_masks(&s, &mut rng).is_none());
    }

    #[test]
    fn standard_output_stays_inside_unit_interval() {
        let mut rng = SeededRng::new(77);
        let s = StackParams::init(4, &[8], CellVariant::Standard, 0.5, &mut rng).unwrap();
        let mut states = s.zero_states();
        for _ in 0..200 {
            let input = uniform_init(1, 4, 2.0, &mut rng).unwrap();
            let (next, _, _) = stack_step(&input, &states, &s, None).unwrap();
            assert!(next[0].o.as_slice().iter().all(|v| v.abs() < 1.0));
            states = next;
        }
    }
}
