//! Coordinatewise two-layer LSTM used as an update generator.
//!
//! One parameter set is shared by every scalar coordinate of a variable
//! block; each coordinate carries its own hidden and cell state. The batch
//! dimension of every matrix below is the coordinate index.

use ndarray::Array2;

use crate::autodiff::{Parameter, Tape, Var};
use crate::error::{check_finite, Result};
use crate::rng::GaussianStream;

pub const LAYERS: usize = 2;

/// Gate column blocks, in order.
const INPUT: usize = 0;
const FORGET: usize = 1;
const CELL: usize = 2;
const OUTPUT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `(input + hidden) × 4·hidden`, acting on `[x, h]`.
    pub weight: Parameter,
    /// `1 × 4·hidden`.
    pub bias: Parameter,
}

/// Per-coordinate recurrent state, each array `n_coords × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: [Array2<f64>; LAYERS],
    pub cell: [Array2<f64>; LAYERS],
}

impl LstmState {
    pub fn zeros(n_coords: usize, hidden: usize) -> Self {
        Self {
            hidden: std::array::from_fn(|_| Array2::zeros((n_coords, hidden))),
            cell: std::array::from_fn(|_| Array2::zeros((n_coords, hidden))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaLearner {
    pub layers: [LstmLayer; LAYERS],
    /// `hidden × 1` linear head.
    pub head_weight: Parameter,
    pub head_bias: Parameter,
    pub state: LstmState,
    hidden: usize,
    out_scale: f64,
}

/// A learner's parameters and states as nodes on one tape.
#[derive(Debug, Clone)]
pub struct BoundLearner {
    weight: [Var; LAYERS],
    bias: [Var; LAYERS],
    head_weight: Var,
    head_bias: Var,
    hidden_state: [Var; LAYERS],
    cell_state: [Var; LAYERS],
    hidden: usize,
    out_scale: f64,
}

impl MetaLearner {
    /// Recurrent and input weights uniform in `±1/√hidden`, forget-gate bias
    /// `+1`, other biases zero, output head zero.
    pub fn new(n_coords: usize, hidden: usize, out_scale: f64, rng: &mut GaussianStream) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let layers = std::array::from_fn(|l| {
            let input = if l == 0 { 1 } else { hidden };
            let weight = Array2::from_shape_simple_fn((input + hidden, 4 * hidden), || {
                rng.uniform_in(-bound, bound)
            });
            let mut bias = Array2::zeros((1, 4 * hidden));
            bias.slice_mut(ndarray::s![.., FORGET * hidden..(FORGET + 1) * hidden])
                .fill(1.0);
            LstmLayer {
                weight: Parameter::new(weight),
                bias: Parameter::new(bias),
            }
        });
        Self {
            layers,
            head_weight: Parameter::new(Array2::zeros((hidden, 1))),
            head_bias: Parameter::new(Array2::zeros((1, 1))),
            state: LstmState::zeros(n_coords, hidden),
            hidden,
            out_scale,
        }
    }

    /// Every parameter set to zero.
    pub fn zeroed(n_coords: usize, hidden: usize, out_scale: f64) -> Self {
        let mut rng = GaussianStream::new(0, 0);
        let mut m = Self::new(n_coords, hidden, out_scale, &mut rng);
        for p in m.params_mut() {
            p.value.fill(0.0);
        }
        m
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_coords(&self) -> usize {
        self.state.hidden[0].nrows()
    }

    pub fn out_scale(&self) -> f64 {
        self.out_scale
    }

    /// Parameters in a fixed order: layer weights and biases, then the head.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::with_capacity(2 * LAYERS + 2);
        for layer in &self.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::with_capacity(2 * LAYERS + 2);
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Puts parameters (gradient-carrying) and the current states
    /// (detached) on the tape.
    pub fn bind(&self, tape: &mut Tape) -> BoundLearner {
        BoundLearner {
            weight: std::array::from_fn(|l| tape.param(&self.layers[l].weight)),
            bias: std::array::from_fn(|l| tape.param(&self.layers[l].bias)),
            head_weight: tape.param(&self.head_weight),
            head_bias: tape.param(&self.head_bias),
            hidden_state: std::array::from_fn(|l| tape.constant(self.state.hidden[l].clone())),
            cell_state: std::array::from_fn(|l| tape.constant(self.state.cell[l].clone())),
            hidden: self.hidden,
            out_scale: self.out_scale,
        }
    }

    /// Adds the bound parameters' adjoints to the gradient buffers.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &BoundLearner) -> Result<()> {
        let vars = bound.param_vars();
        for (p, var) in self.params_mut().into_iter().zip(vars) {
            tape.accumulate_into(var, p)?;
        }
        Ok(())
    }

    /// Copies the bound states' final values back; gradients stop here.
    pub fn store_state(&mut self, tape: &Tape, bound: &BoundLearner) {
        for l in 0..LAYERS {
            self.state.hidden[l] = tape.value(bound.hidden_state[l]).clone();
            self.state.cell[l] = tape.value(bound.cell_state[l]).clone();
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl BoundLearner {
    fn param_vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(2 * LAYERS + 2);
        for l in 0..LAYERS {
            out.push(self.weight[l]);
            out.push(self.bias[l]);
        }
        out.push(self.head_weight);
        out.push(self.head_bias);
        out
    }

    /// Swaps the node used for parameter `which` (same order as
    /// [`MetaLearner::params`]).
    pub fn replace_param(&mut self, which: usize, var: Var) {
        match which {
            k if k < 2 * LAYERS && k % 2 == 0 => self.weight[k / 2] = var,
            k if k < 2 * LAYERS => self.bias[k / 2] = var,
            k if k == 2 * LAYERS => self.head_weight = var,
            _ => self.head_bias = var,
        }
    }

    pub fn hidden_state(&self, layer: usize) -> Var {
        self.hidden_state[layer]
    }

    pub fn cell_state(&self, layer: usize) -> Var {
        self.cell_state[layer]
    }

    /// One LSTM step on `input` (`n_coords × 1`); advances the bound states
    /// and returns the scaled update (`n_coords × 1`).
    pub fn step(&mut self, tape: &mut Tape, input: Var) -> Result<Var> {
        let hd = self.hidden;
        let mut x = input;
        for l in 0..LAYERS {
            let z = tape.concat(&[x, self.hidden_state[l]])?;
            let pre = tape.matmul(z, self.weight[l])?;
            let gates = tape.add_row(pre, self.bias[l])?;
            let block = |tape: &mut Tape, k: usize| tape.slice(gates, k * hd, (k + 1) * hd);
            let i_pre = block(tape, INPUT)?;
            let f_pre = block(tape, FORGET)?;
            let g_pre = block(tape, CELL)?;
            let o_pre = block(tape, OUTPUT)?;
            let i = tape.sigmoid(i_pre);
            let f = tape.sigmoid(f_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let kept = tape.mul(f, self.cell_state[l])?;
            let written = tape.mul(i, g)?;
            let c = tape.add(kept, written)?;
            let squashed = tape.tanh(c);
            let h = tape.mul(o, squashed)?;
            self.cell_state[l] = c;
            self.hidden_state[l] = h;
            x = h;
        }
        let out = tape.matmul(x, self.head_weight)?;
        let out = tape.add_row(out, self.head_bias)?;
        Ok(tape.scale(out, self.out_scale))
    }
}

/// Feeds one gradient vector through the learner and advances its states.
/// No gradient information is kept.
pub fn lstm_update(m: &mut MetaLearner, grad: &[f64]) -> Result<Vec<f64>> {
    check_finite("lstm_update input", grad)?;
    if grad.len() != m.n_coords() {
        return Err(crate::error::Error::shape("lstm_update", m.n_coords(), grad.len()));
    }
    let mut tape = Tape::new();
    let mut bound = m.bind(&mut tape);
    let input = tape.constant(Array2::from_shape_vec((grad.len(), 1), grad.to_vec()).expect("column"));
    let delta = bound.step(&mut tape, input)?;
    let out: Vec<f64> = tape.value(delta).iter().copied().collect();
    check_finite("lstm_update output", &out)?;
    m.store_state(&tape, &bound);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn zero_parameters_give_zero_update() {
        let mut m = MetaLearner::zeroed(5, 8, 1.0);
        let delta = lstm_update(&mut m, &[1.0, -2.0, 3.0, 0.5, 0.0]).unwrap();
        assert_eq!(delta, vec![0.0; 5]);
        assert!(m.state.cell.iter().all(|c| c.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn state_shapes_are_preserved() {
        let mut rng = GaussianStream::new(1, 0);
        let mut m = MetaLearner::new(6, 4, 1.0, &mut rng);
        m.head_weight.value.fill(0.1);
        for k in 0..10 {
            let g: Vec<f64> = (0..6).map(|i| (i + k) as f64 * 0.1).collect();
            let d = lstm_update(&mut m, &g).unwrap();
            assert_eq!(d.len(), 6);
            for l in 0..LAYERS {
                assert_eq!(m.state.hidden[l].dim(), (6, 4));
                assert_eq!(m.state.cell[l].dim(), (6, 4));
            }
        }
    }

    #[test]
    fn initialization_scheme() {
        let mut rng = GaussianStream::new(2, 0);
        let m = MetaLearner::new(3, 16, 1.0, &mut rng);
        let bound = 0.25;
        for layer in &m.layers {
            assert!(layer.weight.value.iter().all(|w| w.abs() <= bound));
            let b = &layer.bias.value;
            for j in 0..64 {
                let expected = if (16..32).contains(&j) { 1.0 } else { 0.0 };
                assert_eq!(b[[0, j]], expected);
            }
        }
        assert_eq!(m.layers[0].weight.value.dim(), (17, 64));
        assert_eq!(m.layers[1].weight.value.dim(), (32, 64));
        assert!(m.head_weight.value.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut m = MetaLearner::zeroed(2, 4, 1.0);
        assert!(matches!(
            lstm_update(&mut m, &[0.0, f64::NAN]),
            Err(Error::Numeric { index: 1, .. })
        ));
    }

    #[test]
    fn coordinates_are_independent() {
        let mut rng = GaussianStream::new(3, 0);
        let mut a = MetaLearner::new(3, 4, 1.0, &mut rng);
        a.head_weight.value.fill(0.3);
        let mut b = a.clone();
        let da = lstm_update(&mut a, &[0.1, 0.2, 0.3]).unwrap();
        let db = lstm_update(&mut b, &[0.1, 9.0, 0.3]).unwrap();
        assert_eq!(da[0].to_bits(), db[0].to_bits());
        assert_eq!(da[2].to_bits(), db[2].to_bits());
        assert_ne!(da[1], db[1]);
    }
}
