//! One LSTM direction: gate parameters and the per-step forward/backward
//! arithmetic. Both directions of the tagger reuse this by feeding tokens in
//! the chosen processing order.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Weights of a single gate: `w` applies to the step input, `u` to the
/// previous hidden state, `b` is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl GateParams {
    fn zeros(hidden: usize, input: usize) -> GateParams {
        GateParams {
            w: Array2::zeros((hidden, input)),
            u: Array2::zeros((hidden, hidden)),
            b: Array1::zeros(hidden),
        }
    }

    fn preactivation(&self, x: &Array1<f64>, h_prev: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + self.u.dot(h_prev) + &self.b
    }
}

/// All parameters of one LSTM direction: input, forget and output gates plus
/// the candidate cell update.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

impl LstmDirectionParams {
    pub(crate) fn zeros(hidden: usize, input: usize) -> LstmDirectionParams {
        LstmDirectionParams {
            input: GateParams::zeros(hidden, input),
            forget: GateParams::zeros(hidden, input),
            output: GateParams::zeros(hidden, input),
            candidate: GateParams::zeros(hidden, input),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.input.b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input.w.ncols()
    }

    /// Gates in their canonical order (input, forget, output, candidate).
    /// This order fixes the parameter layout on disk and in flat vectors.
    pub(crate) fn gates(&self) -> [&GateParams; 4] {
        [&self.input, &self.forget, &self.output, &self.candidate]
    }

    pub(crate) fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [
            &mut self.input,
            &mut self.forget,
            &mut self.output,
            &mut self.candidate,
        ]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the forward pass of one step must remember so the backward
/// pass can run without recomputation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    /// Sentence position of the token this step consumed.
    pub x_index: usize,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    /// Post-sigmoid input, forget and output gates; post-tanh candidate.
    pub gi: Array1<f64>,
    pub gf: Array1<f64>,
    pub go: Array1<f64>,
    pub gg: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h: Array1<f64>,
}

pub(crate) fn step_forward(
    p: &LstmDirectionParams,
    x: &Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    x_index: usize,
) -> StepCache {
    let gi = p.input.preactivation(x, &h_prev).mapv(sigmoid);
    let gf = p.forget.preactivation(x, &h_prev).mapv(sigmoid);
    let go = p.output.preactivation(x, &h_prev).mapv(sigmoid);
    let gg = p.candidate.preactivation(x, &h_prev).mapv(f64::tanh);
    let c = &gf * &c_prev + &gi * &gg;
    let tanh_c = c.mapv(f64::tanh);
    let h = &go * &tanh_c;
    StepCache {
        x_index,
        h_prev,
        c_prev,
        gi,
        gf,
        go,
        gg,
        c,
        tanh_c,
        h,
    }
}

/// `target += col ⊗ row`.
pub(crate) fn add_outer(target: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    for (i, &ci) in col.iter().enumerate() {
        if ci != 0.0 {
            target.row_mut(i).scaled_add(ci, row);
        }
    }
}

/// Backward pass of one step. `dh` is the full gradient reaching this step's
/// hidden state (output layer plus carry from the following step), `dc_in`
/// the cell-state carry. Gate gradients accumulate into `grads`, the input
/// gradient into `dx`. Returns the carries `(dh_prev, dc_prev)` for the
/// preceding step.
pub(crate) fn step_backward(
    p: &LstmDirectionParams,
    cache: &StepCache,
    x: &Array1<f64>,
    dh: &Array1<f64>,
    dc_in: &Array1<f64>,
    grads: &mut LstmDirectionParams,
    dx: &mut Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    // h = go ⊙ tanh(c)
    let d_go = dh * &cache.tanh_c;
    let dc = dc_in + &(dh * &cache.go * &cache.tanh_c.mapv(|t| 1.0 - t * t));
    // c = gf ⊙ c_prev + gi ⊙ gg
    let d_gf = &dc * &cache.c_prev;
    let d_gi = &dc * &cache.gg;
    let d_gg = &dc * &cache.gi;
    let dc_prev = &dc * &cache.gf;
    // Through the gate nonlinearities: σ' = σ(1−σ), tanh' = 1−tanh².
    let da = [
        &d_gi * &cache.gi.mapv(|v| v * (1.0 - v)),
        &d_gf * &cache.gf.mapv(|v| v * (1.0 - v)),
        &d_go * &cache.go.mapv(|v| v * (1.0 - v)),
        &d_gg * &cache.gg.mapv(|v| 1.0 - v * v),
    ];
    let mut dh_prev = Array1::zeros(p.hidden_dim());
    for ((gate, ggrad), da) in p.gates().into_iter().zip(grads.gates_mut()).zip(da) {
        add_outer(&mut ggrad.w, &da, x);
        add_outer(&mut ggrad.u, &da, &cache.h_prev);
        ggrad.b += &da;
        *dx += &gate.w.t().dot(&da);
        dh_prev += &gate.u.t().dot(&da);
    }
    (dh_prev, dc_prev)
}

/// Runs one LSTM step: consumes input `x` and the previous `(h, c)` state,
/// returns the new `(h, c)`. Dimensions must match the direction's.
pub fn lstm_step(
    p: &LstmDirectionParams,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.len() != p.input_dim() {
        return Err(Error::Shape(format!(
            "step input has {} entries, direction expects {}",
            x.len(),
            p.input_dim()
        )));
    }
    if h_prev.len() != p.hidden_dim() || c_prev.len() != p.hidden_dim() {
        return Err(Error::Shape(format!(
            "state has {}/{} entries, direction expects {}",
            h_prev.len(),
            c_prev.len(),
            p.hidden_dim()
        )));
    }
    let cache = step_forward(p, x, h_prev.clone(), c_prev.clone(), 0);
    Ok((cache.h, cache.c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn zero_parameters_give_half_open_gates_and_zero_state() {
        // With all weights and biases zero: i = f = o = σ(0) = 0.5 and
        // g = tanh(0) = 0, so c = 0 and h = 0 regardless of the input.
        let p = LstmDirectionParams::zeros(3, 2);
        let (h, c) = lstm_step(&p, &arr1(&[5.0, -2.0]), &Array1::zeros(3), &Array1::zeros(3)).unwrap();
        assert_eq!(h, Array1::zeros(3));
        assert_eq!(c, Array1::zeros(3));
        let cache = step_forward(&p, &arr1(&[5.0, -2.0]), Array1::zeros(3), Array1::zeros(3), 0);
        for v in cache.gi.iter().chain(&cache.gf).chain(&cache.go) {
            assert_eq!(*v, 0.5);
        }
        assert_eq!(cache.gg, Array1::zeros(3));
    }

    #[test]
    fn one_dimensional_step_matches_hand_arithmetic() {
        // d_e = d_h = 1 with only biases set: every quantity is a scalar we
        // can reproduce with plain f64 math.
        let mut p = LstmDirectionParams::zeros(1, 1);
        p.input.b[0] = 10.0; // input gate ≈ open
        p.candidate.b[0] = 1.0;
        p.forget.b[0] = -1.0;
        let h_prev = arr1(&[0.0]);
        let c_prev = arr1(&[2.0]);
        let (h, c) = lstm_step(&p, &arr1(&[0.0]), &h_prev, &c_prev).unwrap();

        let gi = sigmoid(10.0);
        let gf = sigmoid(-1.0);
        let go = sigmoid(0.0);
        let expected_c = gf * 2.0 + gi * 1.0_f64.tanh();
        let expected_h = go * expected_c.tanh();
        assert!((c[0] - expected_c).abs() < 1e-12);
        assert!((h[0] - expected_h).abs() < 1e-12);
    }

    #[test]
    fn weights_mix_input_and_state() {
        // One non-zero weight at a time so each path is checkable by hand.
        let mut p = LstmDirectionParams::zeros(1, 1);
        p.candidate.w[[0, 0]] = 2.0; // g = tanh(2x)
        p.input.u[[0, 0]] = 3.0; // i = σ(3 h_prev)
        let (h, _c) = lstm_step(&p, &arr1(&[0.5]), &arr1(&[1.0]), &arr1(&[0.0])).unwrap();
        let expected_c = sigmoid(3.0) * 1.0_f64.tanh();
        let expected_h = 0.5 * expected_c.tanh();
        assert!((h[0] - expected_h).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_mismatched_dimensions() {
        let p = LstmDirectionParams::zeros(3, 2);
        let bad_x = lstm_step(&p, &arr1(&[1.0]), &Array1::zeros(3), &Array1::zeros(3));
        assert!(matches!(bad_x.unwrap_err(), Error::Shape(_)));
        let bad_h = lstm_step(&p, &arr1(&[1.0, 2.0]), &Array1::zeros(2), &Array1::zeros(3));
        assert!(matches!(bad_h.unwrap_err(), Error::Shape(_)));
    }

    #[test]
    fn add_outer_accumulates_rank_one_products() {
        let mut m = Array2::zeros((2, 3));
        add_outer(&mut m, &arr1(&[2.0, -1.0]), &arr1(&[1.0, 0.0, 3.0]));
        add_outer(&mut m, &arr1(&[0.0, 1.0]), &arr1(&[1.0, 1.0, 1.0]));
        assert_eq!(m[[0, 0]], 2.0);
        assert_eq!(m[[0, 2]], 6.0);
        assert_eq!(m[[1, 0]], 0.0);
        assert_eq!(m[[1, 1]], 1.0);
    }
}
