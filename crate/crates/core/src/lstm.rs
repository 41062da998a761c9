//! A single LSTM layer with full-sequence forward and BPTT backward passes.
//!
//! Gate pre-activations are stacked as `[input, forget, cell, output]`, so the
//! input weights are `4H x D_in`, recurrent weights `4H x H` and the bias `4H`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// Input weights, `4H x D_in`.
    pub w: Array2<f64>,
    /// Recurrent weights, `4H x H`.
    pub u: Array2<f64>,
    /// Gate biases, `4H`.
    pub b: Array1<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((4 * hidden, input)),
            u: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    /// Every weight and bias drawn uniformly from `[-1/sqrt(H), 1/sqrt(H)]`.
    pub fn uniform<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || rng.random_range(-k..=k))
        };
        let w = draw((4 * hidden, input));
        let u = draw((4 * hidden, hidden));
        let b = draw((4 * hidden, 1)).remove_axis(Axis(1));
        Self { w, u, b }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input(&self) -> usize {
        self.w.ncols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.nrows() != 4 * h || self.w.nrows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::ShapeMismatch(format!(
                "LSTM layer shapes w {:?}, u {:?}, b {} are inconsistent",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Gate activations for one step given the input contribution `wx = W x`.
    fn gates(&self, wx: ArrayView1<f64>, h: ArrayView1<f64>) -> Array1<f64> {
        let hd = self.hidden();
        let mut z = &wx + &self.u.dot(&h) + &self.b;
        z.slice_mut(s![..2 * hd]).mapv_inplace(sigmoid);
        z.slice_mut(s![2 * hd..3 * hd]).mapv_inplace(f64::tanh);
        z.slice_mut(s![3 * hd..]).mapv_inplace(sigmoid);
        z
    }

    /// One cell update: returns `(h', c')`.
    pub fn step(
        &self,
        x: ArrayView1<f64>,
        h: ArrayView1<f64>,
        c: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check_shapes()?;
        let hd = self.hidden();
        if x.len() != self.input() || h.len() != hd || c.len() != hd {
            return Err(Error::ShapeMismatch(format!(
                "step got x {}, h {}, c {} for a {}->{} layer",
                x.len(),
                h.len(),
                c.len(),
                self.input(),
                hd
            )));
        }
        let act = self.gates(self.w.dot(&x).view(), h);
        let (i, f, g, o) = split_gates(act.view(), hd);
        let c_next = &f * &c + &i * &g;
        let h_next = &o * &c_next.mapv(f64::tanh);
        Ok((h_next, c_next))
    }

    /// Runs the layer over `xs` (one row per step) from zero state.
    pub fn forward(&self, xs: ArrayView2<f64>) -> Result<LayerTrace> {
        self.check_shapes()?;
        if xs.ncols() != self.input() {
            return Err(Error::ShapeMismatch(format!(
                "layer expects inputs of width {}, got {}",
                self.input(),
                xs.ncols()
            )));
        }
        let (n, hd) = (xs.nrows(), self.hidden());
        let wx = xs.dot(&self.w.t());
        let mut gates = Array2::zeros((n, 4 * hd));
        let mut hs = Array2::zeros((n + 1, hd));
        let mut cs = Array2::zeros((n + 1, hd));
        for t in 0..n {
            let act = self.gates(wx.row(t), hs.row(t));
            let (i, f, g, o) = split_gates(act.view(), hd);
            let c = &f * &cs.row(t) + &i * &g;
            let h = &o * &c.mapv(f64::tanh);
            cs.row_mut(t + 1).assign(&c);
            hs.row_mut(t + 1).assign(&h);
            gates.row_mut(t).assign(&act);
        }
        Ok(LayerTrace {
            inputs: xs.to_owned(),
            gates,
            hs,
            cs,
        })
    }

    /// Backpropagates `dh_out` (gradient of the loss w.r.t. every emitted
    /// hidden state) through the unrolled layer. Returns the parameter
    /// gradients and the gradient w.r.t. each input row.
    pub fn backward(
        &self,
        trace: &LayerTrace,
        dh_out: ArrayView2<f64>,
    ) -> (LstmLayer, Array2<f64>) {
        let hd = self.hidden();
        let n = trace.len();
        let mut dz = Array2::zeros((n, 4 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        for t in (0..n).rev() {
            let (i, f, g, o) = split_gates(trace.gates.row(t), hd);
            let c_prev = trace.cs.row(t);
            let tanh_c = trace.cs.row(t + 1).mapv(f64::tanh);
            let dh = &dh_out.row(t) + &dh_next;
            let dc = &dc_next + &(&dh * &o * &tanh_c.mapv(|v| 1.0 - v * v));

            let mut row = dz.row_mut(t);
            row.slice_mut(s![..hd])
                .assign(&(&dc * &g * &i * &i.mapv(|v| 1.0 - v)));
            row.slice_mut(s![hd..2 * hd])
                .assign(&(&dc * &c_prev * &f * &f.mapv(|v| 1.0 - v)));
            row.slice_mut(s![2 * hd..3 * hd])
                .assign(&(&dc * &i * &g.mapv(|v| 1.0 - v * v)));
            row.slice_mut(s![3 * hd..])
                .assign(&(&dh * &tanh_c * &o * &o.mapv(|v| 1.0 - v)));

            dh_next = self.u.t().dot(&dz.row(t));
            dc_next = &dc * &f;
        }
        let h_prev = trace.hs.slice(s![..n, ..]);
        let grads = LstmLayer {
            w: dz.t().dot(&trace.inputs),
            u: dz.t().dot(&h_prev),
            b: dz.sum_axis(Axis(0)),
        };
        let dx = dz.dot(&self.w);
        (grads, dx)
    }
}

fn split_gates(
    act: ArrayView1<f64>,
    hd: usize,
) -> (
    ArrayView1<f64>,
    ArrayView1<f64>,
    ArrayView1<f64>,
    ArrayView1<f64>,
) {
    (
        act.slice_move(s![..hd]),
        act.slice_move(s![hd..2 * hd]),
        act.slice_move(s![2 * hd..3 * hd]),
        act.slice_move(s![3 * hd..]),
    )
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    inputs: Array2<f64>,
    /// Post-activation gates per step.
    gates: Array2<f64>,
    /// Hidden states; row 0 is the zero initial state, row t+1 follows step t.
    hs: Array2<f64>,
    cs: Array2<f64>,
}

impl LayerTrace {
    pub fn len(&self) -> usize {
        self.gates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Emitted hidden states, one row per step.
    pub fn outputs(&self) -> ArrayView2<'_, f64> {
        self.hs.slice(s![1.., ..])
    }

    pub fn last_hidden(&self) -> ArrayView1<'_, f64> {
        self.hs.row(self.len())
    }
}
