//! Sequence autoencoder: a two-layer LSTM encoder summarizes a clip into its
//! final hidden state, and a two-layer LSTM decoder fed that same context at
//! every step emits the clip back in reverse order through an affine readout.
//!
//! Decoder emission `s` (0-based) is compared with input frame `N - 1 - s`, so
//! the reconstruction loss of a clip is
//!
//! ```text
//! L = sum_t |F(t) - emission(N - t + 1)|^2      (t = 1..N)
//! ```
//!
//! Training uses exactly this sum; [`anomaly_score`] divides it by `N * D`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::lstm::LstmLayer;

pub const TENSOR_NAMES: [&str; 14] = [
    "encoder.0.w",
    "encoder.0.u",
    "encoder.0.b",
    "encoder.1.w",
    "encoder.1.u",
    "encoder.1.b",
    "decoder.0.w",
    "decoder.0.u",
    "decoder.0.b",
    "decoder.1.w",
    "decoder.1.u",
    "decoder.1.b",
    "output.w",
    "output.b",
];

/// Weights of both LSTM stacks and the output projection. Gradients use the
/// same type.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    /// Layer 0 maps `D -> H`, layer 1 `H -> H`.
    pub encoder: [LstmLayer; 2],
    /// Both layers `H -> H`; layer 0 receives the context at every step.
    pub decoder: [LstmLayer; 2],
    /// `D x H` readout from the top decoder layer.
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl AutoencoderParams {
    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        Self {
            encoder: [
                LstmLayer::zeros(feature_dim, hidden),
                LstmLayer::zeros(hidden, hidden),
            ],
            decoder: [
                LstmLayer::zeros(hidden, hidden),
                LstmLayer::zeros(hidden, hidden),
            ],
            out_w: Array2::zeros((feature_dim, hidden)),
            out_b: Array1::zeros(feature_dim),
        }
    }

    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` initialization of every tensor.
    pub fn init<R: Rng>(feature_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let encoder = [
            LstmLayer::uniform(feature_dim, hidden, rng),
            LstmLayer::uniform(hidden, hidden, rng),
        ];
        let decoder = [
            LstmLayer::uniform(hidden, hidden, rng),
            LstmLayer::uniform(hidden, hidden, rng),
        ];
        let k = 1.0 / (hidden as f64).sqrt();
        let out_w =
            Array2::from_shape_simple_fn((feature_dim, hidden), || rng.random_range(-k..=k));
        let out_b = Array1::from_shape_simple_fn(feature_dim, || rng.random_range(-k..=k));
        Self {
            encoder,
            decoder,
            out_w,
            out_b,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.out_w.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.out_w.ncols()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (d, h) = (self.feature_dim(), self.hidden());
        let layers = self.encoder.iter().chain(&self.decoder);
        let expected_inputs = [d, h, h, h];
        for (layer, &input) in layers.zip(&expected_inputs) {
            layer.check_shapes()?;
            if layer.input() != input || layer.hidden() != h {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}->{} does not fit an autoencoder with D={d}, H={h}",
                    layer.input(),
                    layer.hidden()
                )));
            }
        }
        if self.out_b.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "output bias has {} entries, expected {d}",
                self.out_b.len()
            )));
        }
        Ok(())
    }

    /// All tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [ArrayViewD<'_, f64>; 14] {
        let [e0, e1] = &self.encoder;
        let [d0, d1] = &self.decoder;
        [
            e0.w.view().into_dyn(),
            e0.u.view().into_dyn(),
            e0.b.view().into_dyn(),
            e1.w.view().into_dyn(),
            e1.u.view().into_dyn(),
            e1.b.view().into_dyn(),
            d0.w.view().into_dyn(),
            d0.u.view().into_dyn(),
            d0.b.view().into_dyn(),
            d1.w.view().into_dyn(),
            d1.u.view().into_dyn(),
            d1.b.view().into_dyn(),
            self.out_w.view().into_dyn(),
            self.out_b.view().into_dyn(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [ArrayViewMutD<'_, f64>; 14] {
        let [e0, e1] = &mut self.encoder;
        let [d0, d1] = &mut self.decoder;
        [
            e0.w.view_mut().into_dyn(),
            e0.u.view_mut().into_dyn(),
            e0.b.view_mut().into_dyn(),
            e1.w.view_mut().into_dyn(),
            e1.u.view_mut().into_dyn(),
            e1.b.view_mut().into_dyn(),
            d0.w.view_mut().into_dyn(),
            d0.u.view_mut().into_dyn(),
            d0.b.view_mut().into_dyn(),
            d1.w.view_mut().into_dyn(),
            d1.u.view_mut().into_dyn(),
            d1.b.view_mut().into_dyn(),
            self.out_w.view_mut().into_dyn(),
            self.out_b.view_mut().into_dyn(),
        ]
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn scaled_add(&mut self, alpha: f64, other: &Self) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, &b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for mut t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, seq: ArrayView2<f64>) -> Result<()> {
        if seq.nrows() == 0 {
            return Err(Error::ShapeMismatch("empty sequence".into()));
        }
        if seq.ncols() != self.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "sequence has {} features, model expects {}",
                seq.ncols(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// Top encoder hidden state after the last frame.
    pub fn encode(&self, seq: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_shapes()?;
        self.check_input(seq)?;
        let l0 = self.encoder[0].forward(seq)?;
        let l1 = self.encoder[1].forward(l0.outputs())?;
        Ok(l1.last_hidden().to_owned())
    }

    /// Decoder emissions in step order; emission `s` targets frame `n - 1 - s`.
    pub fn decode(&self, context: ArrayView1<f64>, n: usize) -> Result<Array2<f64>> {
        self.check_shapes()?;
        if n == 0 {
            return Err(Error::ShapeMismatch("cannot decode zero steps".into()));
        }
        if context.len() != self.hidden() {
            return Err(Error::ShapeMismatch(format!(
                "context has {} entries, expected {}",
                context.len(),
                self.hidden()
            )));
        }
        let inputs = context
            .broadcast((n, context.len()))
            .expect("row broadcast");
        let l0 = self.decoder[0].forward(inputs)?;
        let l1 = self.decoder[1].forward(l0.outputs())?;
        Ok(self.readout(l1.outputs()))
    }

    fn readout(&self, hs: ArrayView2<f64>) -> Array2<f64> {
        hs.dot(&self.out_w.t()) + &self.out_b
    }

    /// Decoder emissions (step order) for a clip.
    pub fn reconstruct(&self, seq: ArrayView2<f64>) -> Result<Array2<f64>> {
        let context = self.encode(seq)?;
        self.decode(context.view(), seq.nrows())
    }

    /// Clip loss and its exact gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, seq: ArrayView2<f64>) -> Result<(f64, AutoencoderParams)> {
        self.check_shapes()?;
        self.check_input(seq)?;
        let n = seq.nrows();
        let h = self.hidden();

        let enc0 = self.encoder[0].forward(seq)?;
        let enc1 = self.encoder[1].forward(enc0.outputs())?;
        let context = enc1.last_hidden();
        let dec_inputs = context.broadcast((n, h)).expect("row broadcast");
        let dec0 = self.decoder[0].forward(dec_inputs)?;
        let dec1 = self.decoder[1].forward(dec0.outputs())?;
        let emissions = self.readout(dec1.outputs());

        let residual = &emissions - &seq.slice(s![..;-1, ..]);
        let loss = residual.iter().map(|r| r * r).sum();
        let d_emit = residual * 2.0;

        let out_w = d_emit.t().dot(&dec1.outputs());
        let out_b = d_emit.sum_axis(Axis(0));
        let dh_top = d_emit.dot(&self.out_w);
        let (g_dec1, dx_dec1) = self.decoder[1].backward(&dec1, dh_top.view());
        let (g_dec0, dx_dec0) = self.decoder[0].backward(&dec0, dx_dec1.view());
        // The context fans out to every decoder step.
        let d_context = dx_dec0.sum_axis(Axis(0));
        let mut dh_enc1 = Array2::zeros((n, h));
        dh_enc1.row_mut(n - 1).assign(&d_context);
        let (g_enc1, dx_enc1) = self.encoder[1].backward(&enc1, dh_enc1.view());
        let (g_enc0, _) = self.encoder[0].backward(&enc0, dx_enc1.view());

        Ok((
            loss,
            AutoencoderParams {
                encoder: [g_enc0, g_enc1],
                decoder: [g_dec0, g_dec1],
                out_w,
                out_b,
            },
        ))
    }

    pub fn clip_loss_of(&self, seq: ArrayView2<f64>) -> Result<f64> {
        clip_loss(seq, self.reconstruct(seq)?.view())
    }
}

/// `sum_t |F(t) - emissions(N - t + 1)|^2`: the first frame is matched with
/// the last emission.
pub fn clip_loss(target: ArrayView2<f64>, emissions: ArrayView2<f64>) -> Result<f64> {
    if target.dim() != emissions.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs emissions {:?}",
            target.dim(),
            emissions.dim()
        )));
    }
    let n = target.nrows();
    let mut total = 0.0;
    for t in 0..n {
        let diff = &target.row(t) - &emissions.row(n - 1 - t);
        total += diff.dot(&diff);
    }
    Ok(total)
}

/// Reconstruction loss per element, `clip_loss / (N * D)`.
pub fn anomaly_score(clip: &FeatureSequence, params: &AutoencoderParams) -> Result<f64> {
    let loss = params.clip_loss_of(clip.view())?;
    Ok(loss / (clip.len() * clip.dim()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{reference_decode, reference_encode, reference_loss};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
    }

    fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
        a.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let f = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let reversed = f.slice(s![..;-1, ..]).to_owned();
        assert_eq!(clip_loss(f.view(), reversed.view()).unwrap(), 0.0);
    }

    #[test]
    fn single_frame_loss() {
        assert_eq!(
            clip_loss(array![[1.0, 0.0]].view(), array![[0.0, 0.0]].view()).unwrap(),
            1.0
        );
    }

    #[test]
    fn two_frame_loss_pairs_in_reverse() {
        let f = array![[1.0], [0.0]];
        let e = array![[0.0], [0.0]];
        assert_eq!(clip_loss(f.view(), e.view()).unwrap(), 1.0);
        // Only the first frame's target is wrong: emission 2 is compared with F(1).
        let e = array![[0.0], [1.0]];
        assert_eq!(clip_loss(f.view(), e.view()).unwrap(), 0.0);
    }

    #[test]
    fn loss_shape_mismatch() {
        assert!(clip_loss(array![[1.0, 0.0]].view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn loss_is_order_sensitive() {
        let f = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let e = f.slice(s![..;-1, ..]).to_owned();
        let shuffled = array![[0.0, 1.0], [1.0, 0.0], [0.6, 0.8]];
        assert_eq!(clip_loss(f.view(), e.view()).unwrap(), 0.0);
        assert!(clip_loss(shuffled.view(), e.view()).unwrap() > 0.0);
        // forward-order alignment would be wrong
        assert!(clip_loss(f.view(), f.view()).unwrap() > 0.0);
    }

    #[test]
    fn zero_params_give_zero_context_and_zero_output() {
        let p = AutoencoderParams::zeros(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = random_seq(5, 3, &mut rng);
        assert!(p.encode(seq.view()).unwrap().iter().all(|&v| v == 0.0));
        assert!(p
            .decode(Array1::zeros(4).view(), 5)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn encode_decode_match_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for n in 1..5 {
            let p = AutoencoderParams::init(3, 4, &mut rng);
            let seq = random_seq(n, 3, &mut rng);
            let ctx = p.encode(seq.view()).unwrap();
            let rctx = reference_encode(&p, &rows(&seq));
            for (a, b) in ctx.iter().zip(&rctx) {
                assert!((a - b).abs() < 1e-12);
            }
            let out = p.decode(ctx.view(), n).unwrap();
            let rout = reference_decode(&p, &rctx, n);
            for (a, b) in out.iter().zip(rout.iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
            let loss = p.clip_loss_of(seq.view()).unwrap();
            assert!((loss - reference_loss(&rows(&seq), &rout)).abs() < 1e-12);
        }
    }

    #[test]
    fn appending_a_frame_changes_the_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = AutoencoderParams::init(3, 4, &mut rng);
        let seq = random_seq(4, 3, &mut rng);
        let longer = ndarray::concatenate![Axis(0), seq, random_seq(1, 3, &mut rng)];
        let a = p.encode(seq.view()).unwrap();
        let b = p.encode(longer.view()).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
        let r = reference_encode(&p, &rows(&longer));
        assert!(b.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn shape_errors() {
        let p = AutoencoderParams::zeros(3, 4);
        assert!(p.encode(Array2::zeros((2, 5)).view()).is_err());
        assert!(p.encode(Array2::zeros((0, 3)).view()).is_err());
        assert!(p.decode(Array1::zeros(3).view(), 2).is_err());
        assert!(p.decode(Array1::zeros(4).view(), 0).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_output_gradient() {
        let mut p = AutoencoderParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(1));
        let row = [0.6, 0.0, 0.8];
        p.out_w.fill(0.0);
        p.out_b = Array1::from(row.to_vec());
        let seq = Array2::from_shape_fn((4, 3), |(_, j)| row[j]);
        let (loss, g) = p.loss_and_gradients(seq.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.out_w.iter().chain(g.out_b.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn severed_context_gives_zero_encoder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = AutoencoderParams::init(3, 4, &mut rng);
        p.decoder[0].w.fill(0.0);
        let seq = random_seq(5, 3, &mut rng);
        let (loss, g) = p.loss_and_gradients(seq.view()).unwrap();
        assert!(loss > 0.0);
        for layer in &g.encoder {
            assert!(layer
                .w
                .iter()
                .chain(layer.u.iter())
                .chain(layer.b.iter())
                .all(|&v| v == 0.0));
        }
        assert!(g.decoder[1].w.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn scores_are_per_element() {
        let p = AutoencoderParams::zeros(2, 3);
        let seq = FeatureSequence::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(anomaly_score(&seq, &p).unwrap(), 0.5);
    }

    #[test]
    fn tensor_names_line_up() {
        let p = AutoencoderParams::zeros(5, 3);
        let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes[0], vec![12, 5]);
        assert_eq!(shapes[1], vec![12, 3]);
        assert_eq!(shapes[12], vec![5, 3]);
        assert_eq!(shapes[13], vec![5]);
        assert_eq!(
            p.num_params(),
            12 * 5 + 12 * 3 + 12 + 3 * (12 * 3 + 12 * 3 + 12) + 15 + 5
        );
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_zero_only_on_reversal(
            vals in prop::collection::vec(-2f64..2.0, 12),
            noise in prop::collection::vec(-1f64..1.0, 12),
        ) {
            let f = Array2::from_shape_vec((4, 3), vals).unwrap();
            let rev = f.slice(s![..;-1, ..]).to_owned();
            prop_assert_eq!(clip_loss(f.view(), rev.view()).unwrap(), 0.0);
            let e = &rev + &Array2::from_shape_vec((4, 3), noise.clone()).unwrap();
            let loss = clip_loss(f.view(), e.view()).unwrap();
            prop_assert!(loss >= 0.0);
            if noise.iter().any(|&x| x != 0.0) {
                prop_assert!(loss > 0.0);
            }
        }
    }
}
