//! Scalar-loop reference implementations used as test oracles. Nothing here
//! shares code with the vectorized paths it checks.

use crate::autoencoder::AutoencoderParams;
use crate::lstm::LstmLayer;

pub(crate) fn reference_step(
    p: &LstmLayer,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let pre = |gate: usize, k: usize| {
        let r = gate * hd + k;
        let mut z = p.b[r];
        for (j, xj) in x.iter().enumerate() {
            z += p.w[[r, j]] * xj;
        }
        for (j, hj) in h.iter().enumerate() {
            z += p.u[[r, j]] * hj;
        }
        z
    };
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut h2 = vec![0.0; hd];
    let mut c2 = vec![0.0; hd];
    for k in 0..hd {
        let i = sig(pre(0, k));
        let f = sig(pre(1, k));
        let g = pre(2, k).tanh();
        let o = sig(pre(3, k));
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

fn run_layer(p: &LstmLayer, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let hd = p.u.ncols();
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    let mut out = Vec::new();
    for x in xs {
        (h, c) = reference_step(p, x, &h, &c);
        out.push(h.clone());
    }
    out
}

pub(crate) fn reference_encode(p: &AutoencoderParams, seq: &[Vec<f64>]) -> Vec<f64> {
    let l1 = run_layer(&p.encoder[0], seq);
    run_layer(&p.encoder[1], &l1).pop().unwrap()
}

/// Decoder emissions in step order.
pub(crate) fn reference_decode(p: &AutoencoderParams, context: &[f64], n: usize) -> Vec<Vec<f64>> {
    let inputs = vec![context.to_vec(); n];
    let l1 = run_layer(&p.decoder[0], &inputs);
    let l2 = run_layer(&p.decoder[1], &l1);
    l2.iter()
        .map(|h| {
            (0..p.out_b.len())
                .map(|d| p.out_b[d] + (0..h.len()).map(|k| p.out_w[[d, k]] * h[k]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Sum over t of |F(t) - emission(N - t + 1)|^2, 1-based as written.
pub(crate) fn reference_loss(target: &[Vec<f64>], emissions: &[Vec<f64>]) -> f64 {
    let n = target.len();
    let mut total = 0.0;
    for t in 1..=n {
        let f = &target[t - 1];
        let e = &emissions[n - t];
        total += f.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    total
}
