//! Elementwise activations, resampling, embeddings and losses with their
//! backward passes.

use ndarray::{Array1, Array3};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// x * sigmoid(x)
pub fn silu<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    x.mapv(|v| v * sigmoid(v))
}

/// Gradient of silu wrt its input, given that input.
pub fn silu_backward<D: ndarray::Dimension>(
    x: &ndarray::Array<f64, D>,
    gout: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut g = gout.clone();
    g.zip_mut_with(x, |gv, &xv| {
        let s = sigmoid(xv);
        *gv *= s * (1.0 + xv * (1.0 - s));
    });
    g
}

/// Nearest-neighbour 2x upsample over the spatial dims of [C, H, W].
pub fn upsample_nearest2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, i, j)| x[[ci, i / 2, j / 2]])
}

/// Backward of nearest 2x upsample: sum the 2x2 output cells per input cell.
pub fn upsample_nearest2_backward(gout: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = gout.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut g = Array3::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                g[[ci, i / 2, j / 2]] += gout[[ci, i, j]];
            }
        }
    }
    g
}

/// Sinusoidal timestep encoding of even dimension `dim`: the first half
/// holds cosines, the second half sines, over log-spaced frequencies.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Array1<f64> {
    assert!(dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    let max_period: f64 = 10_000.0;
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.cos();
        out[half + i] = arg.sin();
    }
    out
}

/// Mean squared error over all elements, plus gradient wrt the prediction.
pub fn mse(pred: &Array3<f64>, target: &Array3<f64>) -> (f64, Array3<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    let grad = diff.mapv(|v| 2.0 * v / n);
    (loss, grad)
}

/// Softmax cross-entropy for a single logit vector; returns the loss and
/// the gradient wrt the logits.
pub fn softmax_cross_entropy(logits: &Array1<f64>, target: usize) -> (f64, Array1<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum: f64 = exps.sum();
    let probs = exps.mapv(|v| v / sum);
    let loss = -(probs[target].max(1e-300)).ln();
    let mut grad = probs;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Binary cross-entropy on a single logit; target is 0.0 or 1.0. Returns
/// (loss, dloss/dlogit), computed in the numerically stable form.
pub fn bce_with_logit(logit: f64, target: f64) -> (f64, f64) {
    // log(1 + exp(-|x|)) + max(x, 0) - x*t
    let loss = (-logit.abs()).exp().ln_1p() + logit.max(0.0) - logit * target;
    let grad = sigmoid(logit) - target;
    (loss, grad)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn silu_gradient_matches_finite_differences() {
        let x = array![[-2.0, -0.5], [0.0, 1.7]];
        let gout = array![[1.0, 1.0], [1.0, 1.0]];
        let g = silu_backward(&x, &gout);
        let h = 1e-6;
        for idx in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (silu(&xp).sum() - silu(&xm).sum()) / (2.0 * h);
            assert!((g[idx] - fd).abs() < 1e-8, "{:?}: {} vs {}", idx, g[idx], fd);
        }
    }

    #[test]
    fn upsample_round_trip_shapes_and_adjoint() {
        let x = Array3::from_shape_fn((2, 3, 3), |(c, i, j)| (c * 9 + i * 3 + j) as f64);
        let up = upsample_nearest2(&x);
        assert_eq!(up.dim(), (2, 6, 6));
        assert_eq!(up[[1, 5, 5]], x[[1, 2, 2]]);
        // adjoint identity: <up(x), y> == <x, up_backward(y)>
        let y = Array3::from_shape_fn((2, 6, 6), |(c, i, j)| ((c + i * 7 + j * 3) % 5) as f64);
        let lhs: f64 = (&up * &y).sum();
        let rhs: f64 = (&x * &upsample_nearest2_backward(&y)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_distinct_and_finite() {
        let a = sinusoidal_embedding(1, 16);
        let b = sinusoidal_embedding(2, 16);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_ne!(a, b);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0);
    }

    #[test]
    fn mse_and_ce_gradients() {
        let p = Array3::from_shape_fn((1, 2, 2), |(_, i, j)| (i + j) as f64 * 0.3);
        let t = Array3::zeros((1, 2, 2));
        let (loss, grad) = mse(&p, &t);
        assert!(loss >= 0.0);
        let h = 1e-6;
        let mut pp = p.clone();
        pp[[0, 1, 1]] += h;
        let (lp, _) = mse(&pp, &t);
        let fd = (lp - loss) / h;
        assert!((grad[[0, 1, 1]] - fd).abs() < 1e-5);

        let logits = array![0.2, -1.0, 0.5];
        let (l, g) = softmax_cross_entropy(&logits, 2);
        assert!(l > 0.0);
        let mut lp2 = logits.clone();
        lp2[0] += h;
        let (l2, _) = softmax_cross_entropy(&lp2, 2);
        assert!((g[0] - (l2 - l) / h).abs() < 1e-5);

        let (l, g) = bce_with_logit(0.7, 1.0);
        let (l2, _) = bce_with_logit(0.7 + h, 1.0);
        assert!((g - (l2 - l) / h).abs() < 1e-5);
        assert!(l > 0.0);
        // boundary: zero logit gives probability one half
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }
}
