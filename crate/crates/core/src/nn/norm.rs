//! Group normalization over [C, H, W] activations, with optional learned
//! per-channel affine, plus the adaptive scale-shift used to inject
//! condition embeddings.

use ndarray::{Array1, Array3};
use rand::Rng;

use super::params::{Grads, Init, ParamId, ParamSet};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub groups: usize,
    pub ch: usize,
    /// (gamma, beta) when the layer owns an affine transform.
    pub affine: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
pub struct GnCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl GroupNorm {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        groups: usize,
        ch: usize,
        affine: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(ch % groups == 0, "channels {ch} not divisible by groups {groups}");
        let affine = if affine {
            let g = ps.register(format!("{name}.gamma"), &[ch], Init::One, rng);
            let b = ps.register(format!("{name}.beta"), &[ch], Init::Zero, rng);
            Some((g, b))
        } else {
            None
        };
        Self { groups, ch, affine }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Array3<f64>) -> (Array3<f64>, GnCache) {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.ch);
        let cs = c / self.groups;
        let n = (cs * h * w) as f64;
        let mut out = x.clone();
        let mut mean = Vec::with_capacity(self.groups);
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let slice = ndarray::s![g * cs..(g + 1) * cs, .., ..];
            let xg = x.slice(slice);
            let m = xg.sum() / n;
            let var = xg.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            out.slice_mut(slice).mapv_inplace(|v| (v - m) * is);
            mean.push(m);
            inv_std.push(is);
        }
        if let Some((gid, bid)) = self.affine {
            let gamma = ps.value(gid);
            let beta = ps.value(bid);
            for ci in 0..c {
                let (gv, bv) = (gamma[[ci]], beta[[ci]]);
                out.index_axis_mut(ndarray::Axis(0), ci)
                    .mapv_inplace(|v| v * gv + bv);
            }
        }
        (out, GnCache { mean, inv_std })
    }

    /// Backward pass; needs the forward input `x` and its cache.
    pub fn backward(
        &self,
        ps: &ParamSet,
        x: &Array3<f64>,
        cache: &GnCache,
        gout: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let (c, h, w) = x.dim();
        let cs = c / self.groups;
        let n = (cs * h * w) as f64;

        // gradient wrt the normalized tensor, and affine gradients
        let mut gxhat = gout.clone();
        if let Some((gid, bid)) = self.affine {
            let gamma = ps.value(gid).clone();
            {
                // dgamma_c = sum over spatial of gout * xhat; dbeta_c = sum gout
                let ggamma = grads.get_mut(gid);
                for ci in 0..c {
                    let g = ci / cs;
                    let (m, is) = (cache.mean[g], cache.inv_std[g]);
                    let go = gout.index_axis(ndarray::Axis(0), ci);
                    let xi = x.index_axis(ndarray::Axis(0), ci);
                    let s: f64 = go
                        .iter()
                        .zip(xi.iter())
                        .map(|(gv, xv)| gv * (xv - m) * is)
                        .sum();
                    ggamma[[ci]] += s;
                }
                let gbeta = grads.get_mut(bid);
                for ci in 0..c {
                    gbeta[[ci]] += gout.index_axis(ndarray::Axis(0), ci).sum();
                }
            }
            for ci in 0..c {
                let gv = gamma[[ci]];
                gxhat
                    .index_axis_mut(ndarray::Axis(0), ci)
                    .mapv_inplace(|v| v * gv);
            }
        }

        // per-group backward through normalization
        let mut gx = Array3::<f64>::zeros((c, h, w));
        for g in 0..self.groups {
            let slice = ndarray::s![g * cs..(g + 1) * cs, .., ..];
            let xg = x.slice(slice);
            let gh = gxhat.slice(slice);
            let (m, is) = (cache.mean[g], cache.inv_std[g]);
            let sum_gh: f64 = gh.sum();
            let sum_gh_xhat: f64 = gh
                .iter()
                .zip(xg.iter())
                .map(|(gv, xv)| gv * (xv - m) * is)
                .sum();
            let mut gxg = gx.slice_mut(slice);
            ndarray::Zip::from(&mut gxg).and(&gh).and(&xg).for_each(
                |o, &gv, &xv| {
                    let xhat = (xv - m) * is;
                    *o = is * (gv - sum_gh / n - xhat * sum_gh_xhat / n);
                },
            );
        }
        gx
    }
}

/// Adaptive scale-shift: y[c] = x[c] * (1 + scale[c]) + shift[c], where
/// scale/shift come from a condition embedding projection.
pub fn scale_shift(x: &Array3<f64>, scale: &Array1<f64>, shift: &Array1<f64>) -> Array3<f64> {
    let mut out = x.clone();
    for (ci, mut plane) in out.axis_iter_mut(ndarray::Axis(0)).enumerate() {
        let (s, b) = (1.0 + scale[ci], shift[ci]);
        plane.mapv_inplace(|v| v * s + b);
    }
    out
}

/// Backward of [`scale_shift`]; returns (gx, gscale, gshift).
pub fn scale_shift_backward(
    x: &Array3<f64>,
    scale: &Array1<f64>,
    gout: &Array3<f64>,
) -> (Array3<f64>, Array1<f64>, Array1<f64>) {
    let c = x.dim().0;
    let mut gx = gout.clone();
    let mut gscale = Array1::zeros(c);
    let mut gshift = Array1::zeros(c);
    for ci in 0..c {
        let go = gout.index_axis(ndarray::Axis(0), ci);
        let xi = x.index_axis(ndarray::Axis(0), ci);
        gscale[ci] = go.iter().zip(xi.iter()).map(|(g, x)| g * x).sum();
        gshift[ci] = go.sum();
        gx.index_axis_mut(ndarray::Axis(0), ci)
            .mapv_inplace(|v| v * (1.0 + scale[ci]));
    }
    (gx, gscale, gshift)
}
