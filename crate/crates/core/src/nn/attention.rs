//! Single-head self-attention over spatial positions, pre-normalized and
//! residual. The output projection is zero-initialized so a fresh block
//! starts as the identity.

use ndarray::{Array2, Array3};
use rand::Rng;

use super::conv::Conv2d;
use super::norm::{GnCache, GroupNorm};
use super::params::{Grads, Init, ParamSet};

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub gn: GroupNorm,
    pub qkv: Conv2d,
    pub proj: Conv2d,
    pub ch: usize,
}

#[derive(Debug)]
pub struct AttnCache {
    x: Array3<f64>,
    gn_cache: GnCache,
    col_qkv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    col_proj: Array2<f64>,
}

impl AttentionBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        ch: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gn = GroupNorm::new(ps, &format!("{name}.norm"), groups, ch, true, rng);
        let qkv = Conv2d::new(
            ps,
            &format!("{name}.qkv"),
            ch,
            3 * ch,
            1,
            1,
            0,
            Init::Kaiming { fan_in: ch },
            rng,
        );
        let proj = Conv2d::new(
            ps,
            &format!("{name}.proj"),
            ch,
            ch,
            1,
            1,
            0,
            Init::Zero,
            rng,
        );
        Self { gn, qkv, proj, ch }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Array3<f64>) -> (Array3<f64>, AttnCache) {
        let (c, hh, ww) = x.dim();
        let n = hh * ww;
        let (h, gn_cache) = self.gn.forward(ps, x);
        let (qkv3, col_qkv) = self.qkv.forward(ps, &h);
        let qkv2 = qkv3.into_shape_with_order((3 * c, n)).unwrap();
        let q = qkv2.slice(ndarray::s![0..c, ..]).to_owned();
        let k = qkv2.slice(ndarray::s![c..2 * c, ..]).to_owned();
        let v = qkv2.slice(ndarray::s![2 * c..3 * c, ..]).to_owned();

        let scale = 1.0 / (c as f64).sqrt();
        let mut scores = q.t().dot(&k);
        scores.mapv_inplace(|s| s * scale);
        // row softmax
        let mut attn = scores;
        for mut row in attn.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|s| (s - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|s| s / sum);
        }
        let out2 = v.dot(&attn.t());
        let out = out2.into_shape_with_order((c, hh, ww)).unwrap();
        let (y, col_proj) = self.proj.forward(ps, &out);
        let result = x + &y;
        (
            result,
            AttnCache {
                x: x.clone(),
                gn_cache,
                col_qkv,
                q,
                k,
                v,
                attn,
                col_proj,
            },
        )
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        cache: &AttnCache,
        gout: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let (c, hh, ww) = cache.x.dim();
        let n = hh * ww;
        let g_out3 = self
            .proj
            .backward(ps, &cache.col_proj, (hh, ww), gout, grads);
        let g_out2 = g_out3.into_shape_with_order((c, n)).unwrap();

        // out = v . attn^T
        let g_v = g_out2.dot(&cache.attn);
        let g_attn = g_out2.t().dot(&cache.v);

        // softmax rows backward
        let mut g_scores = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let a = cache.attn.row(i);
            let ga = g_attn.row(i);
            let dot: f64 = a.iter().zip(ga.iter()).map(|(av, gv)| av * gv).sum();
            let mut gs = g_scores.row_mut(i);
            ndarray::Zip::from(&mut gs).and(&a).and(&ga).for_each(|o, &av, &gv| {
                *o = av * (gv - dot);
            });
        }
        let scale = 1.0 / (c as f64).sqrt();
        let g_q = cache.k.dot(&g_scores.t()).mapv(|v| v * scale);
        let g_k = cache.q.dot(&g_scores).mapv(|v| v * scale);

        let mut g_qkv2 = Array2::<f64>::zeros((3 * c, n));
        g_qkv2.slice_mut(ndarray::s![0..c, ..]).assign(&g_q);
        g_qkv2.slice_mut(ndarray::s![c..2 * c, ..]).assign(&g_k);
        g_qkv2.slice_mut(ndarray::s![2 * c..3 * c, ..]).assign(&g_v);
        let g_qkv3 = g_qkv2.into_shape_with_order((3 * c, hh, ww)).unwrap();

        let g_h = self
            .qkv
            .backward(ps, &cache.col_qkv, (hh, ww), &g_qkv3, grads);
        let g_x = self
            .gn
            .backward(ps, &cache.x, &cache.gn_cache, &g_h, grads);
        gout + &g_x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand_distr::StandardNormal;

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = substream(41, "attn-fd");
        let mut ps = ParamSet::new();
        let attn = AttentionBlock::new(&mut ps, "attn", 4, 2, &mut rng);
        // move every parameter (including the zero-init projection) to a
        // generic point so all gradient paths are active
        for i in 0..ps.len() {
            for v in ps.value_mut(super::super::params::ParamId(i)).iter_mut() {
                *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let x = Array3::from_shape_fn((4, 3, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let probe = Array3::from_shape_fn((4, 3, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let loss = |ps: &ParamSet, x: &Array3<f64>| (attn.forward(ps, x).0 * &probe).sum();

        let (_, cache) = attn.forward(&ps, &x);
        let mut grads = Grads::zeros_like(&ps);
        let gx = attn.backward(&ps, &cache, &probe, &mut grads);

        let h = 1e-6;
        for idx in [(0, 0, 0), (2, 1, 2), (3, 2, 2)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&ps, &xp) - loss(&ps, &xm)) / (2.0 * h);
            assert!(
                (gx[idx] - fd).abs() < 1e-5,
                "{:?}: {} vs {}",
                idx,
                gx[idx],
                fd
            );
        }
        // a parameter from each sub-layer
        for pid in [attn.qkv.w, attn.proj.w, attn.gn.affine.unwrap().0] {
            let flat = 1usize;
            let mut psp = ps.clone();
            psp.value_mut(pid).as_slice_mut().unwrap()[flat] += h;
            let mut psm = ps.clone();
            psm.value_mut(pid).as_slice_mut().unwrap()[flat] -= h;
            let fd = (loss(&psp, &x) - loss(&psm, &x)) / (2.0 * h);
            let got = grads.get(pid).as_slice().unwrap()[flat];
            assert!(
                (got - fd).abs() < 1e-5,
                "{}: {} vs {}",
                ps.name(pid),
                got,
                fd
            );
        }
    }
}
