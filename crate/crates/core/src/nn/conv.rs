//! 2D convolution via im2col and matrix multiply. Weights are stored as
//! [out_ch, in_ch*k*k] so the forward pass is a single gemm.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use super::params::{Grads, Init, ParamId, ParamSet};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.register(format!("{name}.w"), &[out_ch, in_ch * k * k], init, rng);
        let b = ps.register(format!("{name}.b"), &[out_ch], Init::Zero, rng);
        Self {
            w,
            b,
            in_ch,
            out_ch,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let k = self.k;
        let mut col = Array2::<f64>::zeros((c * k * k, oh * ow));
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let mut col_row = col.row_mut(row);
                    for oi in 0..oh {
                        let si = (oi * self.stride + ki) as isize - self.pad as isize;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let sj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            col_row[oi * ow + oj] = x[[ci, si as usize, sj as usize]];
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, gcol: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
        let c = self.in_ch;
        let (oh, ow) = self.out_hw(h, w);
        let k = self.k;
        let mut gx = Array3::<f64>::zeros((c, h, w));
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let gcol_row = gcol.row(row);
                    for oi in 0..oh {
                        let si = (oi * self.stride + ki) as isize - self.pad as isize;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let sj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            gx[[ci, si as usize, sj as usize]] += gcol_row[oi * ow + oj];
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&self, ps: &ParamSet, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (_, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let col = self.im2col(x);
        let w2 = ps
            .value(self.w)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let mut out2 = w2.dot(&col);
        let b = ps.value(self.b);
        for (mut row, bv) in out2.rows_mut().into_iter().zip(b.iter()) {
            row.mapv_inplace(|v| v + bv);
        }
        let out = out2.into_shape_with_order((self.out_ch, oh, ow)).unwrap();
        (out, col)
    }

    /// Backward pass. `col` is the im2col matrix saved by `forward`.
    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        ps: &ParamSet,
        col: &Array2<f64>,
        in_hw: (usize, usize),
        gout: &Array3<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let (oc, oh, ow) = gout.dim();
        let gout2 = gout.view().into_shape_with_order((oc, oh * ow)).unwrap();

        {
            let gw = grads.get_mut(self.w);
            let mut gw2 = gw.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            ndarray::linalg::general_mat_mul(1.0, &gout2, &col.t(), 1.0, &mut gw2);
        }
        {
            let gb = grads.get_mut(self.b);
            let mut gb1 = gb.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            gb1 += &gout2.sum_axis(ndarray::Axis(1));
        }
        let w2 = ps
            .value(self.w)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let gcol = w2.t().dot(&gout2);
        self.col2im(&gcol, in_hw.0, in_hw.1)
    }
}

/// Fully-connected layer on 1D vectors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.register(format!("{name}.w"), &[out_dim, in_dim], init, rng);
        let b = ps.register(format!("{name}.b"), &[out_dim], Init::Zero, rng);
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, ps: &ParamSet, x: &Array1<f64>) -> Array1<f64> {
        let w = ps
            .value(self.w)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let b = ps
            .value(self.b)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        w.dot(x) + b
    }

    pub fn backward(
        &self,
        ps: &ParamSet,
        x: &Array1<f64>,
        gout: &Array1<f64>,
        grads: &mut Grads,
    ) -> Array1<f64> {
        {
            let gw = grads.get_mut(self.w);
            let mut gw2 = gw.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            for (i, &go) in gout.iter().enumerate() {
                if go != 0.0 {
                    let mut row = gw2.row_mut(i);
                    row.zip_mut_with(x, |r, &xv| *r += go * xv);
                }
            }
        }
        {
            let gb = grads.get_mut(self.b);
            let mut gb1 = gb.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            gb1 += gout;
        }
        let w = ps
            .value(self.w)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        w.t().dot(gout)
    }
}
