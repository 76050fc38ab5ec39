//! The conditional noise predictor: a residual encoder-decoder over the
//! image grid with attention at configured resolutions. Timestep and class
//! enter through adaptive group normalization; the null class row supports
//! unconditional prediction for classifier-free guidance.

pub mod checkpoint;

use ndarray::{Array1, Array2, Array3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::label::ClassLabel;
use crate::nn::attention::AttnCache;
use crate::nn::norm::GnCache;
use crate::nn::ops;
use crate::nn::{AttentionBlock, Conv2d, Grads, GroupNorm, Init, Linear, ParamId, ParamSet};
use crate::rng;

const NORM_GROUPS: usize = 8;
pub const DENOISER_VERSION: u32 = 1;

/// Anything that predicts the noise content of a latent. The trained
/// network implements this; tests inject oracles and stubs through it.
pub trait NoisePredictor: Send + Sync {
    fn image_size(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn predict(&self, x: &Array2<f64>, t: usize, c: ClassLabel) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub image_size: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub attention_resolutions: Vec<usize>,
    pub num_res_blocks: usize,
    pub embedding_dim: usize,
    /// Glyph classes, excluding the null token.
    pub num_classes: usize,
    #[serde(with = "dropout_serde")]
    pub dropout: DropoutRate,
}

/// Dropout probability wrapper so the config stays `Eq`/hashable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutRate(pub f64);

impl Eq for DropoutRate {}

mod dropout_serde {
    use super::DropoutRate;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DropoutRate, s: S) -> Result<S::Ok, S::Error> {
        v.0.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DropoutRate, D::Error> {
        Ok(DropoutRate(f64::deserialize(d)?))
    }
}

impl DenoiserConfig {
    /// Desk-scale default sized for 64x64 glyphs.
    pub fn default_for(image_size: usize, num_classes: usize) -> Self {
        Self {
            image_size,
            base_channels: 64,
            channel_multipliers: vec![1, 2, 3, 4],
            attention_resolutions: vec![16, 8],
            num_res_blocks: 2,
            embedding_dim: 256,
            num_classes,
            dropout: DropoutRate(0.0),
        }
    }

    pub fn stages(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::InvalidConfig(m));
        if self.channel_multipliers.is_empty() {
            return fail("channel_multipliers must be non-empty".into());
        }
        let down_factor = 1usize << (self.stages() - 1);
        if self.image_size == 0 || self.image_size % down_factor != 0 {
            return fail(format!(
                "image_size {} not divisible by 2^(stages-1) = {down_factor}",
                self.image_size
            ));
        }
        if self.image_size / down_factor < 2 {
            return fail(format!("image_size {} too small for {} stages", self.image_size, self.stages()));
        }
        if self.num_classes == 0 {
            return fail("num_classes must be >= 1".into());
        }
        if self.base_channels == 0 || self.base_channels % NORM_GROUPS != 0 {
            return fail(format!(
                "base_channels {} must be a positive multiple of {NORM_GROUPS}",
                self.base_channels
            ));
        }
        if self.channel_multipliers.iter().any(|&m| m == 0) {
            return fail("channel multipliers must be positive".into());
        }
        if self.embedding_dim == 0 || self.embedding_dim % 2 != 0 {
            return fail(format!(
                "embedding_dim {} must be positive and even",
                self.embedding_dim
            ));
        }
        if !(0.0..1.0).contains(&self.dropout.0) {
            return fail(format!("dropout {} must be in [0, 1)", self.dropout.0));
        }
        Ok(())
    }

    fn resolution(&self, stage: usize) -> usize {
        self.image_size >> stage
    }

    fn attends(&self, resolution: usize) -> bool {
        self.attention_resolutions.contains(&resolution)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().into()
    }
}

/// Residual block with adaptive group normalization.
#[derive(Debug, Clone)]
struct ResBlock {
    gn1: GroupNorm,
    conv1: Conv2d,
    emb_lin: Linear,
    gn2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    out_ch: usize,
}

struct ResCache {
    x: Array3<f64>,
    gn1c: GnCache,
    a1: Array3<f64>,
    col1: Array2<f64>,
    h1: Array3<f64>,
    ev: Array1<f64>,
    gn2c: GnCache,
    a2: Array3<f64>,
    h2: Array3<f64>,
    s2: Array3<f64>,
    drop_mask: Option<Array3<f64>>,
    col2: Array2<f64>,
    col_skip: Option<Array2<f64>>,
    hw: (usize, usize),
}

impl ResBlock {
    fn new(
        ps: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        emb_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let gn1 = GroupNorm::new(ps, &format!("{name}.norm1"), NORM_GROUPS.min(in_ch), in_ch, true, rng);
        let conv1 = Conv2d::new(
            ps,
            &format!("{name}.conv1"),
            in_ch,
            out_ch,
            3,
            1,
            1,
            Init::Kaiming { fan_in: in_ch * 9 },
            rng,
        );
        let emb_lin = Linear::new(
            ps,
            &format!("{name}.emb"),
            emb_dim,
            2 * out_ch,
            Init::Kaiming { fan_in: emb_dim },
            rng,
        );
        let gn2 = GroupNorm::new(ps, &format!("{name}.norm2"), NORM_GROUPS, out_ch, false, rng);
        let conv2 = Conv2d::new(
            ps,
            &format!("{name}.conv2"),
            out_ch,
            out_ch,
            3,
            1,
            1,
            Init::Zero,
            rng,
        );
        let skip = if in_ch != out_ch {
            Some(Conv2d::new(
                ps,
                &format!("{name}.skip"),
                in_ch,
                out_ch,
                1,
                1,
                0,
                Init::Kaiming { fan_in: in_ch },
                rng,
            ))
        } else {
            None
        };
        Self {
            gn1,
            conv1,
            emb_lin,
            gn2,
            conv2,
            skip,
            out_ch,
        }
    }

    fn forward(
        &self,
        ps: &ParamSet,
        x: &Array3<f64>,
        se: &Array1<f64>,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array3<f64>, ResCache) {
        let hw = (x.dim().1, x.dim().2);
        let (a1, gn1c) = self.gn1.forward(ps, x);
        let s1 = ops::silu(&a1);
        let (h1, col1) = self.conv1.forward(ps, &s1);
        let ev = self.emb_lin.forward(ps, se);
        let scale = ev.slice(ndarray::s![0..self.out_ch]).to_owned();
        let shift = ev.slice(ndarray::s![self.out_ch..]).to_owned();
        let (a2, gn2c) = self.gn2.forward(ps, &h1);
        let h2 = crate::nn::norm::scale_shift(&a2, &scale, &shift);
        let s2 = ops::silu(&h2);
        let (d, drop_mask) = match rng {
            Some(r) if dropout > 0.0 => {
                use rand::Rng;
                let keep = 1.0 - dropout;
                let mask = Array3::from_shape_fn(s2.dim(), |_| {
                    if r.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&s2 * &mask, Some(mask))
            }
            _ => (s2.clone(), None),
        };
        let (h3, col2) = self.conv2.forward(ps, &d);
        let (sk, col_skip) = match &self.skip {
            Some(conv) => {
                let (s, c) = conv.forward(ps, x);
                (s, Some(c))
            }
            None => (x.clone(), None),
        };
        let y = &h3 + &sk;
        (
            y,
            ResCache {
                x: x.clone(),
                gn1c,
                a1,
                col1,
                h1,
                ev,
                gn2c,
                a2,
                h2,
                s2,
                drop_mask,
                col2,
                col_skip,
                hw,
            },
        )
    }

    /// Returns the input gradient and accumulates the embedding gradient
    /// (wrt the shared silu'd embedding vector) into `g_se`.
    fn backward(
        &self,
        ps: &ParamSet,
        cache: &ResCache,
        se: &Array1<f64>,
        gout: &Array3<f64>,
        g_se: &mut Array1<f64>,
        grads: &mut Grads,
    ) -> Array3<f64> {
        let g_d = self.conv2.backward(ps, &cache.col2, cache.hw, gout, grads);
        let g_s2 = match &cache.drop_mask {
            Some(mask) => &g_d * mask,
            None => g_d,
        };
        let g_h2 = ops::silu_backward(&cache.h2, &g_s2);
        let scale = cache.ev.slice(ndarray::s![0..self.out_ch]).to_owned();
        let (g_a2, g_scale, g_shift) =
            crate::nn::norm::scale_shift_backward(&cache.a2, &scale, &g_h2);
        let mut g_ev = Array1::zeros(2 * self.out_ch);
        g_ev.slice_mut(ndarray::s![0..self.out_ch]).assign(&g_scale);
        g_ev.slice_mut(ndarray::s![self.out_ch..]).assign(&g_shift);
        let g_h1 = self.gn2.backward(ps, &cache.h1, &cache.gn2c, &g_a2, grads);
        let g_s1 = self.conv1.backward(ps, &cache.col1, cache.hw, &g_h1, grads);
        let g_a1 = ops::silu_backward(&cache.a1, &g_s1);
        let mut g_x = self.gn1.backward(ps, &cache.x, &cache.gn1c, &g_a1, grads);
        match &self.skip {
            Some(conv) => {
                let g_sk =
                    conv.backward(ps, cache.col_skip.as_ref().unwrap(), cache.hw, gout, grads);
                g_x += &g_sk;
            }
            None => g_x += gout,
        }
        let g = self.emb_lin.backward(ps, se, &g_ev, grads);
        *g_se += &g;
        g_x
    }
}

#[derive(Debug, Clone)]
struct Level {
    blocks: Vec<(ResBlock, Option<AttentionBlock>)>,
}

#[derive(Debug, Clone)]
struct UNet {
    class_table: ParamId,
    emb_l1: Linear,
    emb_l2: Linear,
    conv_in: Conv2d,
    down: Vec<Level>,
    downsample: Vec<Conv2d>,
    mid1: ResBlock,
    mid_attn: Option<AttentionBlock>,
    mid2: ResBlock,
    up: Vec<Level>,
    upsample: Vec<Conv2d>,
    out_gn: GroupNorm,
    out_conv: Conv2d,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace {
    row: usize,
    raw: Array1<f64>,
    e1: Array1<f64>,
    e1s: Array1<f64>,
    emb: Array1<f64>,
    se: Array1<f64>,
    col_in: Array2<f64>,
    in_hw: (usize, usize),
    down: Vec<Vec<(ResCache, Option<AttnCache>)>>,
    down_cols: Vec<(Array2<f64>, (usize, usize))>,
    mid: (ResCache, Option<AttnCache>, ResCache),
    up: Vec<Vec<(ResCache, Option<AttnCache>)>>,
    up_cols: Vec<(Array2<f64>, (usize, usize))>,
    skip_chs: Vec<Vec<usize>>,
    final_h: Array3<f64>,
    out_gnc: GnCache,
    a_out: Array3<f64>,
    col_out: Array2<f64>,
}

pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamSet,
    pub version: u32,
    net: UNet,
}

/// Builds a denoiser with parameters drawn deterministically from `seed`.
pub fn init_denoiser(config: &DenoiserConfig, seed: u64) -> Result<Denoiser> {
    config.validate()?;
    let mut r = rng::substream(seed, "denoiser-init");
    let mut ps = ParamSet::new();
    let ed = config.embedding_dim;
    let class_table = ps.register(
        "class_table",
        &[config.num_classes + 1, ed],
        Init::Normal(0.02),
        &mut r,
    );
    let emb_l1 = Linear::new(&mut ps, "emb.l1", ed, ed, Init::Kaiming { fan_in: ed }, &mut r);
    let emb_l2 = Linear::new(&mut ps, "emb.l2", ed, ed, Init::Kaiming { fan_in: ed }, &mut r);
    let base = config.base_channels;
    let conv_in = Conv2d::new(
        &mut ps,
        "conv_in",
        1,
        base,
        3,
        1,
        1,
        Init::Kaiming { fan_in: 9 },
        &mut r,
    );
    let stages = config.stages();
    let mut down = Vec::new();
    let mut downsample = Vec::new();
    let mut skip_chs_flat: Vec<usize> = vec![base];
    let mut cur = base;
    for i in 0..stages {
        let out_ch = base * config.channel_multipliers[i];
        let res = config.resolution(i);
        let mut blocks = Vec::new();
        for b in 0..config.num_res_blocks {
            let rb = ResBlock::new(&mut ps, &format!("down.{i}.{b}"), cur, out_ch, ed, &mut r);
            cur = out_ch;
            let attn = config.attends(res).then(|| {
                AttentionBlock::new(&mut ps, &format!("down.{i}.{b}.attn"), cur, NORM_GROUPS, &mut r)
            });
            blocks.push((rb, attn));
            skip_chs_flat.push(cur);
        }
        down.push(Level { blocks });
        if i < stages - 1 {
            downsample.push(Conv2d::new(
                &mut ps,
                &format!("down.{i}.downsample"),
                cur,
                cur,
                3,
                2,
                1,
                Init::Kaiming { fan_in: cur * 9 },
                &mut r,
            ));
            skip_chs_flat.push(cur);
        }
    }
    let mid_res = config.resolution(stages - 1);
    let mid1 = ResBlock::new(&mut ps, "mid.0", cur, cur, ed, &mut r);
    let mid_attn = config
        .attends(mid_res)
        .then(|| AttentionBlock::new(&mut ps, "mid.attn", cur, NORM_GROUPS, &mut r));
    let mid2 = ResBlock::new(&mut ps, "mid.1", cur, cur, ed, &mut r);

    let mut up = Vec::new();
    let mut upsample = Vec::new();
    let mut skip_chs: Vec<Vec<usize>> = Vec::new();
    for i in (0..stages).rev() {
        let out_ch = base * config.channel_multipliers[i];
        let res = config.resolution(i);
        let mut blocks = Vec::new();
        let mut level_skips = Vec::new();
        for b in 0..=config.num_res_blocks {
            let sk_ch = skip_chs_flat.pop().expect("skip bookkeeping");
            level_skips.push(sk_ch);
            let rb = ResBlock::new(
                &mut ps,
                &format!("up.{i}.{b}"),
                cur + sk_ch,
                out_ch,
                ed,
                &mut r,
            );
            cur = out_ch;
            let attn = config.attends(res).then(|| {
                AttentionBlock::new(&mut ps, &format!("up.{i}.{b}.attn"), cur, NORM_GROUPS, &mut r)
            });
            blocks.push((rb, attn));
        }
        up.push(Level { blocks });
        skip_chs.push(level_skips);
        if i > 0 {
            upsample.push(Conv2d::new(
                &mut ps,
                &format!("up.{i}.upsample"),
                cur,
                cur,
                3,
                1,
                1,
                Init::Kaiming { fan_in: cur * 9 },
                &mut r,
            ));
        }
    }
    debug_assert!(skip_chs_flat.is_empty());
    let out_gn = GroupNorm::new(&mut ps, "out.norm", NORM_GROUPS, cur, true, &mut r);
    let out_conv = Conv2d::new(&mut ps, "out.conv", cur, 1, 3, 1, 1, Init::Zero, &mut r);

    Ok(Denoiser {
        config: config.clone(),
        params: ps,
        version: DENOISER_VERSION,
        net: UNet {
            class_table,
            emb_l1,
            emb_l2,
            conv_in,
            down,
            downsample,
            mid1,
            mid_attn,
            mid2,
            up,
            upsample,
            out_gn,
            out_conv,
        },
    })
}

impl Denoiser {
    fn class_row(&self, c: ClassLabel) -> Result<usize> {
        match c {
            ClassLabel::Null => Ok(self.config.num_classes),
            ClassLabel::Class(i) if (i as usize) < self.config.num_classes => Ok(i as usize),
            ClassLabel::Class(i) => Err(CoreError::InvalidLabel(format!(
                "class index {i} out of range (model has {} classes)",
                self.config.num_classes
            ))),
        }
    }

    /// Sinusoidal timestep encoding plus the learned class embedding row.
    pub fn embed_condition(&self, t: usize, c: ClassLabel) -> Result<Array1<f64>> {
        if t == 0 {
            return Err(CoreError::InvalidTimestep { t, max: usize::MAX });
        }
        let row = self.class_row(c)?;
        let table = self.params.value(self.net.class_table);
        let mut emb = ops::sinusoidal_embedding(t, self.config.embedding_dim);
        for (i, v) in emb.iter_mut().enumerate() {
            *v += table[[row, i]];
        }
        Ok(emb)
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        t: usize,
        c: ClassLabel,
        mode: Mode,
    ) -> Result<(Array2<f64>, ForwardTrace)> {
        let s = self.config.image_size;
        if x.dim() != (s, s) {
            return Err(CoreError::ShapeMismatch {
                expected: (s, s),
                got: x.dim(),
            });
        }
        let row = self.class_row(c)?;
        let raw = self.embed_condition(t, c)?;
        let ps = &self.params;
        let e1 = self.net.emb_l1.forward(ps, &raw);
        let e1s = ops::silu(&e1);
        let emb = self.net.emb_l2.forward(ps, &e1s);
        let se = ops::silu(&emb);

        let mut drop_rng = match mode {
            Mode::Eval => None,
            Mode::Train { rng } => Some(rng),
        };
        let dropout = self.config.dropout.0;

        let x3 = x
            .clone()
            .into_shape_with_order((1, s, s))
            .unwrap();
        let (mut h, col_in) = self.net.conv_in.forward(ps, &x3);
        let mut skips: Vec<Array3<f64>> = vec![h.clone()];

        let mut down_traces = Vec::new();
        let mut down_cols = Vec::new();
        for (i, level) in self.net.down.iter().enumerate() {
            let mut level_trace = Vec::new();
            for (rb, attn) in &level.blocks {
                let (h2, rc) = rb.forward(ps, &h, &se, dropout, drop_rng.as_deref_mut());
                h = h2;
                let ac = match attn {
                    Some(a) => {
                        let (h3, ac) = a.forward(ps, &h);
                        h = h3;
                        Some(ac)
                    }
                    None => None,
                };
                level_trace.push((rc, ac));
                skips.push(h.clone());
            }
            down_traces.push(level_trace);
            if i < self.net.down.len() - 1 {
                let in_hw = (h.dim().1, h.dim().2);
                let (h2, col) = self.net.downsample[i].forward(ps, &h);
                h = h2;
                down_cols.push((col, in_hw));
                skips.push(h.clone());
            }
        }

        let (h2, mc1) = self
            .net
            .mid1
            .forward(ps, &h, &se, dropout, drop_rng.as_deref_mut());
        h = h2;
        let mca = match &self.net.mid_attn {
            Some(a) => {
                let (h3, ac) = a.forward(ps, &h);
                h = h3;
                Some(ac)
            }
            None => None,
        };
        let (h2, mc2) = self
            .net
            .mid2
            .forward(ps, &h, &se, dropout, drop_rng.as_deref_mut());
        h = h2;

        let mut up_traces = Vec::new();
        let mut up_cols = Vec::new();
        let mut skip_chs = Vec::new();
        for (li, level) in self.net.up.iter().enumerate() {
            let mut level_trace = Vec::new();
            let mut level_skips = Vec::new();
            for (rb, attn) in &level.blocks {
                let sk = skips.pop().expect("skip stack");
                level_skips.push(sk.dim().0);
                let cat = concat_channels(&h, &sk);
                let (h2, rc) = rb.forward(ps, &cat, &se, dropout, drop_rng.as_deref_mut());
                h = h2;
                let ac = match attn {
                    Some(a) => {
                        let (h3, ac) = a.forward(ps, &h);
                        h = h3;
                        Some(ac)
                    }
                    None => None,
                };
                level_trace.push((rc, ac));
            }
            up_traces.push(level_trace);
            skip_chs.push(level_skips);
            if li < self.net.upsample.len() {
                let up2 = ops::upsample_nearest2(&h);
                let in_hw = (up2.dim().1, up2.dim().2);
                let (h2, col) = self.net.upsample[li].forward(ps, &up2);
                h = h2;
                up_cols.push((col, in_hw));
            }
        }
        debug_assert!(skips.is_empty());

        let final_h = h;
        let (a_out, out_gnc) = self.net.out_gn.forward(ps, &final_h);
        let s_out = ops::silu(&a_out);
        let (y3, col_out) = self.net.out_conv.forward(ps, &s_out);
        let y = y3.into_shape_with_order((s, s)).unwrap();

        Ok((
            y,
            ForwardTrace {
                row,
                raw,
                e1,
                e1s,
                emb,
                se,
                col_in,
                in_hw: (s, s),
                down: down_traces,
                down_cols,
                mid: (mc1, mca, mc2),
                up: up_traces,
                up_cols,
                skip_chs,
                final_h,
                out_gnc,
                a_out,
                col_out,
            },
        ))
    }

    /// Accumulates parameter gradients for one forward trace.
    pub fn backward(&self, trace: &ForwardTrace, gout: &Array2<f64>, grads: &mut Grads) {
        let ps = &self.params;
        let s = self.config.image_size;
        let mut g_se: Array1<f64> = Array1::zeros(trace.se.len());

        let g3 = gout
            .clone()
            .into_shape_with_order((1, s, s))
            .unwrap();
        let hw_out = (trace.a_out.dim().1, trace.a_out.dim().2);
        let g_sout = self
            .net
            .out_conv
            .backward(ps, &trace.col_out, hw_out, &g3, grads);
        let g_aout = ops::silu_backward(&trace.a_out, &g_sout);
        let mut g = self
            .net
            .out_gn
            .backward(ps, &trace.final_h, &trace.out_gnc, &g_aout, grads);

        // up path in reverse, pushing skip gradients
        let mut skip_grads: Vec<Array3<f64>> = Vec::new();
        for li in (0..self.net.up.len()).rev() {
            if li < self.net.upsample.len() {
                let (col, in_hw) = &trace.up_cols[li];
                let g_up = self.net.upsample[li].backward(ps, col, *in_hw, &g, grads);
                g = ops::upsample_nearest2_backward(&g_up);
            }
            let level = &self.net.up[li];
            for bi in (0..level.blocks.len()).rev() {
                let (rb, attn) = &level.blocks[bi];
                let (rc, ac) = &trace.up[li][bi];
                if let (Some(a), Some(c)) = (attn, ac) {
                    g = a.backward(ps, c, &g, grads);
                }
                let g_cat = rb.backward(ps, rc, &trace.se, &g, &mut g_se, grads);
                let sk_ch = trace.skip_chs[li][bi];
                let h_ch = g_cat.dim().0 - sk_ch;
                let g_h = g_cat.slice(ndarray::s![0..h_ch, .., ..]).to_owned();
                let g_sk = g_cat.slice(ndarray::s![h_ch.., .., ..]).to_owned();
                skip_grads.push(g_sk);
                g = g_h;
            }
        }

        // middle
        {
            let (mc1, mca, mc2) = &trace.mid;
            g = self.net.mid2.backward(ps, mc2, &trace.se, &g, &mut g_se, grads);
            if let (Some(a), Some(c)) = (&self.net.mid_attn, mca) {
                g = a.backward(ps, c, &g, grads);
            }
            g = self.net.mid1.backward(ps, mc1, &trace.se, &g, &mut g_se, grads);
        }

        // down path in reverse, popping skip gradients at each push point
        for i in (0..self.net.down.len()).rev() {
            if i < self.net.down.len() - 1 {
                g += &skip_grads.pop().expect("skip grad stack");
                let (col, in_hw) = &trace.down_cols[i];
                g = self.net.downsample[i].backward(ps, col, *in_hw, &g, grads);
            }
            let level = &self.net.down[i];
            for bi in (0..level.blocks.len()).rev() {
                let (rb, attn) = &level.blocks[bi];
                let (rc, ac) = &trace.down[i][bi];
                g += &skip_grads.pop().expect("skip grad stack");
                if let (Some(a), Some(c)) = (attn, ac) {
                    g = a.backward(ps, c, &g, grads);
                }
                g = rb.backward(ps, rc, &trace.se, &g, &mut g_se, grads);
            }
        }
        g += &skip_grads.pop().expect("conv_in skip grad");
        debug_assert!(skip_grads.is_empty());
        let _ = self
            .net
            .conv_in
            .backward(ps, &trace.col_in, trace.in_hw, &g, grads);

        // embedding path
        let g_emb = ops::silu_backward(&trace.emb, &g_se);
        let g_e1s = self.net.emb_l2.backward(ps, &trace.e1s, &g_emb, grads);
        let g_e1 = ops::silu_backward(&trace.e1, &g_e1s);
        let g_raw = self.net.emb_l1.backward(ps, &trace.raw, &g_e1, grads);
        let gt = grads.get_mut(self.net.class_table);
        for (i, v) in g_raw.iter().enumerate() {
            gt[[trace.row, i]] += v;
        }
    }

    /// Deterministic evaluation-mode prediction.
    pub fn predict_noise(&self, x: &Array2<f64>, t: usize, c: ClassLabel) -> Result<Array2<f64>> {
        Ok(self.forward(x, t, c, Mode::Eval)?.0)
    }

    pub fn param_count(&self) -> usize {
        self.params.total_elements()
    }
}

impl NoisePredictor for Denoiser {
    fn image_size(&self) -> usize {
        self.config.image_size
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn predict(&self, x: &Array2<f64>, t: usize, c: ClassLabel) -> Result<Array2<f64>> {
        self.predict_noise(x, t, c)
    }
}

fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("channel concat")
}
