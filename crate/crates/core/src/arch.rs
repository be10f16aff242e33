//! Network pieces shared by the two branches: the temporal encoder, the
//! correlation-based density decoder, and the guidance fusion blocks.

use crate::config::{Ablations, ModelConfig};
use crate::error::Result;
use crate::nn::layers::{
    residual_norm, AttentionMaps, Conv1d, FeedForward, LayerNorm, Linear, SelfAttention,
};
use crate::nn::{Graph, ParamSpec, Real, Var};

/// Temporal conv then self-attention, each with a residual and layer norm.
#[derive(Clone, Debug)]
struct EncoderBlock {
    conv: Conv1d,
    conv_norm: LayerNorm,
    attn: SelfAttention,
    attn_norm: LayerNorm,
}

/// Per-frame projection followed by conv + attention blocks.
#[derive(Clone, Debug)]
pub struct Encoder {
    proj: Linear,
    blocks: Vec<EncoderBlock>,
}

impl Encoder {
    pub fn new(name: &str, d_in: usize, d: usize, heads: usize, kernel: usize, blocks: usize) -> Self {
        Encoder {
            proj: Linear::new(format!("{name}.proj"), d_in, d),
            blocks: (0..blocks)
                .map(|b| EncoderBlock {
                    conv: Conv1d::new(format!("{name}.block{b}.conv"), d, d, kernel),
                    conv_norm: LayerNorm::new(format!("{name}.block{b}.conv_norm"), d),
                    attn: SelfAttention::new(&format!("{name}.block{b}.attn"), d, heads),
                    attn_norm: LayerNorm::new(format!("{name}.block{b}.attn_norm"), d),
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.proj.in_dim
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.proj.specs(out);
        for b in &self.blocks {
            b.conv.specs(out);
            b.conv_norm.specs(out);
            b.attn.specs(out);
            b.attn_norm.specs(out);
        }
    }

    /// `T × d_in` → `T × d`, padded rows zero.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<Var> {
        let h = self.proj.forward(g, x)?;
        let mut h = g.mask_rows(h, mask)?;
        for b in &self.blocks {
            let c = b.conv.forward(g, h)?;
            let c = g.relu(c);
            h = residual_norm(g, h, c, &b.conv_norm, mask)?;
            let a = b.attn.forward(g, h, mask)?;
            h = residual_norm(g, h, a, &b.attn_norm, mask)?;
        }
        Ok(h)
    }
}

/// Self-similarity decoder: per-head attention maps over the sequence are
/// stacked per frame (`T × T·h`), projected to `width`, refined by one
/// transformer layer and read out as one scalar per frame.
/// The decoder head regresses densities multiplied by this factor, so
/// per-frame targets of around 0.1 become outputs of order one.
pub const DENSITY_SCALE: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct DensityDecoder {
    maps: AttentionMaps,
    proj: Linear,
    attn: SelfAttention,
    attn_norm: LayerNorm,
    ffn: FeedForward,
    ffn_norm: LayerNorm,
    head: Linear,
    len: usize,
}

impl DensityDecoder {
    pub fn new(name: &str, d: usize, len: usize, width: usize, heads: usize, ffn_mult: usize) -> Self {
        DensityDecoder {
            maps: AttentionMaps::new(&format!("{name}.corr"), d, heads),
            proj: Linear::new(format!("{name}.proj"), len * heads, width),
            attn: SelfAttention::new(&format!("{name}.attn"), width, heads),
            attn_norm: LayerNorm::new(format!("{name}.attn_norm"), width),
            ffn: FeedForward::new(&format!("{name}.ffn"), width, ffn_mult),
            ffn_norm: LayerNorm::new(format!("{name}.ffn_norm"), width),
            head: Linear::new(format!("{name}.head"), width, 1),
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.maps.specs(out);
        self.proj.specs(out);
        self.attn.specs(out);
        self.attn_norm.specs(out);
        self.ffn.specs(out);
        self.ffn_norm.specs(out);
        self.head.specs(out);
    }

    /// The per-head correlation matrices.
    pub fn correlation<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<Vec<Var>> {
        self.maps.forward(g, x, mask)
    }

    /// `len × d` → `len × 1` density with identity output activation.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<Var> {
        let maps = self.correlation(g, x, mask)?;
        let stacked = if maps.len() == 1 {
            maps[0]
        } else {
            g.concat_cols(&maps)?
        };
        let stacked = g.mask_rows(stacked, mask)?;
        let p = self.proj.forward(g, stacked)?;
        let p = g.relu(p);
        let p = g.mask_rows(p, mask)?;
        let a = self.attn.forward(g, p, mask)?;
        let p = residual_norm(g, p, a, &self.attn_norm, mask)?;
        let f = self.ffn.forward(g, p)?;
        let p = residual_norm(g, p, f, &self.ffn_norm, mask)?;
        let out = self.head.forward(g, p)?;
        let out = g.scale(out, T::from_f64(1.0 / DENSITY_SCALE).unwrap());
        g.mask_rows(out, mask)
    }
}

#[derive(Clone, Debug)]
struct RelationBlock {
    attn: SelfAttention,
    attn_norm: LayerNorm,
    conv: Conv1d,
    conv_norm: LayerNorm,
}

/// Long-short adaptive guidance.
///
/// Feature adaption: `a = sigmoid(W2 · relu(W1 · [X_F, Z]))` gives per-channel
/// attention from the concatenation of the view embedding and the repeated
/// guidance; the view embedding is reweighted by `a`, passed through a
/// temporal convolution and added back to itself. Long-short relation
/// modeling then alternates self-attention (long range) and temporal
/// convolution (short range), `B` times.
#[derive(Clone, Debug)]
pub struct Lsag {
    squeeze: Option<(Linear, Linear, Conv1d)>,
    blocks: Vec<RelationBlock>,
}

impl Lsag {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.d;
        let hidden = (2 * d) / cfg.bottleneck_ratio;
        let squeeze = cfg.ablations.feature_adaption_enabled.then(|| {
            (
                Linear::new(format!("{name}.adapt.down"), 2 * d, hidden),
                Linear::new(format!("{name}.adapt.up"), hidden, d),
                Conv1d::new(format!("{name}.adapt.conv"), d, d, cfg.kernel),
            )
        });
        let blocks = if cfg.ablations.long_short_enabled {
            (0..cfg.lsag_blocks)
                .map(|b| RelationBlock {
                    attn: SelfAttention::new(&format!("{name}.rel{b}.attn"), d, cfg.heads),
                    attn_norm: LayerNorm::new(format!("{name}.rel{b}.attn_norm"), d),
                    conv: Conv1d::new(format!("{name}.rel{b}.conv"), d, d, cfg.kernel),
                    conv_norm: LayerNorm::new(format!("{name}.rel{b}.conv_norm"), d),
                })
                .collect()
        } else {
            Vec::new()
        };
        Lsag { squeeze, blocks }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        if let Some((down, up, conv)) = &self.squeeze {
            down.specs(out);
            up.specs(out);
            conv.specs(out);
        }
        for b in &self.blocks {
            b.attn.specs(out);
            b.attn_norm.specs(out);
            b.conv.specs(out);
            b.conv_norm.specs(out);
        }
    }

    /// The `N_F × 2d` concatenation `[X_F, repeat(Z, N_F)]`, padded rows zero.
    pub fn concat_guidance<T: Real>(g: &mut Graph<'_, T>, x: Var, z: Var, mask: &[bool]) -> Result<Var> {
        let n = g.shape(x).0;
        let zs = g.repeat_rows(z, n)?;
        let cat = g.concat_cols(&[x, zs])?;
        g.mask_rows(cat, mask)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, z: Var, mask: &[bool]) -> Result<Var> {
        let (n, d) = g.shape(x);
        if g.shape(z) != (1, d) {
            return Err(crate::Error::Shape {
                op: "lsag guidance",
                left: vec![n, d],
                right: vec![g.shape(z).0, g.shape(z).1],
            });
        }
        let mut h = match &self.squeeze {
            Some((down, up, conv)) => {
                let cat = Self::concat_guidance(g, x, z, mask)?;
                let a = down.forward(g, cat)?;
                let a = g.relu(a);
                let a = up.forward(g, a)?;
                let a = g.sigmoid(a);
                let weighted = g.mul(x, a)?;
                let c = conv.forward(g, weighted)?;
                let y = g.add(c, x)?;
                g.mask_rows(y, mask)?
            }
            // Without the adaption stage the guidance is simply added on.
            None => {
                let zs = g.repeat_rows(z, n)?;
                let y = g.add(x, zs)?;
                g.mask_rows(y, mask)?
            }
        };
        for b in &self.blocks {
            let a = b.attn.forward(g, h, mask)?;
            h = residual_norm(g, h, a, &b.attn_norm, mask)?;
            let c = b.conv.forward(g, h)?;
            let c = g.relu(c);
            h = residual_norm(g, h, c, &b.conv_norm, mask)?;
        }
        Ok(h)
    }
}

/// Plain convolutional stand-in used when LSAG is ablated: the guidance is
/// concatenated, fused by a linear layer, then `B` residual conv layers.
#[derive(Clone, Debug)]
pub struct BasicCnn {
    fuse: Linear,
    convs: Vec<(Conv1d, LayerNorm)>,
}

impl BasicCnn {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        BasicCnn {
            fuse: Linear::new(format!("{name}.fuse"), 2 * cfg.d, cfg.d),
            convs: (0..cfg.lsag_blocks)
                .map(|b| {
                    (
                        Conv1d::new(format!("{name}.conv{b}"), cfg.d, cfg.d, cfg.kernel),
                        LayerNorm::new(format!("{name}.norm{b}"), cfg.d),
                    )
                })
                .collect(),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.fuse.specs(out);
        for (c, n) in &self.convs {
            c.specs(out);
            n.specs(out);
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, z: Var, mask: &[bool]) -> Result<Var> {
        let cat = Lsag::concat_guidance(g, x, z, mask)?;
        let h = self.fuse.forward(g, cat)?;
        let mut h = g.mask_rows(h, mask)?;
        for (conv, norm) in &self.convs {
            let c = conv.forward(g, h)?;
            let c = g.relu(c);
            h = residual_norm(g, h, c, norm, mask)?;
        }
        Ok(h)
    }
}

/// How the focus branch merges guidance into a fine-grained view.
#[derive(Clone, Debug)]
pub enum Guidance {
    Lsag(Lsag),
    Cnn(BasicCnn),
}

impl Guidance {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let Ablations { lsag_enabled, .. } = cfg.ablations;
        if lsag_enabled {
            Guidance::Lsag(Lsag::new(&format!("{name}.lsag"), cfg))
        } else {
            Guidance::Cnn(BasicCnn::new(&format!("{name}.cnn"), cfg))
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        match self {
            Guidance::Lsag(l) => l.specs(out),
            Guidance::Cnn(c) => c.specs(out),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, z: Var, mask: &[bool]) -> Result<Var> {
        match self {
            Guidance::Lsag(l) => l.forward(g, x, z, mask),
            Guidance::Cnn(c) => c.forward(g, x, z, mask),
        }
    }
}
