//! Parameterized layers. Each layer knows its parameter names and shapes
//! (`specs`) and how to run (`forward`).

use super::graph::{Graph, Var};
use super::params::{Init, ParamSpec};
use super::Real;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec::new(
            format!("{}.w", self.name),
            self.in_dim,
            self.out_dim,
            Init::FanIn(self.in_dim),
        ));
        out.push(ParamSpec::new(
            format!("{}.b", self.name),
            1,
            self.out_dim,
            Init::Zeros,
        ));
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(&format!("{}.w", self.name))?;
        let b = g.param(&format!("{}.b", self.name))?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Same-length temporal convolution with zero padding at both ends.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, kernel: usize) -> Self {
        Conv1d {
            name: name.into(),
            in_dim,
            out_dim,
            kernel,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let fan_in = self.kernel * self.in_dim;
        out.push(ParamSpec::new(
            format!("{}.w", self.name),
            fan_in,
            self.out_dim,
            Init::FanIn(fan_in),
        ));
        out.push(ParamSpec::new(
            format!("{}.b", self.name),
            1,
            self.out_dim,
            Init::Zeros,
        ));
    }

    /// Rows masked out must already be zero for the padding to behave like
    /// the sequence end.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let cols = g.unfold(x, self.kernel)?;
        let w = g.param(&format!("{}.w", self.name))?;
        let b = g.param(&format!("{}.b", self.name))?;
        let y = g.matmul(cols, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm {
            name: name.into(),
            dim,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec::new(
            format!("{}.g", self.name),
            1,
            self.dim,
            Init::Ones,
        ));
        out.push(ParamSpec::new(
            format!("{}.b", self.name),
            1,
            self.dim,
            Init::Zeros,
        ));
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gain = g.param(&format!("{}.g", self.name))?;
        let bias = g.param(&format!("{}.b", self.name))?;
        g.layer_norm(x, gain, bias)
    }
}

/// Scaled dot-product attention maps, one `T × T` matrix per head, with
/// padded keys receiving zero weight.
#[derive(Clone, Debug)]
pub struct AttentionMaps {
    pub query: Linear,
    pub key: Linear,
    pub heads: usize,
}

impl AttentionMaps {
    pub fn new(name: &str, dim: usize, heads: usize) -> Self {
        AttentionMaps {
            query: Linear::new(format!("{name}.q"), dim, dim),
            key: Linear::new(format!("{name}.k"), dim, dim),
            heads,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.query.specs(out);
        self.key.specs(out);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<Vec<Var>> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let head_dim = self.query.out_dim / self.heads;
        let scale = T::from_f64(1.0 / (head_dim as f64).sqrt()).unwrap();
        (0..self.heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * head_dim, (h + 1) * head_dim)?;
                let kh = g.slice_cols(k, h * head_dim, (h + 1) * head_dim)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, scale);
                g.softmax_rows(scores, mask)
            })
            .collect()
    }
}

/// Multi-head self-attention with an output projection.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub maps: AttentionMaps,
    pub value: Linear,
    pub output: Linear,
}

impl SelfAttention {
    pub fn new(name: &str, dim: usize, heads: usize) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim {dim} not divisible by {heads} heads"
        );
        SelfAttention {
            maps: AttentionMaps::new(name, dim, heads),
            value: Linear::new(format!("{name}.v"), dim, dim),
            output: Linear::new(format!("{name}.o"), dim, dim),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.maps.specs(out);
        self.value.specs(out);
        self.output.specs(out);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<Var> {
        let weights = self.maps.forward(g, x, mask)?;
        let v = self.value.forward(g, x)?;
        let head_dim = self.value.out_dim / self.maps.heads;
        let mut heads = Vec::with_capacity(weights.len());
        for (h, a) in weights.into_iter().enumerate() {
            let vh = g.slice_cols(v, h * head_dim, (h + 1) * head_dim)?;
            heads.push(g.matmul(a, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let y = self.output.forward(g, joined)?;
        g.mask_rows(y, mask)
    }
}

/// Two-layer position-wise MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(name: &str, dim: usize, mult: usize) -> Self {
        FeedForward {
            up: Linear::new(format!("{name}.up"), dim, dim * mult),
            down: Linear::new(format!("{name}.down"), dim * mult, dim),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.up.specs(out);
        self.down.specs(out);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.relu(h);
        self.down.forward(g, h)
    }
}

/// `LN(x + f(x))`, re-masked.
pub fn residual_norm<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    fx: Var,
    norm: &LayerNorm,
    mask: &[bool],
) -> Result<Var> {
    let sum = g.add(x, fx)?;
    let y = norm.forward(g, sum)?;
    g.mask_rows(y, mask)
}
