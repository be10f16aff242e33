//! Focus branch: the full encoder `Φ`, guidance pooling, guidance fusion and
//! the per-view density decoder.

use crate::arch::{DensityDecoder, Encoder, Guidance};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamSpec, Real, Var};

/// The pooled description `Z` of the target action.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceVector {
    pub values: Vec<f32>,
}

impl GuidanceVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LsagConfig {
    /// `B`
    pub num_blocks: usize,
    /// `r`
    pub bottleneck_ratio: usize,
    pub kernel: usize,
}

impl From<&ModelConfig> for LsagConfig {
    fn from(cfg: &ModelConfig) -> Self {
        LsagConfig {
            num_blocks: cfg.lsag_blocks,
            bottleneck_ratio: cfg.bottleneck_ratio,
            kernel: cfg.kernel,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FocusBranch {
    pub encoder: Encoder,
    pub guidance: Guidance,
    pub decoder: DensityDecoder,
}

impl FocusBranch {
    pub fn new(cfg: &ModelConfig) -> Self {
        FocusBranch {
            encoder: Encoder::new(
                "focus.enc",
                cfg.d_in,
                cfg.d,
                cfg.heads,
                cfg.kernel,
                cfg.encoder_blocks,
            ),
            guidance: Guidance::new("focus", cfg),
            decoder: DensityDecoder::new(
                "focus.dec",
                cfg.d,
                cfg.view.view_len,
                cfg.d,
                cfg.heads,
                cfg.ffn_mult,
            ),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.encoder.specs(out);
        self.guidance.specs(out);
        self.decoder.specs(out);
    }

    /// `Φ`: `T × d_in` → `T × d`.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, frames: Var, mask: &[bool]) -> Result<Var> {
        self.encoder.forward(g, frames, mask)
    }

    /// `Z = maxpool(Φ(C))`.
    pub fn guidance_from<T: Real>(&self, g: &mut Graph<'_, T>, instructive: Var) -> Result<Var> {
        let n = g.shape(instructive).0;
        if n == 0 {
            return Err(Error::EmptyView);
        }
        let mask = vec![true; n];
        let x = self.encode(g, instructive, &mask)?;
        pool_guidance(g, x, &mask)
    }

    /// Density for one fine-grained view given its raw rows and `Z`.
    pub fn view_density<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        frames: Var,
        mask: &[bool],
        z: Var,
    ) -> Result<Var> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyView);
        }
        let x = self.encode(g, frames, mask)?;
        let fused = self.guidance.forward(g, x, z, mask)?;
        self.decoder.forward(g, fused, mask)
    }
}

/// Element-wise max over the non-masked frames.
pub fn pool_guidance<T: Real>(g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<Var> {
    g.max_pool_time(x, mask)
}
