//! Skim branch: a shallow encoder and tiny decoder over the contextual view,
//! and the strategies that pick instructive frames from its confidence map.

use ndarray::Array2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{DensityDecoder, Encoder};
use crate::config::{ModelConfig, Sampling};
use crate::data::DensityMap;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamSpec, ParamStore, Real, Var};

/// Frames picked from the contextual view to describe the target action.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructiveFrames {
    /// Strictly increasing positions into the contextual view.
    pub indices: Vec<usize>,
    /// The raw input rows at those positions, `N_C × d_in`.
    pub features: Array2<f32>,
}

impl InstructiveFrames {
    pub fn gather(context: &Array2<f32>, indices: Vec<usize>) -> Self {
        let features = context.select(ndarray::Axis(0), &indices);
        InstructiveFrames { indices, features }
    }
}

#[derive(Clone, Debug)]
pub struct SkimOutput {
    /// `D_S`, one value per contextual position.
    pub confidence: DensityMap,
    /// `φ` embedding of the contextual view, `N_S × d`.
    pub embedding: Array2<f32>,
}

/// Graph handles for one skim pass.
#[derive(Clone, Copy, Debug)]
pub struct SkimVars {
    pub embedding: Var,
    pub confidence: Var,
}

/// `φ` (one encoder block) plus a narrow correlation decoder.
#[derive(Clone, Debug)]
pub struct SkimBranch {
    pub encoder: Encoder,
    pub decoder: DensityDecoder,
}

impl SkimBranch {
    pub fn new(cfg: &ModelConfig) -> Self {
        SkimBranch {
            encoder: Encoder::new("skim.enc", cfg.d_in, cfg.d, cfg.heads, cfg.kernel, 1),
            decoder: DensityDecoder::new(
                "skim.dec",
                cfg.d,
                cfg.view.context_len,
                cfg.skim_decoder_width(),
                cfg.heads,
                cfg.ffn_mult,
            ),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.encoder.specs(out);
        self.decoder.specs(out);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mask: &[bool]) -> Result<SkimVars> {
        let (rows, cols) = g.shape(x);
        if rows != self.decoder.len() || cols != self.encoder.input_dim() {
            return Err(Error::Shape {
                op: "skim input",
                left: vec![rows, cols],
                right: vec![self.decoder.len(), self.encoder.input_dim()],
            });
        }
        if mask.len() != rows {
            return Err(Error::MaskMismatch {
                expected: rows,
                got: mask.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyView);
        }
        let embedding = self.encoder.forward(g, x, mask)?;
        let confidence = self.decoder.forward(g, embedding, mask)?;
        Ok(SkimVars {
            embedding,
            confidence,
        })
    }
}

/// Runs the skim branch outside of training.
pub fn skim_forward(
    branch: &SkimBranch,
    params: &ParamStore<f32>,
    features: &Array2<f32>,
    mask: &[bool],
) -> Result<SkimOutput> {
    let mut g = Graph::new(params);
    let x = g.input(features.clone());
    let vars = branch.forward(&mut g, x, mask)?;
    let values = g
        .value(vars.confidence)
        .iter()
        .map(|&v| f64::from(v))
        .collect::<Vec<_>>();
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("skim confidence {bad}")));
    }
    Ok(SkimOutput {
        confidence: DensityMap {
            values,
            mask: mask.to_vec(),
        },
        embedding: g.value(vars.embedding).clone(),
    })
}

/// Picks `n` strictly increasing, non-masked positions from a confidence map.
///
/// * `Random`: distinct positions from a generator seeded with `seed`.
/// * `Uniform`: `avail[floor(k·L/n)]` over the `L` non-masked positions.
/// * `TopNc`: the `n` highest values, ties going to the lower index.
pub fn sample_instructive(
    confidence: &DensityMap,
    strategy: Sampling,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if confidence.values.len() != confidence.mask.len() {
        return Err(Error::MaskMismatch {
            expected: confidence.values.len(),
            got: confidence.mask.len(),
        });
    }
    let avail: Vec<usize> = (0..confidence.len()).filter(|&i| confidence.mask[i]).collect();
    if n > avail.len() || n == 0 {
        return Err(Error::NotEnoughFrames {
            requested: n,
            available: avail.len(),
        });
    }
    let mut picked = match strategy {
        Sampling::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, avail.len(), n)
                .into_iter()
                .map(|i| avail[i])
                .collect::<Vec<_>>()
        }
        Sampling::Uniform => {
            let l = avail.len();
            (0..n).map(|k| avail[k * l / n]).collect()
        }
        Sampling::TopNc => {
            let mut order = avail;
            order.sort_by(|&a, &b| {
                confidence.values[b]
                    .total_cmp(&confidence.values[a])
                    .then(a.cmp(&b))
            });
            order.truncate(n);
            order
        }
    };
    picked.sort_unstable();
    Ok(picked)
}
