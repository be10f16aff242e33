//! Finite-difference checks over every primitive and the composed branches,
//! shared by the `gradcheck` subcommand and the test suite.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{BasicCnn, DensityDecoder, Encoder, Lsag};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::focus::FocusBranch;
use crate::nn::gradcheck::{grad_check, GradCheckReport, DEFAULT_EPS};
use crate::nn::layers::{Conv1d, FeedForward, LayerNorm, Linear, SelfAttention};
use crate::nn::{init_params, Graph, Init, ParamSpec, ParamStore, Var};
use crate::skim::SkimBranch;

/// Sizes for the composed checks.
#[derive(Clone, Copy, Debug)]
pub struct SuiteSizes {
    pub d: usize,
    pub view_len: usize,
    pub n_instructive: usize,
    pub lsag_blocks: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes {
            d: 8,
            view_len: 8,
            n_instructive: 4,
            lsag_blocks: 1,
            seed: 7,
            tolerance: 1e-4,
        }
    }
}

impl SuiteSizes {
    /// A tiny model config with these sizes.
    pub fn model(&self) -> ModelConfig {
        let mut cfg = ModelConfig::desk(5);
        cfg.d = self.d;
        cfg.heads = 2;
        cfg.encoder_blocks = 1;
        cfg.lsag_blocks = self.lsag_blocks;
        cfg.view.view_len = self.view_len;
        cfg.view.context_len = self.view_len;
        cfg.n_instructive = self.n_instructive;
        cfg
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// `sum(out ⊙ W)` for a fixed random `W`, so every output element gets a
/// distinct upstream gradient.
fn probe(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(out);
    let w = g.input(random(&mut ChaCha8Rng::seed_from_u64(seed), r, c));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

/// Initialized parameters plus the extra `inputs`. Biases start at small
/// positive values instead of zero: at zero, a narrow layer can have every
/// ReLU dead, which leaves constant rows in front of a layer norm where
/// central differences are meaningless.
fn store_with(
    specs: &mut Vec<ParamSpec>,
    inputs: &[(&str, usize, usize)],
    seed: u64,
) -> Result<ParamStore<f64>> {
    for &(name, r, c) in inputs {
        specs.push(ParamSpec::new(name, r, c, Init::FanIn(1)));
    }
    let mut store = init_params(specs, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for spec in specs.iter().filter(|s| s.name.ends_with(".b")) {
        let b = store.get_mut(&spec.name).unwrap();
        b.mapv_inplace(|v| v + rng.random_range(0.1..0.6));
    }
    Ok(store)
}

/// Runs every check. Each entry is `(name, report)`.
pub fn gradient_suite(sizes: &SuiteSizes) -> Result<Vec<(String, GradCheckReport)>> {
    let tol = sizes.tolerance;
    let seed = sizes.seed;
    let mut out = Vec::new();
    let mut run =
        |name: &str, store: ParamStore<f64>, f: &dyn Fn(&mut Graph<'_, f64>) -> Result<Var>| -> Result<()> {
            let report = grad_check(&store, f, DEFAULT_EPS, tol)?;
            out.push((name.to_string(), report));
            Ok(())
        };
    let padded = [true, true, false];
    let x35 = [("x", 3, 5)];

    let lin = Linear::new("lin", 5, 4);
    let mut specs = Vec::new();
    lin.specs(&mut specs);
    run("linear", store_with(&mut specs, &x35, seed)?, &|g| {
        let x = g.param("x")?;
        let y = lin.forward(g, x)?;
        probe(g, y, seed)
    })?;

    let conv = Conv1d::new("conv", 5, 4, 3);
    let mut specs = Vec::new();
    conv.specs(&mut specs);
    run("conv1d", store_with(&mut specs, &x35, seed)?, &|g| {
        let x = g.param("x")?;
        let y = conv.forward(g, x)?;
        probe(g, y, seed)
    })?;

    let ln = LayerNorm::new("ln", 5);
    let mut specs = Vec::new();
    ln.specs(&mut specs);
    let mut store = store_with(&mut specs, &x35, seed)?;
    // Perturb gain and bias away from their 1/0 initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    *store.get_mut("ln.g").unwrap() += &random(&mut rng, 1, 5);
    *store.get_mut("ln.b").unwrap() += &random(&mut rng, 1, 5);
    run("layer_norm", store, &|g| {
        let x = g.param("x")?;
        let y = ln.forward(g, x)?;
        probe(g, y, seed)
    })?;

    run("sigmoid", store_with(&mut Vec::new(), &x35, seed)?, &|g| {
        let x = g.param("x")?;
        let y = g.sigmoid(x);
        probe(g, y, seed)
    })?;

    run("relu", store_with(&mut Vec::new(), &x35, seed)?, &|g| {
        let x = g.param("x")?;
        let y = g.relu(x);
        probe(g, y, seed)
    })?;

    run(
        "softmax_rows (masked)",
        store_with(&mut Vec::new(), &[("x", 3, 3)], seed)?,
        &|g| {
            let x = g.param("x")?;
            let y = g.softmax_rows(x, &padded)?;
            probe(g, y, seed)
        },
    )?;

    let attn = SelfAttention::new("attn", 5, 1);
    let mut specs = Vec::new();
    attn.specs(&mut specs);
    run(
        "self_attention (masked)",
        store_with(&mut specs, &x35, seed)?,
        &|g| {
            let x = g.param("x")?;
            let y = attn.forward(g, x, &padded)?;
            probe(g, y, seed)
        },
    )?;

    run(
        "max_pool_time (masked)",
        store_with(&mut Vec::new(), &x35, seed)?,
        &|g| {
            let x = g.param("x")?;
            let y = g.max_pool_time(x, &padded)?;
            probe(g, y, seed)
        },
    )?;

    let ffn = FeedForward::new("ffn", 5, 2);
    let mut specs = Vec::new();
    ffn.specs(&mut specs);
    run("feed_forward", store_with(&mut specs, &x35, seed)?, &|g| {
        let x = g.param("x")?;
        let y = ffn.forward(g, x)?;
        probe(g, y, seed)
    })?;

    let target = random(&mut ChaCha8Rng::seed_from_u64(seed ^ 2), 3, 5);
    run("masked_mse", store_with(&mut Vec::new(), &x35, seed)?, &|g| {
        let x = g.param("x")?;
        let mut mask = vec![true; 15];
        mask[4] = false;
        g.masked_mse(x, &target, &mask)
    })?;

    let cfg = sizes.model();
    let (d, nf, nc) = (cfg.d, cfg.view.view_len, cfg.n_instructive);
    let mut view_mask = vec![true; nf];
    view_mask[nf - 1] = false;

    let enc = Encoder::new("enc", cfg.d_in, d, cfg.heads, cfg.kernel, 1);
    let mut specs = Vec::new();
    enc.specs(&mut specs);
    run(
        "encoder (masked)",
        store_with(&mut specs, &[("x", nf, cfg.d_in)], seed)?,
        &|g| {
            let x = g.param("x")?;
            let y = enc.forward(g, x, &view_mask)?;
            probe(g, y, seed)
        },
    )?;

    let lsag = Lsag::new("lsag", &cfg);
    let mut specs = Vec::new();
    lsag.specs(&mut specs);
    run(
        "lsag (masked)",
        store_with(&mut specs, &[("x", nf, d), ("z", 1, d)], seed)?,
        &|g| {
            let x = g.param("x")?;
            let x = g.mask_rows(x, &view_mask)?;
            let z = g.param("z")?;
            let y = lsag.forward(g, x, z, &view_mask)?;
            probe(g, y, seed)
        },
    )?;

    let full = vec![true; nf];
    let cnn = BasicCnn::new("cnn", &cfg);
    let mut specs = Vec::new();
    cnn.specs(&mut specs);
    run(
        "basic cnn fusion",
        store_with(&mut specs, &[("x", nf, d), ("z", 1, d)], seed)?,
        &|g| {
            let x = g.param("x")?;
            let z = g.param("z")?;
            let y = cnn.forward(g, x, z, &full)?;
            probe(g, y, seed)
        },
    )?;

    let dec = DensityDecoder::new("dec", d, nf, d, cfg.heads, cfg.ffn_mult);
    let mut specs = Vec::new();
    dec.specs(&mut specs);
    run(
        "density decoder (masked)",
        store_with(&mut specs, &[("x", nf, d)], seed)?,
        &|g| {
            let x = g.param("x")?;
            let x = g.mask_rows(x, &view_mask)?;
            let y = dec.forward(g, x, &view_mask)?;
            probe(g, y, seed)
        },
    )?;

    let skim = SkimBranch::new(&cfg);
    let mut specs = Vec::new();
    skim.specs(&mut specs);
    let target = random(&mut ChaCha8Rng::seed_from_u64(seed ^ 3), nf, 1);
    run(
        "skim branch + loss",
        store_with(&mut specs, &[("x", nf, cfg.d_in)], seed)?,
        &|g| {
            let x = g.param("x")?;
            let x = g.mask_rows(x, &view_mask)?;
            let s = skim.forward(g, x, &view_mask)?;
            g.masked_mse(s.confidence, &target, &view_mask)
        },
    )?;

    // Instructive frames through Φ and pooling, then one view through Φ,
    // LSAG and the decoder, against a density target.
    let focus = FocusBranch::new(&cfg);
    let mut specs = Vec::new();
    focus.specs(&mut specs);
    run(
        "guidance + lsag + decoder + loss",
        store_with(&mut specs, &[("c", nc, cfg.d_in), ("x", nf, cfg.d_in)], seed)?,
        &|g| {
            let c = g.param("c")?;
            let z = focus.guidance_from(g, c)?;
            let x = g.param("x")?;
            let x = g.mask_rows(x, &view_mask)?;
            let y = focus.view_density(g, x, &view_mask, z)?;
            g.masked_mse(y, &target, &view_mask)
        },
    )?;

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_default_sizes() {
        let reports = gradient_suite(&SuiteSizes::default()).unwrap();
        for (name, r) in &reports {
            assert!(r.passed, "{name}\n{r}");
        }
        assert!(reports.len() >= 15);
    }

    #[test]
    fn suite_passes_for_other_seeds() {
        for seed in 0..6 {
            for (name, r) in gradient_suite(&SuiteSizes {
                seed,
                ..SuiteSizes::default()
            })
            .unwrap()
            {
                assert!(r.passed, "seed {seed} {name}\n{r}");
            }
        }
    }
}
