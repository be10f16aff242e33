//! The full two-branch counter: parameters, per-video preparation and the
//! inference procedure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;

use crate::config::{CountMode, ModelConfig};
use crate::data::{build_gt_density_with, decompose, AnnotatedSequence, DensityMap, Edges};
use crate::error::{Error, Result};
use crate::focus::{FocusBranch, GuidanceVector};
use crate::nn::{init_params, read_checkpoint, write_checkpoint, Graph, ParamSpec, ParamStore, Var};
use crate::skim::{sample_instructive, InstructiveFrames, SkimBranch};

/// Network input and density target for one view.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub features: Array2<f32>,
    pub mask: Vec<bool>,
    /// `len × 1` ground-truth density.
    pub target: Array2<f32>,
}

impl ViewInput {
    fn build(seq: &AnnotatedSequence, indices: &[usize], mask: &[bool], edges: Edges) -> Result<Self> {
        let gt = build_gt_density_with(seq, indices, mask, edges)?;
        let target = Array2::from_shape_fn((gt.len(), 1), |(i, _)| gt.values[i] as f32);
        Ok(ViewInput {
            features: seq.gather(indices, mask),
            mask: mask.to_vec(),
            target,
        })
    }

    pub fn target_map(&self) -> DensityMap {
        DensityMap {
            values: self.target.iter().map(|&v| f64::from(v)).collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Everything the network needs from one video, computed once and cached.
#[derive(Clone, Debug)]
pub struct PreparedVideo {
    pub id: String,
    pub class_label: String,
    pub count: usize,
    /// The view fed to the skim branch: the video's own contextual view, or
    /// the exemplar's in specified mode.
    pub context: ViewInput,
    pub views: Vec<ViewInput>,
    /// Every downsampled frame, unpadded, with its density target. Training
    /// cuts fine views at arbitrary offsets from this.
    pub track: ViewInput,
}

impl PreparedVideo {
    pub fn new(
        seq: &AnnotatedSequence,
        exemplar: Option<&AnnotatedSequence>,
        cfg: &ModelConfig,
        mode: CountMode,
    ) -> Result<Self> {
        seq.validate()?;
        let plan = decompose(seq, &cfg.view)?;
        let context = match mode {
            CountMode::Standard => {
                ViewInput::build(seq, &plan.contextual_indices, &plan.pad_mask_context, Edges::Open)?
            }
            CountMode::Specified => {
                let ex = exemplar.ok_or_else(|| Error::MissingExemplar(seq.id.clone()))?;
                ex.validate()?;
                let ex_plan = decompose(ex, &cfg.view)?;
                ViewInput::build(
                    ex,
                    &ex_plan.contextual_indices,
                    &ex_plan.pad_mask_context,
                    Edges::Open,
                )?
            }
        };
        let views = plan
            .fine_views
            .iter()
            .zip(&plan.pad_mask_fine)
            .map(|(idx, mask)| ViewInput::build(seq, idx, mask, Edges::Stride(plan.downsample_rate)))
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<usize> = (0..plan.downsampled_len())
            .map(|k| k * plan.downsample_rate)
            .collect();
        let track = ViewInput::build(
            seq,
            &all,
            &vec![true; all.len()],
            Edges::Stride(plan.downsample_rate),
        )?;
        Ok(PreparedVideo {
            id: seq.id.clone(),
            class_label: seq.class_label.clone(),
            count: seq.count(),
            context,
            views,
            track,
        })
    }

    /// The fine view of length `len` starting at downsampled frame `start`.
    /// Its target equals the ground truth built directly on those indices,
    /// since rebinning cells depend only on neighbouring indices.
    pub fn window(&self, start: usize, len: usize) -> ViewInput {
        let total = self.track.mask.len();
        let end = (start + len).min(total);
        let real = end - start;
        let mut features = Array2::zeros((len, self.track.features.ncols()));
        let mut target = Array2::zeros((len, 1));
        features
            .slice_mut(ndarray::s![..real, ..])
            .assign(&self.track.features.slice(ndarray::s![start..end, ..]));
        target
            .slice_mut(ndarray::s![..real, ..])
            .assign(&self.track.target.slice(ndarray::s![start..end, ..]));
        let mut mask = vec![false; len];
        mask[..real].fill(true);
        ViewInput {
            features,
            mask,
            target,
        }
    }
}

/// How often the skim branch runs per video. `PerView` exists only as the
/// naive baseline for timing comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SkimPolicy {
    #[default]
    Once,
    PerView,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub id: String,
    /// `ĉ`, clamped at zero.
    pub count: f64,
    /// Unclamped sum of the view densities.
    pub raw_count: f64,
    pub view_sums: Vec<f64>,
    pub view_densities: Vec<DensityMap>,
    /// `D_S`; `None` when the skim branch is disabled.
    pub confidence: Option<DensityMap>,
    pub instructive: Vec<usize>,
    pub guidance: GuidanceVector,
}

/// Graph handles for one training example.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub skim_loss: Option<Var>,
    pub focus_loss: Var,
}

/// Stable seed for per-video random sampling at inference time.
pub fn id_seed(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub struct SkimFocusNet {
    pub config: ModelConfig,
    pub skim: Option<SkimBranch>,
    pub focus: FocusBranch,
    pub params: ParamStore<f32>,
    skim_calls: AtomicUsize,
}

impl SkimFocusNet {
    pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        if cfg.ablations.skim_enabled {
            SkimBranch::new(cfg).specs(&mut specs);
        }
        FocusBranch::new(cfg).specs(&mut specs);
        specs
    }

    /// Fresh model with seeded initialization.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&Self::param_specs(cfg), seed)?;
        Self::from_params(cfg, params)
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(cfg: &ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        cfg.validate()?;
        let specs = Self::param_specs(cfg);
        for spec in &specs {
            let value = params
                .get(&spec.name)
                .ok_or_else(|| Error::MissingParam(spec.name.clone()))?;
            if value.dim() != (spec.rows, spec.cols) {
                return Err(Error::Shape {
                    op: "checkpoint parameter",
                    left: value.shape().to_vec(),
                    right: vec![spec.rows, spec.cols],
                });
            }
        }
        if params.len() != specs.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, config expects {}",
                params.len(),
                specs.len()
            )));
        }
        Ok(SkimFocusNet {
            config: cfg.clone(),
            skim: cfg.ablations.skim_enabled.then(|| SkimBranch::new(cfg)),
            focus: FocusBranch::new(cfg),
            params,
            skim_calls: AtomicUsize::new(0),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut out, &self.params, &self.config.digest())?;
        out.flush()?;
        Ok(())
    }

    /// Loads a checkpoint, refusing one written under a different config.
    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let (params, digest) = read_checkpoint(&mut input)?;
        if digest != cfg.digest() {
            return Err(Error::Config(format!(
                "{} was written under a different model config",
                path.display()
            )));
        }
        Self::from_params(cfg, params)
    }

    /// Number of skim forward passes since construction or the last reset.
    pub fn skim_calls(&self) -> usize {
        self.skim_calls.load(Ordering::Relaxed)
    }

    pub fn reset_skim_calls(&self) {
        self.skim_calls.store(0, Ordering::Relaxed);
    }

    fn instructive_count(&self, context: &ViewInput) -> usize {
        let avail = context.mask.iter().filter(|&&m| m).count();
        self.config.n_instructive.min(avail)
    }

    /// Skim pass plus guidance. Returns `(Z, D_S handle, picked indices)`.
    fn guidance<'s>(
        &self,
        g: &mut Graph<'s, f32>,
        context: &ViewInput,
        seed: u64,
    ) -> Result<(Var, Option<Var>, Vec<usize>)> {
        let Some(skim) = &self.skim else {
            let z = g.input(Array2::zeros((1, self.config.d)));
            return Ok((z, None, Vec::new()));
        };
        self.skim_calls.fetch_add(1, Ordering::Relaxed);
        let x = g.input(context.features.clone());
        let vars = skim.forward(g, x, &context.mask)?;
        let confidence = DensityMap {
            values: g.value(vars.confidence).iter().map(|&v| f64::from(v)).collect(),
            mask: context.mask.clone(),
        };
        let n = self.instructive_count(context);
        let picked = sample_instructive(&confidence, self.config.sampling, n, seed)?;
        let frames = InstructiveFrames::gather(&context.features, picked);
        let c = g.input(frames.features);
        let z = self.focus.guidance_from(g, c)?;
        Ok((z, Some(vars.confidence), frames.indices))
    }

    /// Builds the loss terms for one video and one of its views.
    pub fn training_forward(
        &self,
        g: &mut Graph<'_, f32>,
        video: &PreparedVideo,
        view: &ViewInput,
        seed: u64,
    ) -> Result<StepVars> {
        let (z, confidence, _) = self.guidance(g, &video.context, seed)?;
        let skim_loss = match confidence {
            Some(d) => Some(g.masked_mse(d, &video.context.target, &video.context.mask)?),
            None => None,
        };
        let v = view;
        let x = g.input(v.features.clone());
        let d = self.focus.view_density(g, x, &v.mask, z)?;
        let focus_loss = g.masked_mse(d, &v.target, &v.mask)?;
        Ok(StepVars {
            skim_loss,
            focus_loss,
        })
    }

    /// Counts repetitions in one prepared video.
    pub fn count_video(&self, video: &PreparedVideo) -> Result<Prediction> {
        self.count_video_with(video, SkimPolicy::Once)
    }

    pub fn count_video_with(&self, video: &PreparedVideo, policy: SkimPolicy) -> Result<Prediction> {
        let seed = id_seed(&video.id);
        let mut g = Graph::new(&self.params);
        let (mut z, confidence, instructive) = self.guidance(&mut g, &video.context, seed)?;
        let confidence = confidence.map(|d| DensityMap {
            values: g.value(d).iter().map(|&v| f64::from(v)).collect(),
            mask: video.context.mask.clone(),
        });
        let guidance = GuidanceVector {
            values: g.value(z).iter().copied().collect(),
        };
        let mut view_densities = Vec::with_capacity(video.views.len());
        for (i, v) in video.views.iter().enumerate() {
            if policy == SkimPolicy::PerView && i > 0 {
                z = self.guidance(&mut g, &video.context, seed)?.0;
            }
            let x = g.input(v.features.clone());
            let d = self.focus.view_density(&mut g, x, &v.mask, z)?;
            view_densities.push(DensityMap {
                values: g.value(d).iter().map(|&x| f64::from(x)).collect(),
                mask: v.mask.clone(),
            });
        }
        let view_sums: Vec<f64> = view_densities
            .iter()
            .map(crate::data::count_from_density)
            .collect();
        let raw_count: f64 = view_sums.iter().sum();
        if !raw_count.is_finite() {
            return Err(Error::NonFinite(format!("count for {}", video.id)));
        }
        Ok(Prediction {
            id: video.id.clone(),
            count: raw_count.max(0.0),
            raw_count,
            view_sums,
            view_densities,
            confidence,
            instructive,
            guidance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sequence, SynthConfig};

    fn tiny() -> ModelConfig {
        let mut cfg = ModelConfig::desk(16);
        cfg.d = 16;
        cfg.heads = 2;
        cfg.encoder_blocks = 1;
        cfg.lsag_blocks = 1;
        cfg.view.context_len = 16;
        cfg.view.view_len = 8;
        cfg.n_instructive = 4;
        cfg
    }

    fn video(n_cycles: usize) -> AnnotatedSequence {
        generate_sequence(1, n_cycles, &SynthConfig::default(), 3)
    }

    #[test]
    fn skim_runs_once_per_video() {
        let net = SkimFocusNet::new(&tiny(), 0).unwrap();
        let v = PreparedVideo::new(&video(10), None, &net.config, CountMode::Standard).unwrap();
        assert!(v.views.len() > 1);
        net.count_video(&v).unwrap();
        assert_eq!(net.skim_calls(), 1);
        net.reset_skim_calls();
        net.count_video_with(&v, SkimPolicy::PerView).unwrap();
        assert_eq!(net.skim_calls(), v.views.len());
    }

    #[test]
    fn per_view_baseline_gives_the_same_count() {
        let net = SkimFocusNet::new(&tiny(), 1).unwrap();
        let v = PreparedVideo::new(&video(8), None, &net.config, CountMode::Standard).unwrap();
        let a = net.count_video(&v).unwrap();
        let b = net.count_video_with(&v, SkimPolicy::PerView).unwrap();
        assert_eq!(a.raw_count, b.raw_count);
    }

    #[test]
    fn count_is_the_sum_of_view_sums() {
        let net = SkimFocusNet::new(&tiny(), 2).unwrap();
        let v = PreparedVideo::new(&video(6), None, &net.config, CountMode::Standard).unwrap();
        let p = net.count_video(&v).unwrap();
        let total: f64 = p.view_sums.iter().sum();
        assert_eq!(p.raw_count, total);
        assert!(p.count >= 0.0);
        assert_eq!(p.instructive.len(), 4);
    }

    #[test]
    fn specified_mode_needs_an_exemplar() {
        let err = PreparedVideo::new(&video(3), None, &tiny(), CountMode::Specified).unwrap_err();
        assert!(matches!(err, Error::MissingExemplar(_)));
    }

    #[test]
    fn skim_disabled_has_no_skim_parameters() {
        let mut cfg = tiny();
        cfg.ablations.skim_enabled = false;
        let net = SkimFocusNet::new(&cfg, 0).unwrap();
        assert_eq!(net.params.numel_with_prefix("skim."), 0);
        let v = PreparedVideo::new(&video(4), None, &cfg, CountMode::Standard).unwrap();
        let p = net.count_video(&v).unwrap();
        assert!(p.confidence.is_none());
        assert_eq!(net.skim_calls(), 0);
    }

    #[test]
    fn checkpoint_refuses_other_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.sfnc");
        let net = SkimFocusNet::new(&tiny(), 0).unwrap();
        net.save(&path).unwrap();
        assert!(SkimFocusNet::load(&path, &tiny()).is_ok());
        let mut other = tiny();
        other.lsag_blocks = 2;
        assert!(SkimFocusNet::load(&path, &other).is_err());
    }

    #[test]
    fn skim_encoder_is_smaller_than_focus_encoder() {
        let net = SkimFocusNet::new(&ModelConfig::desk(16), 0).unwrap();
        assert!(net.params.numel_with_prefix("skim.enc.") < net.params.numel_with_prefix("focus.enc."));
    }
}
