use super::AnnotatedSequence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewConfig {
    /// `R`
    pub downsample_rate: usize,
    /// `N_S`
    pub context_len: usize,
    /// `N_F`
    pub view_len: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            downsample_rate: 4,
            context_len: 256,
            view_len: 64,
        }
    }
}

/// One contextual view and `M` fine-grained views, all as raw-frame indices.
///
/// Padded slots repeat the last real index of their view and are masked out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewPlan {
    pub downsample_rate: usize,
    pub raw_len: usize,
    pub contextual_indices: Vec<usize>,
    pub pad_mask_context: Vec<bool>,
    pub fine_views: Vec<Vec<usize>>,
    pub pad_mask_fine: Vec<Vec<bool>>,
}

impl ViewPlan {
    /// `M`
    pub fn num_views(&self) -> usize {
        self.fine_views.len()
    }

    /// Number of downsampled frames.
    pub fn downsampled_len(&self) -> usize {
        self.raw_len.div_ceil(self.downsample_rate)
    }
}

fn pad_to(mut indices: Vec<usize>, len: usize) -> (Vec<usize>, Vec<bool>) {
    let real = indices.len();
    let last = *indices.last().expect("non-empty view");
    indices.resize(len, last);
    let mask = (0..len).map(|i| i < real).collect();
    (indices, mask)
}

/// Splits a sequence into the contextual view and the fine-grained views.
///
/// The sequence is downsampled to `{0, R, 2R, ..}`. Fine views are
/// consecutive chunks of `N_F` downsampled frames with the last chunk padded.
/// The contextual view is the downsampled sequence itself when it fits in
/// `N_S`, otherwise `N_S` uniformly spaced downsampled frames.
pub fn decompose(seq: &AnnotatedSequence, cfg: &ViewConfig) -> Result<ViewPlan> {
    plan_for_length(seq.len(), cfg)
}

pub(crate) fn plan_for_length(raw_len: usize, cfg: &ViewConfig) -> Result<ViewPlan> {
    if cfg.downsample_rate == 0 || cfg.context_len == 0 || cfg.view_len == 0 {
        return Err(Error::Config(format!("view sizes must be positive: {cfg:?}")));
    }
    if raw_len == 0 {
        return Err(Error::EmptySequence);
    }
    let downsampled: Vec<usize> = (0..raw_len).step_by(cfg.downsample_rate).collect();
    let l = downsampled.len();

    let (fine_views, pad_mask_fine) = downsampled
        .chunks(cfg.view_len)
        .map(|chunk| pad_to(chunk.to_vec(), cfg.view_len))
        .unzip();

    let context = if l <= cfg.context_len {
        downsampled.clone()
    } else {
        (0..cfg.context_len)
            .map(|k| downsampled[k * l / cfg.context_len])
            .collect()
    };
    let (contextual_indices, pad_mask_context) = pad_to(context, cfg.context_len);

    Ok(ViewPlan {
        downsample_rate: cfg.downsample_rate,
        raw_len,
        contextual_indices,
        pad_mask_context,
        fine_views,
        pad_mask_fine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(r: usize, ns: usize, nf: usize) -> ViewConfig {
        ViewConfig {
            downsample_rate: r,
            context_len: ns,
            view_len: nf,
        }
    }

    #[test]
    fn default_sizes_on_1024_frames() {
        let plan = plan_for_length(1024, &cfg(4, 256, 64)).unwrap();
        assert_eq!(plan.downsampled_len(), 256);
        assert_eq!(plan.num_views(), 4);
        assert!(plan.pad_mask_context.iter().all(|&m| m));
    }

    #[test]
    fn short_sequence_pads_single_view() {
        let plan = plan_for_length(100, &cfg(4, 256, 64)).unwrap();
        assert_eq!(plan.num_views(), 1);
        let padded = plan.pad_mask_fine[0].iter().filter(|&&m| !m).count();
        assert_eq!(padded, 39);
        assert_eq!(plan.pad_mask_context.iter().filter(|&&m| m).count(), 25);
    }

    #[test]
    fn long_sequence_context_is_uniform() {
        let plan = plan_for_length(4096, &cfg(4, 256, 64)).unwrap();
        let expect: Vec<usize> = (0..256).map(|k| (k * 1024 / 256) * 4).collect();
        assert_eq!(plan.contextual_indices, expect);
        assert!(expect.windows(2).all(|w| w[1] - w[0] == 16));
    }

    #[test]
    fn empty_and_zero_sizes_rejected() {
        assert!(matches!(
            plan_for_length(0, &cfg(4, 8, 8)),
            Err(Error::EmptySequence)
        ));
        assert!(plan_for_length(10, &cfg(0, 8, 8)).is_err());
    }
}
