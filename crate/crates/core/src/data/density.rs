use super::AnnotatedSequence;
use crate::error::{Error, Result};

/// Per-frame map whose unmasked sum is a repetition count.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMap {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DensityMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sum over unmasked positions. No clamping.
pub fn count_from_density(map: &DensityMap) -> f64 {
    map.values
        .iter()
        .zip(&map.mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .sum()
}

/// Unit-mass truncated Gaussian over the frames of `[start, end)`, centered
/// on the interval midpoint with σ = (end − start) / 6.
fn cycle_mass(start: usize, end: usize) -> impl Iterator<Item = (usize, f64)> {
    let center = (start + end) as f64 / 2.0;
    let sigma = (end - start) as f64 / 6.0;
    let weights: Vec<f64> = (start..end)
        .map(|t| {
            let z = (t as f64 + 0.5 - center) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    (start..end).zip(weights).map(move |(t, w)| (t, w / total))
}

/// Owner cells for sorted distinct indices. Cell `k` covers raw frames `t`
/// with `lo[k] <= 2t < hi[k]` (bounds are doubled to stay in integers).
///
/// Interior boundaries sit at midpoints. The outer cells reach half a
/// `stride` beyond their index, except that they run to the sequence ends
/// when no further index at that stride could fit there; this keeps the maps
/// of adjacent views additive while losing no mass at the extremes. Without
/// a stride both outer cells run to the ends.
fn cells(unique: &[usize], t_raw: usize, stride: Option<usize>) -> Vec<(i64, i64)> {
    let m = unique.len();
    let u: Vec<i64> = unique.iter().map(|&x| x as i64).collect();
    let t = t_raw as i64;
    (0..m)
        .map(|k| {
            let lo = match stride {
                _ if k > 0 => u[k - 1] + u[k],
                Some(s) if u[0] >= s as i64 => 2 * u[0] - s as i64,
                _ => i64::MIN,
            };
            let hi = match stride {
                _ if k + 1 < m => u[k] + u[k + 1],
                Some(s) if t - u[m - 1] > s as i64 => 2 * u[m - 1] + s as i64,
                _ => i64::MAX,
            };
            (lo, hi)
        })
        .collect()
}

/// How the outermost cells of an index list are bounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edges {
    /// Indices come from a grid whose stride is their largest gap.
    Inferred,
    /// Indices come from the grid `{0, s, 2s, ..}`.
    Stride(usize),
    /// The list covers the whole sequence: outer cells run to both ends.
    Open,
}

/// Ground-truth density over `target_indices`, edges inferred.
///
/// Each cycle contributes mass 1 spread over its raw frames; every raw
/// frame's mass is then moved to the nearest selected index. The maps of
/// consecutive chunks of one grid add up to the map of the whole grid.
/// Repeated index values (view padding) share the cell of their first
/// occurrence. Masked positions hold 0 and any mass routed to them is
/// dropped.
pub fn build_gt_density(
    seq: &AnnotatedSequence,
    target_indices: &[usize],
    mask: &[bool],
) -> Result<DensityMap> {
    build_gt_density_with(seq, target_indices, mask, Edges::Inferred)
}

/// [`build_gt_density`] with an explicit edge rule. A chunk holding a single
/// index needs [`Edges::Stride`] to stay additive; a subsampled list that
/// spans the sequence needs [`Edges::Open`] to keep all mass.
pub fn build_gt_density_with(
    seq: &AnnotatedSequence,
    target_indices: &[usize],
    mask: &[bool],
    edges: Edges,
) -> Result<DensityMap> {
    let stride = match edges {
        Edges::Inferred => target_indices
            .windows(2)
            .map(|w| w[1].saturating_sub(w[0]))
            .max()
            .filter(|&s| s > 0),
        Edges::Stride(0) => return Err(Error::Config("density grid stride must be positive".into())),
        Edges::Stride(s) => Some(s),
        Edges::Open => None,
    };
    build(seq, target_indices, mask, stride)
}

fn build(
    seq: &AnnotatedSequence,
    target_indices: &[usize],
    mask: &[bool],
    stride: Option<usize>,
) -> Result<DensityMap> {
    if target_indices.is_empty() {
        return Err(Error::EmptyView);
    }
    if mask.len() != target_indices.len() {
        return Err(Error::MaskMismatch {
            expected: target_indices.len(),
            got: mask.len(),
        });
    }
    let t_raw = seq.len();
    let mut raw = vec![0.0; t_raw];
    for &(s, e) in &seq.cycles {
        for (t, w) in cycle_mass(s, e) {
            raw[t] += w;
        }
    }

    // First position holding each distinct index value.
    let mut unique = Vec::new();
    let mut owner = Vec::new();
    for (pos, &idx) in target_indices.iter().enumerate() {
        if unique.last() != Some(&idx) {
            unique.push(idx);
            owner.push(pos);
        }
    }
    let cells = cells(&unique, t_raw, stride);

    let mut values = vec![0.0; target_indices.len()];
    let mut cell = 0;
    for (t, &mass) in raw.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let twice = 2 * t as i64;
        while cell < cells.len() && twice >= cells[cell].1 {
            cell += 1;
        }
        if cell == cells.len() {
            break;
        }
        if twice >= cells[cell].0 && mask[owner[cell]] {
            values[owner[cell]] += mass;
        }
    }
    Ok(DensityMap {
        values,
        mask: mask.to_vec(),
    })
}
