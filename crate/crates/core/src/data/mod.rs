//! Annotated sequences, ground-truth density maps and the contextual /
//! fine-grained view decomposition.

mod density;
pub mod io;
mod views;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub use density::{build_gt_density, build_gt_density_with, count_from_density, DensityMap, Edges};
pub use views::{decompose, ViewConfig, ViewPlan};

/// Half-open `[start, end)` interval in raw-frame units.
pub type Cycle = (usize, usize);

/// A frame-feature sequence with its repetition annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSequence {
    pub id: String,
    pub class_label: String,
    /// `T_raw × d_in`, one row per raw frame.
    pub features: Array2<f32>,
    /// Sorted, non-overlapping repetition intervals.
    pub cycles: Vec<Cycle>,
    pub source: String,
}

impl AnnotatedSequence {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Ground-truth repetition count.
    pub fn count(&self) -> usize {
        self.cycles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSequence {
            id: self.id.clone(),
            reason,
        };
        let mut prev_end = 0;
        for (i, &(s, e)) in self.cycles.iter().enumerate() {
            if s >= e || e > self.len() {
                return Err(bad(format!("cycle {i} [{s}, {e}) outside 0..{}", self.len())));
            }
            if i > 0 && s < prev_end {
                return Err(bad(format!("cycle {i} overlaps or is out of order")));
            }
            prev_end = e;
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite feature".into()));
        }
        Ok(())
    }

    /// Rows at `indices`, with rows whose mask entry is `false` zeroed.
    pub fn gather(&self, indices: &[usize], mask: &[bool]) -> Array2<f32> {
        let mut out = self.features.select(Axis(0), indices);
        for (mut row, &keep) in out.axis_iter_mut(Axis(0)).zip(mask) {
            if !keep {
                row.fill(0.0);
            }
        }
        out
    }
}
