//! Property bodies shared by the proptest suite and the acceptance run.
#![allow(dead_code)]

use std::collections::HashSet;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use skimfocus::config::Sampling;
use skimfocus::data::{build_gt_density_with, count_from_density, decompose, DensityMap, Edges, ViewConfig};
use skimfocus::skim::sample_instructive;
use skimfocus::synth::{generate_sequence, SynthConfig};

pub type Check = std::result::Result<(), TestCaseError>;

/// Small integer-valued confidences so ties are common.
pub fn confidence_map() -> impl Strategy<Value = DensityMap> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-3i32..4, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(prop::bool::weighted(0.8), n),
        )
            .prop_map(|(values, mask)| DensityMap { values, mask })
    })
}

pub fn available(map: &DensityMap) -> Vec<usize> {
    (0..map.len()).filter(|&i| map.mask[i]).collect()
}

pub fn top_nc_optimal(map: &DensityMap, pick: usize) -> Check {
    let avail = available(map);
    prop_assume!(!avail.is_empty());
    let n = 1 + pick % avail.len();
    let picked = sample_instructive(map, Sampling::TopNc, n, 0).unwrap();
    prop_assert_eq!(picked.len(), n);
    prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
    for &i in &avail {
        if picked.contains(&i) {
            continue;
        }
        for &p in &picked {
            let (vp, vi) = (map.values[p], map.values[i]);
            // A left-out frame is never better, and on a tie it sits later.
            prop_assert!(
                vp > vi || (vp == vi && p < i),
                "picked {p} ({vp}) over {i} ({vi})"
            );
        }
    }
    Ok(())
}

pub fn uniform_formula(map: &DensityMap, pick: usize) -> Check {
    let avail = available(map);
    prop_assume!(!avail.is_empty());
    let n = 1 + pick % avail.len();
    let picked = sample_instructive(map, Sampling::Uniform, n, 0).unwrap();
    let l = avail.len();
    let expected: Vec<usize> = (0..n).map(|k| avail[(k * l) / n]).collect();
    prop_assert_eq!(picked, expected);
    Ok(())
}

/// Distinct values, so the selected set is a function of the values alone.
pub fn top_nc_equivariant(values: &HashSet<i32>, pick: usize, shuffle_seed: u64) -> Check {
    let values: Vec<f64> = values.iter().copied().map(f64::from).collect();
    let len = values.len();
    let n = 1 + pick % len;
    let mut perm: Vec<usize> = (0..len).collect();
    let mut state = shuffle_seed;
    for i in (1..len).rev() {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        perm.swap(i, (state >> 33) as usize % (i + 1));
    }
    let mut permuted = vec![0.0; len];
    for (i, &p) in perm.iter().enumerate() {
        permuted[p] = values[i];
    }
    let mask = vec![true; len];
    let a = sample_instructive(
        &DensityMap {
            values,
            mask: mask.clone(),
        },
        Sampling::TopNc,
        n,
        0,
    )
    .unwrap();
    let b = sample_instructive(
        &DensityMap {
            values: permuted,
            mask,
        },
        Sampling::TopNc,
        n,
        0,
    )
    .unwrap();
    let mut mapped: Vec<usize> = a.iter().map(|&i| perm[i]).collect();
    mapped.sort_unstable();
    prop_assert_eq!(mapped, b);
    Ok(())
}

pub fn distinct_values() -> impl Strategy<Value = HashSet<i32>> {
    prop::collection::hash_set(-1000i32..1000, 1..30)
}

/// `(class, cycles, seed, R, N_F, N_S)` for one random annotation and tiling.
pub fn annotation_and_tiling() -> impl Strategy<Value = (usize, usize, u64, usize, usize, usize)> {
    (
        0usize..4,
        0usize..10,
        any::<u64>(),
        1usize..6,
        1usize..40,
        1usize..80,
    )
}

/// Mass of the whole track, of every fine view and of the contextual view
/// equals the cycle count, and the fine views tile the track exactly.
pub fn density_mass_and_tiling(
    (class, cycles, seed, r, view_len, context_len): (usize, usize, u64, usize, usize, usize),
) -> Check {
    let seq = generate_sequence(class, cycles, &SynthConfig::default(), seed);
    let cfg = ViewConfig {
        downsample_rate: r,
        context_len,
        view_len,
    };
    let plan = decompose(&seq, &cfg).unwrap();

    let all: Vec<usize> = (0..plan.downsampled_len()).map(|k| k * r).collect();
    let track = build_gt_density_with(&seq, &all, &vec![true; all.len()], Edges::Stride(r)).unwrap();
    prop_assert!((count_from_density(&track) - cycles as f64).abs() < 1e-6);

    let mut total = 0.0;
    let mut offset = 0;
    for (idx, mask) in plan.fine_views.iter().zip(&plan.pad_mask_fine) {
        let view = build_gt_density_with(&seq, idx, mask, Edges::Stride(r)).unwrap();
        total += count_from_density(&view);
        for (k, &keep) in mask.iter().enumerate() {
            if keep {
                prop_assert!((view.values[k] - track.values[offset]).abs() < 1e-6);
                offset += 1;
            } else {
                prop_assert_eq!(view.values[k], 0.0);
            }
        }
    }
    prop_assert_eq!(offset, all.len());
    prop_assert!((total - cycles as f64).abs() < 1e-6);

    let context = build_gt_density_with(
        &seq,
        &plan.contextual_indices,
        &plan.pad_mask_context,
        Edges::Open,
    )
    .unwrap();
    prop_assert!((count_from_density(&context) - cycles as f64).abs() < 1e-6);
    Ok(())
}
