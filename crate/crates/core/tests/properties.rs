use ndarray::Array2;
use proptest::prelude::*;

mod common;
use common::*;

use skimfocus::arch::{DensityDecoder, Encoder, Lsag};
use skimfocus::config::{ModelConfig, Sampling};
use skimfocus::eval::{mae, obo};
use skimfocus::focus::pool_guidance;
use skimfocus::nn::{init_params, Graph, ParamSpec, ParamStore};
use skimfocus::skim::sample_instructive;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn top_nc_keeps_the_largest_values_with_lower_index_ties(map in confidence_map(), pick in 1usize..40) {
        top_nc_optimal(&map, pick)?;
    }

    #[test]
    fn uniform_follows_the_index_formula(map in confidence_map(), pick in 1usize..40) {
        uniform_formula(&map, pick)?;
    }

    #[test]
    fn top_nc_is_permutation_equivariant(values in distinct_values(), pick in 1usize..30, shuffle_seed in any::<u64>()) {
        top_nc_equivariant(&values, pick, shuffle_seed)?;
    }

    #[test]
    fn random_sampling_is_seeded_distinct_and_unmasked(map in confidence_map(), pick in 1usize..40, seed in any::<u64>()) {
        let avail = available(&map);
        prop_assume!(!avail.is_empty());
        let n = 1 + pick % avail.len();
        let a = sample_instructive(&map, Sampling::Random, n, seed).unwrap();
        let b = sample_instructive(&map, Sampling::Random, n, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(a.iter().all(|&i| map.mask[i]));
    }

    #[test]
    fn asking_for_too_many_frames_is_an_error(map in confidence_map(), extra in 1usize..5) {
        let n = available(&map).len() + extra;
        for s in [Sampling::Random, Sampling::Uniform, Sampling::TopNc] {
            prop_assert!(sample_instructive(&map, s, n, 0).is_err());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn density_mass_is_conserved_under_any_tiling(case in annotation_and_tiling()) {
        density_mass_and_tiling(case)?;
    }

    #[test]
    fn pooled_guidance_ignores_frame_order_and_padding(
        rows in 1usize..8,
        seed in any::<u64>(),
        rotate in 0usize..8,
    ) {
        let x = random_array(rows + 2, 3, seed);
        let mut mask = vec![true; rows];
        mask.extend([false, false]);
        let store: ParamStore<f64> = init_params(&[], 0).unwrap();
        let pooled = |x: Array2<f64>, mask: &[bool]| {
            let mut g = Graph::new(&store);
            let v = g.input(x);
            let z = pool_guidance(&mut g, v, mask).unwrap();
            g.value(z).clone()
        };
        let base = pooled(x.clone(), &mask);
        let k = rotate % rows;
        let mut rotated = x.clone();
        for i in 0..rows {
            rotated.row_mut(i).assign(&x.row((i + k) % rows));
        }
        rotated.row_mut(rows).fill(1e6);
        prop_assert_eq!(base.clone(), pooled(rotated, &mask));
        for c in 0..3 {
            let oracle = (0..rows).map(|i| x[[i, c]]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(base[[0, c]], oracle);
        }
    }

    #[test]
    fn metrics_are_symmetric_in_item_order(
        items in prop::collection::vec((1u32..30, 0.0f64..35.0), 1..20),
        rot in 0usize..20,
    ) {
        let gts: Vec<f64> = items.iter().map(|p| f64::from(p.0)).collect();
        let preds: Vec<f64> = items.iter().map(|p| p.1).collect();
        let k = rot % items.len();
        let mut g2 = gts.clone();
        let mut p2 = preds.clone();
        g2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert!((mae(&preds, &gts).unwrap().0 - mae(&p2, &g2).unwrap().0).abs() < 1e-12);
        prop_assert_eq!(obo(&preds, &gts).unwrap(), obo(&p2, &g2).unwrap());
        let perfect = obo(&gts, &gts).unwrap();
        prop_assert_eq!(perfect, 1.0);
        prop_assert_eq!(mae(&gts, &gts).unwrap().0, 0.0);
    }
}

fn random_array(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut state = seed | 1;
    Array2::from_shape_fn((rows, cols), |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

fn tiny_model() -> ModelConfig {
    let mut cfg = ModelConfig::desk(5);
    cfg.d = 8;
    cfg.heads = 2;
    cfg.encoder_blocks = 1;
    cfg.lsag_blocks = 1;
    cfg.view.view_len = 10;
    cfg
}

fn store_for(specs: &[ParamSpec], seed: u64) -> ParamStore<f64> {
    init_params(specs, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Garbage in padded rows must not reach any real position, for the
    /// encoder, LSAG and the density decoder.
    #[test]
    fn padded_rows_are_never_read(real in 1usize..=10, seed in any::<u64>()) {
        let cfg = tiny_model();
        let n = cfg.view.view_len;
        let mask: Vec<bool> = (0..n).map(|i| i < real).collect();
        let x_clean = {
            let mut x = random_array(n, cfg.d_in, seed);
            for i in real..n {
                x.row_mut(i).fill(0.0);
            }
            x
        };
        let mut x_dirty = x_clean.clone();
        for i in real..n {
            x_dirty.row_mut(i).fill(50.0 + i as f64);
        }

        let enc = Encoder::new("enc", cfg.d_in, cfg.d, cfg.heads, cfg.kernel, 1);
        let lsag = Lsag::new("lsag", &cfg);
        let dec = DensityDecoder::new("dec", cfg.d, n, cfg.d, cfg.heads, cfg.ffn_mult);
        let mut specs = Vec::new();
        enc.specs(&mut specs);
        lsag.specs(&mut specs);
        dec.specs(&mut specs);
        let store = store_for(&specs, seed ^ 0x55);
        let z = random_array(1, cfg.d, seed ^ 1);

        let run = |x: Array2<f64>| {
            let mut g = Graph::new(&store);
            let x = g.input(x);
            let zv = g.input(z.clone());
            let h = enc.forward(&mut g, x, &mask).unwrap();
            let h = lsag.forward(&mut g, h, zv, &mask).unwrap();
            let d = dec.forward(&mut g, h, &mask).unwrap();
            g.value(d).clone()
        };
        let a = run(x_clean);
        let b = run(x_dirty);
        for i in 0..n {
            if mask[i] {
                prop_assert!((a[[i, 0]] - b[[i, 0]]).abs() <= 1e-6);
            } else {
                prop_assert_eq!(a[[i, 0]], 0.0);
                prop_assert_eq!(b[[i, 0]], 0.0);
            }
        }
    }
}
