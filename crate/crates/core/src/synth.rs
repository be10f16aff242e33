//! Synthetic repetitive feature sequences and multi-action composition.
//!
//! Every class owns a closed waveform in feature space. A sequence renders
//! that waveform once per repetition at a jittered period, separates
//! repetitions with occasional idle drift, and adds Gaussian noise. Since the
//! renderer lays out every cycle itself, annotations are exact.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::io::{write_features, write_manifest, ManifestEntry, EXEMPLAR_MANIFEST};
use crate::data::AnnotatedSequence;
use crate::error::{Error, Result};

/// Phase samples stored per class waveform.
const TEMPLATE_PHASES: usize = 32;
const HARMONICS: usize = 3;
/// Probability of an idle gap before a repetition (other than the first).
const GAP_PROB: f64 = 0.25;
const PERIOD_JITTER: f64 = 0.15;
const IDLE_MEMORY: f32 = 0.8;
const IDLE_STD: f32 = 0.15;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub d_in: usize,
    /// Inclusive range of repetition lengths in raw frames.
    pub cycle_len_range: (usize, usize),
    /// Inclusive range of repetitions per generated sequence.
    pub cycles_range: (usize, usize),
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            d_in: 16,
            cycle_len_range: (12, 32),
            cycles_range: (3, 12),
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.cycle_len_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("bad cycle_len_range {lo}..={hi}")));
        }
        let (lo, hi) = self.cycles_range;
        if lo > hi {
            return Err(Error::Config(format!("bad cycles_range {lo}..={hi}")));
        }
        if self.num_classes == 0 || self.d_in == 0 {
            return Err(Error::Config("num_classes and d_in must be positive".into()));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(Error::Config(format!("noise_std {} < 0", self.noise_std)));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gauss(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

pub fn class_name(class_id: usize) -> String {
    format!("class-{class_id}")
}

/// The class waveform: `TEMPLATE_PHASES × d_in`, one unit-norm row per phase
/// sample. Depends only on `(cfg.seed, cfg.d_in, class_id)`.
pub fn class_template(cfg: &SynthConfig, class_id: usize) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7e3, class_id as u64));
    let mut draw = |scale: f32| -> Vec<f32> {
        (0..cfg.d_in)
            .map(|_| scale * gauss(&mut rng))
            .collect::<Vec<f32>>()
    };
    let offset = draw(1.0);
    let coeffs: Vec<(Vec<f32>, Vec<f32>)> = (1..=HARMONICS)
        .map(|h| (draw(1.0 / h as f32), draw(1.0 / h as f32)))
        .collect();
    let mut template = Array2::zeros((TEMPLATE_PHASES, cfg.d_in));
    for (p, mut row) in template.axis_iter_mut(Axis(0)).enumerate() {
        let phase = std::f32::consts::TAU * p as f32 / TEMPLATE_PHASES as f32;
        for c in 0..cfg.d_in {
            let mut v = offset[c];
            for (h, (a, b)) in coeffs.iter().enumerate() {
                let w = (h + 1) as f32 * phase;
                v += a[c] * w.cos() + b[c] * w.sin();
            }
            row[c] = v;
        }
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|x| x / norm);
    }
    template
}

/// One repetition of `template` stretched to `len` frames by periodic linear
/// interpolation over phase.
pub fn render_cycle(template: &Array2<f32>, len: usize) -> Array2<f32> {
    let p = template.nrows();
    let mut out = Array2::zeros((len, template.ncols()));
    for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let pos = j as f32 * p as f32 / len as f32;
        let lo = pos.floor() as usize % p;
        let hi = (lo + 1) % p;
        let frac = pos - pos.floor();
        row.assign(&(&template.row(lo) * (1.0 - frac) + &template.row(hi) * frac));
    }
    out
}

fn idle_frames(rng: &mut ChaCha8Rng, len: usize, d: usize) -> Array2<f32> {
    let mut out = Array2::zeros((len, d));
    let innovation = IDLE_STD * (1.0 - IDLE_MEMORY * IDLE_MEMORY).sqrt();
    let mut state: Vec<f32> = (0..d).map(|_| IDLE_STD * gauss(rng)).collect::<Vec<f32>>();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (c, s) in state.iter_mut().enumerate() {
            *s = IDLE_MEMORY * *s + innovation * gauss(rng);
            row[c] = *s;
        }
    }
    out
}

/// Renders `n_cycles` repetitions of class `class_id`.
///
/// Same `(class_id, n_cycles, cfg, seed)` always gives bit-identical output.
pub fn generate_sequence(
    class_id: usize,
    n_cycles: usize,
    cfg: &SynthConfig,
    seed: u64,
) -> AnnotatedSequence {
    let template = class_template(cfg, class_id);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5e9, class_id as u64));
    let (min_len, max_len) = cfg.cycle_len_range;
    let base = rng.random_range(min_len as f64..=max_len as f64);

    let mut pieces: Vec<Array2<f32>> = Vec::new();
    let mut cycles = Vec::with_capacity(n_cycles);
    let mut cursor = 0;
    let mut push = |piece: Array2<f32>, cursor: &mut usize| {
        *cursor += piece.nrows();
        pieces.push(piece);
    };

    let lead = rng.random_range(0..=max_len);
    push(idle_frames(&mut rng, lead, cfg.d_in), &mut cursor);
    for i in 0..n_cycles {
        if i > 0 && rng.random_bool(GAP_PROB) {
            let gap = rng.random_range(1..=(min_len / 2).max(1));
            push(idle_frames(&mut rng, gap, cfg.d_in), &mut cursor);
        }
        let jitter = rng.random_range(-PERIOD_JITTER..=PERIOD_JITTER);
        let len = ((base * (1.0 + jitter)).round() as usize).clamp(min_len, max_len);
        cycles.push((cursor, cursor + len));
        push(render_cycle(&template, len), &mut cursor);
    }
    let tail = rng.random_range(0..=max_len);
    let tail = if cursor + tail == 0 { 1 } else { tail };
    push(idle_frames(&mut rng, tail, cfg.d_in), &mut cursor);

    let views: Vec<_> = pieces.iter().map(|p| p.view()).collect();
    let mut features = concatenate(Axis(0), &views).expect("equal widths");
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std as f32).expect("finite std");
        features.mapv_inplace(|x| x + noise.sample(&mut rng));
    }
    AnnotatedSequence {
        id: format!("{}-{seed:016x}", class_name(class_id)),
        class_label: class_name(class_id),
        features,
        cycles,
        source: format!("synth class={class_id} cycles={n_cycles} seed={seed}"),
    }
}

/// `(class, start, end)` of one piece of a composite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub class: String,
    pub start: usize,
    pub end: usize,
}

/// A multi-action sequence paired with an exemplar of its target class.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiRepUnit {
    /// Only target-class cycles are annotated.
    pub composite: AnnotatedSequence,
    pub exemplar: AnnotatedSequence,
    pub target_class: String,
    pub segment_layout: Vec<Segment>,
}

impl MultiRepUnit {
    pub fn target_fraction(&self) -> f64 {
        let target: usize = self
            .segment_layout
            .iter()
            .filter(|s| s.class == self.target_class)
            .map(|s| s.end - s.start)
            .sum();
        target as f64 / self.composite.len() as f64
    }

    pub fn distinct_classes(&self) -> usize {
        self.segment_layout
            .iter()
            .map(|s| s.class.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComposeConfig {
    /// Share of composite frames taken by the target.
    pub target_fraction: f64,
    /// The realized share is drawn uniformly within `±fraction_jitter`.
    pub fraction_jitter: f64,
    /// Inclusive range for the number of distractor classes.
    pub distractor_classes: (usize, usize),
    /// Upper bound on the number of pieces the target is cut into.
    pub max_target_chunks: usize,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            target_fraction: 0.5,
            fraction_jitter: 0.05,
            distractor_classes: (3, 5),
            max_target_chunks: 4,
        }
    }
}

/// Cuts `total` into `parts` positive lengths with random proportions.
fn split_budget(rng: &mut ChaCha8Rng, total: usize, parts: usize) -> Vec<usize> {
    let weights: Vec<f64> = (0..parts).map(|_| rng.random_range(0.5..1.5)).collect();
    let sum: f64 = weights.iter().sum();
    let spare = total - parts;
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| 1 + (spare as f64 * w / sum).floor() as usize)
        .collect();
    let assigned: usize = lens.iter().sum();
    lens[parts - 1] += total - assigned;
    lens
}

/// Draws `len` frames of class `class` from the pool, concatenating clips
/// from several pool sequences when one is too short.
fn draw_clip(rng: &mut ChaCha8Rng, candidates: &[&AnnotatedSequence], len: usize) -> Array2<f32> {
    let mut parts = Vec::new();
    let mut remaining = len;
    while remaining > 0 {
        let src = candidates.choose(rng).expect("class present in pool");
        let take = remaining.min(src.len());
        let start = rng.random_range(0..=src.len() - take);
        parts.push(src.features.slice(s![start..start + take, ..]).to_owned());
        remaining -= take;
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("equal widths")
}

/// Interleaves the target with clips of at least three other classes.
///
/// The target is cut only at cycle starts, so no annotated repetition is
/// split. Distractor clips carry no annotations.
pub fn compose_multirep(
    target: &AnnotatedSequence,
    distractor_pool: &[AnnotatedSequence],
    exemplar_pool: &[AnnotatedSequence],
    cfg: &ComposeConfig,
    seed: u64,
) -> Result<MultiRepUnit> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xc0, 0));
    let target_class = target.class_label.clone();

    let other: Vec<&str> = distractor_pool
        .iter()
        .map(|s| s.class_label.as_str())
        .filter(|c| *c != target_class)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (min_k, max_k) = cfg.distractor_classes;
    if other.len() < min_k.max(3) {
        return Err(Error::InsufficientDistractors(format!(
            "need {} classes other than {target_class}, pool has {}",
            min_k.max(3),
            other.len()
        )));
    }
    let exemplars: Vec<&AnnotatedSequence> = exemplar_pool
        .iter()
        .filter(|s| s.class_label == target_class)
        .collect();
    let exemplar = (*exemplars
        .choose(&mut rng)
        .ok_or_else(|| Error::MissingExemplar(target_class.clone()))?)
    .clone();

    let k = rng.random_range(min_k..=max_k).min(other.len());
    let mut classes = other.clone();
    classes.shuffle(&mut rng);
    classes.truncate(k);

    let fraction = cfg.target_fraction + rng.random_range(-cfg.fraction_jitter..=cfg.fraction_jitter);
    let t_len = target.len();
    let budget = ((t_len as f64 * (1.0 - fraction) / fraction).round() as usize).max(k);
    let mut clips: Vec<(String, Array2<f32>)> = split_budget(&mut rng, budget, k)
        .into_iter()
        .zip(&classes)
        .map(|(len, class)| {
            let candidates: Vec<&AnnotatedSequence> = distractor_pool
                .iter()
                .filter(|s| s.class_label == *class && !s.is_empty())
                .collect();
            (class.to_string(), draw_clip(&mut rng, &candidates, len))
        })
        .collect();
    clips.shuffle(&mut rng);

    // Target chunks, cut at cycle starts.
    let n = target.cycles.len();
    let max_chunks = cfg.max_target_chunks.max(1).min(n.max(1));
    let chunks = rng.random_range(1..=max_chunks).max(2.min(max_chunks));
    let mut cut_candidates: Vec<usize> = target.cycles.iter().skip(1).map(|c| c.0).collect();
    cut_candidates.shuffle(&mut rng);
    let mut cuts: Vec<usize> = cut_candidates.into_iter().take(chunks - 1).collect();
    cuts.sort_unstable();
    let bounds: Vec<usize> = std::iter::once(0)
        .chain(cuts)
        .chain(std::iter::once(t_len))
        .collect();
    let num_chunks = bounds.len() - 1;

    // Gap g sits before target chunk g; gap num_chunks is after the last.
    let mut gaps: Vec<Vec<(String, Array2<f32>)>> = vec![Vec::new(); num_chunks + 1];
    for clip in clips {
        let g = rng.random_range(0..=num_chunks);
        gaps[g].push(clip);
    }

    let mut pieces: Vec<Array2<f32>> = Vec::new();
    let mut layout = Vec::new();
    let mut cycles = Vec::with_capacity(n);
    let mut cursor = 0;
    for (g, gap) in gaps.into_iter().enumerate() {
        for (class, clip) in gap {
            layout.push(Segment {
                class,
                start: cursor,
                end: cursor + clip.nrows(),
            });
            cursor += clip.nrows();
            pieces.push(clip);
        }
        if g < num_chunks {
            let (a, b) = (bounds[g], bounds[g + 1]);
            for &(s, e) in &target.cycles {
                if s >= a && e <= b {
                    cycles.push((s - a + cursor, e - a + cursor));
                }
            }
            layout.push(Segment {
                class: target_class.clone(),
                start: cursor,
                end: cursor + (b - a),
            });
            cursor += b - a;
            pieces.push(target.features.slice(s![a..b, ..]).to_owned());
        }
    }
    let views: Vec<_> = pieces.iter().map(|p| p.view()).collect();
    let features = concatenate(Axis(0), &views).expect("equal widths");
    let composite = AnnotatedSequence {
        id: format!("{}-mr{seed:016x}", target.id),
        class_label: target_class.clone(),
        features,
        cycles,
        source: format!("multirep target={} seed={seed}", target.id),
    };
    composite.validate()?;
    Ok(MultiRepUnit {
        composite,
        exemplar,
        target_class,
        segment_layout: layout,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// One action class per sequence.
    Single,
    /// Multi-action composites with exemplars.
    MultiRep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub kind: DatasetKind,
    /// Held-out exemplars per class (multi-action only).
    pub exemplars_per_class: usize,
    /// Distractor sequences generated per class and split (multi-action only).
    pub distractors_per_class: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 200,
            val: 50,
            test: 50,
            kind: DatasetKind::Single,
            exemplars_per_class: 3,
            distractors_per_class: 2,
        }
    }
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// In-memory dataset, before it is written out.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    /// `(split name, sequences, exemplar ids)` in `SPLITS` order.
    pub splits: Vec<(String, Vec<AnnotatedSequence>, Vec<Option<String>>)>,
    pub exemplars: Vec<AnnotatedSequence>,
}

fn draw_cycles(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> usize {
    rng.random_range(cfg.cycles_range.0..=cfg.cycles_range.1)
}

/// `per_class` held-out exemplars per class, with ids `exemplar-<class>-<e>`.
pub fn exemplar_pool(cfg: &SynthConfig, per_class: usize) -> Vec<AnnotatedSequence> {
    let mut out = Vec::with_capacity(cfg.num_classes * per_class);
    for class in 0..cfg.num_classes {
        for e in 0..per_class {
            let seed = mix_seed(cfg.seed, 0xe3, (class * 1000 + e) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = draw_cycles(&mut rng, cfg);
            let mut seq = generate_sequence(class, n, cfg, seed);
            seq.id = format!("exemplar-{class}-{e}");
            out.push(seq);
        }
    }
    out
}

fn distractor_pool(cfg: &SynthConfig, per_class: usize, tag: u64) -> Vec<AnnotatedSequence> {
    let mut out = Vec::with_capacity(cfg.num_classes * per_class);
    for class in 0..cfg.num_classes {
        for p in 0..per_class {
            let seed = mix_seed(cfg.seed, tag, (class * 1000 + p) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = draw_cycles(&mut rng, cfg);
            out.push(generate_sequence(class, n, cfg, seed));
        }
    }
    out
}

/// `units` standalone multi-action units; unit `i` targets class
/// `i mod num_classes` and has id `multirep-<i>`.
pub fn compose_units(
    cfg: &SynthConfig,
    units: usize,
    exemplars_per_class: usize,
    distractors_per_class: usize,
) -> Result<Vec<MultiRepUnit>> {
    cfg.validate()?;
    let exemplars = exemplar_pool(cfg, exemplars_per_class);
    let pool = distractor_pool(cfg, distractors_per_class, 0xdf);
    (0..units)
        .map(|i| {
            let seed = mix_seed(cfg.seed, 0x1f0, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = draw_cycles(&mut rng, cfg);
            let target = generate_sequence(i % cfg.num_classes, n, cfg, seed);
            let mut unit = compose_multirep(
                &target,
                &pool,
                &exemplars,
                &ComposeConfig::default(),
                mix_seed(seed, 0xc1, 0),
            )?;
            unit.composite.id = format!("multirep-{i:05}");
            Ok(unit)
        })
        .collect()
}

/// Generates every split. Item `j` of a split has class `j mod num_classes`,
/// which stratifies classes across splits; ids carry the split name so they
/// are disjoint.
pub fn generate_dataset(spec: &SplitSpec, cfg: &SynthConfig) -> Result<GeneratedDataset> {
    cfg.validate()?;
    if spec.kind == DatasetKind::MultiRep && cfg.num_classes < 4 {
        return Err(Error::InsufficientDistractors(format!(
            "multi-action composites need at least 4 classes, got {}",
            cfg.num_classes
        )));
    }
    let counts = [spec.train, spec.val, spec.test];
    let exemplars = if spec.kind == DatasetKind::MultiRep {
        exemplar_pool(cfg, spec.exemplars_per_class)
    } else {
        Vec::new()
    };
    let mut splits = Vec::new();
    for (si, (&name, &count)) in SPLITS.iter().zip(&counts).enumerate() {
        let pool = if spec.kind == DatasetKind::MultiRep {
            distractor_pool(cfg, spec.distractors_per_class, 0xd0 + si as u64)
        } else {
            Vec::new()
        };
        let mut items = Vec::with_capacity(count);
        let mut exemplar_ids = Vec::with_capacity(count);
        for j in 0..count {
            let class = j % cfg.num_classes;
            let seed = mix_seed(cfg.seed, 0x100 + si as u64, j as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = draw_cycles(&mut rng, cfg);
            let mut seq = generate_sequence(class, n, cfg, seed);
            let id = format!("{name}-{j:05}");
            match spec.kind {
                DatasetKind::Single => {
                    seq.id = id;
                    items.push(seq);
                    exemplar_ids.push(None);
                }
                DatasetKind::MultiRep => {
                    let unit = compose_multirep(
                        &seq,
                        &pool,
                        &exemplars,
                        &ComposeConfig::default(),
                        mix_seed(seed, 0xc1, 0),
                    )?;
                    let mut composite = unit.composite;
                    composite.id = id;
                    exemplar_ids.push(Some(unit.exemplar.id.clone()));
                    items.push(composite);
                }
            }
        }
        splits.push((name.to_string(), items, exemplar_ids));
    }
    Ok(GeneratedDataset { splits, exemplars })
}

pub(crate) fn write_sequences(
    dir: &Path,
    seqs: &[AnnotatedSequence],
    exemplar_ids: Option<&[Option<String>]>,
) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::with_capacity(seqs.len());
    for (i, seq) in seqs.iter().enumerate() {
        let rel = format!("features/{}.sfnf", seq.id);
        let mut out = BufWriter::new(fs::File::create(dir.join(&rel))?);
        write_features(&mut out, &seq.features)?;
        let mut entry = ManifestEntry::for_sequence(seq, rel);
        entry.exemplar_id = exemplar_ids.and_then(|ids| ids[i].clone());
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` (and `exemplars.jsonl`
/// for multi-action data) plus one feature file per sequence under
/// `features/`.
pub fn build_dataset(out_dir: &Path, spec: &SplitSpec, cfg: &SynthConfig) -> Result<GeneratedDataset> {
    let data = generate_dataset(spec, cfg)?;
    fs::create_dir_all(out_dir.join("features"))?;
    if !data.exemplars.is_empty() {
        let entries = write_sequences(out_dir, &data.exemplars, None)?;
        write_manifest(&out_dir.join(EXEMPLAR_MANIFEST), &entries)?;
    }
    for (name, seqs, ids) in &data.splits {
        let entries = write_sequences(out_dir, seqs, Some(ids))?;
        write_manifest(&out_dir.join(format!("{name}.jsonl")), &entries)?;
    }
    Ok(data)
}

/// Writes composed units: `multirep.jsonl` (composites with their exemplar
/// ids), `exemplars.jsonl`, and `layouts.jsonl` with one
/// `{"id", "target_class", "target_fraction", "segments"}` object per unit.
pub fn write_units(out_dir: &Path, units: &[MultiRepUnit]) -> Result<()> {
    fs::create_dir_all(out_dir.join("features"))?;
    let mut exemplars: Vec<AnnotatedSequence> = Vec::new();
    for u in units {
        if !exemplars.iter().any(|e| e.id == u.exemplar.id) {
            exemplars.push(u.exemplar.clone());
        }
    }
    exemplars.sort_by(|a, b| a.id.cmp(&b.id));
    let entries = write_sequences(out_dir, &exemplars, None)?;
    write_manifest(&out_dir.join(EXEMPLAR_MANIFEST), &entries)?;
    let composites: Vec<AnnotatedSequence> = units.iter().map(|u| u.composite.clone()).collect();
    let ids: Vec<Option<String>> = units.iter().map(|u| Some(u.exemplar.id.clone())).collect();
    let entries = write_sequences(out_dir, &composites, Some(&ids))?;
    write_manifest(&out_dir.join("multirep.jsonl"), &entries)?;
    let mut layouts = String::new();
    for u in units {
        let segments: Vec<_> = u
            .segment_layout
            .iter()
            .map(|s| serde_json::json!([s.class, s.start, s.end]))
            .collect();
        let line = serde_json::json!({
            "id": u.composite.id,
            "target_class": u.target_class,
            "target_fraction": u.target_fraction(),
            "segments": segments,
        });
        layouts.push_str(&line.to_string());
        layouts.push('\n');
    }
    fs::write(out_dir.join("layouts.jsonl"), layouts)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cycles_is_idle_only() {
        let cfg = SynthConfig::default();
        let s = generate_sequence(1, 0, &cfg, 5);
        assert!(s.cycles.is_empty());
        assert!(!s.is_empty());
        s.validate().unwrap();
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::default();
        let a = generate_sequence(2, 4, &cfg, 99);
        let b = generate_sequence(2, 4, &cfg, 99);
        assert_eq!(a, b);
        let c = generate_sequence(2, 4, &cfg, 100);
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn cycles_match_requested_count_and_range() {
        let cfg = SynthConfig::default();
        for seed in 0..20 {
            let s = generate_sequence(seed as usize % 4, 7, &cfg, seed);
            s.validate().unwrap();
            assert_eq!(s.count(), 7);
            for &(a, b) in &s.cycles {
                assert!((cfg.cycle_len_range.0..=cfg.cycle_len_range.1).contains(&(b - a)));
            }
        }
    }

    #[test]
    fn template_rows_are_unit_norm() {
        let t = class_template(&SynthConfig::default(), 3);
        for row in t.axis_iter(Axis(0)) {
            assert!((row.dot(&row) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn composer_rejects_small_pool() {
        let cfg = SynthConfig::default();
        let target = generate_sequence(0, 4, &cfg, 1);
        let pool = vec![generate_sequence(1, 3, &cfg, 2), generate_sequence(2, 3, &cfg, 3)];
        let ex = vec![generate_sequence(0, 3, &cfg, 4)];
        let err = compose_multirep(&target, &pool, &ex, &ComposeConfig::default(), 0).unwrap_err();
        assert!(err.to_string().contains("insufficient distractors"));
    }

    #[test]
    fn composer_needs_matching_exemplar() {
        let cfg = SynthConfig::default();
        let target = generate_sequence(0, 4, &cfg, 1);
        let pool: Vec<_> = (1..4).map(|c| generate_sequence(c, 3, &cfg, c as u64)).collect();
        let ex = vec![generate_sequence(1, 3, &cfg, 4)];
        assert!(matches!(
            compose_multirep(&target, &pool, &ex, &ComposeConfig::default(), 0),
            Err(Error::MissingExemplar(_))
        ));
    }
}
