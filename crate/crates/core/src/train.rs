//! Joint training of both branches: `L = L_S + L_F`, Adam with a decaying
//! learning rate, per-epoch validation and best-checkpoint selection.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LrSchedule, TrainConfig};
use crate::data::DensityMap;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{PreparedVideo, SkimFocusNet};
use crate::nn::{Graph, ParamStore};
use crate::synth::mix_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub skim: f64,
    pub focus: f64,
}

impl LossBreakdown {
    pub fn new(skim: f64, focus: f64) -> Self {
        LossBreakdown {
            total: skim + focus,
            skim,
            focus,
        }
    }
}

fn map_mse(pred: &DensityMap, gt: &DensityMap) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape {
            op: "density loss",
            left: vec![pred.len()],
            right: vec![gt.len()],
        });
    }
    if pred.mask != gt.mask || pred.mask.len() != pred.len() {
        return Err(Error::MaskMismatch {
            expected: gt.mask.len(),
            got: pred.mask.len(),
        });
    }
    let n = gt.mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Ok(0.0);
    }
    let sq: f64 = pred
        .values
        .iter()
        .zip(&gt.values)
        .zip(&gt.mask)
        .filter(|(_, &m)| m)
        .map(|((p, g), _)| (p - g) * (p - g))
        .sum();
    Ok(sq / n as f64)
}

fn mean_mse(pairs: &[(DensityMap, DensityMap)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, g) in pairs {
        total += map_mse(p, g)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Masked MSE per map, averaged over the skim maps and over the focus maps.
/// An empty skim list (skim branch disabled) contributes 0.
pub fn compute_loss(
    skim: &[(DensityMap, DensityMap)],
    focus: &[(DensityMap, DensityMap)],
) -> Result<LossBreakdown> {
    let out = LossBreakdown::new(mean_mse(skim)?, mean_mse(focus)?);
    if !out.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {out:?}")));
    }
    Ok(out)
}

pub fn learning_rate(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => cfg.learning_rate,
        LrSchedule::Cosine => {
            let t = step as f64 / total_steps.max(1) as f64;
            0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Adam with bias correction.
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    m: HashMap<String, Array2<f32>>,
    v: HashMap<String, Array2<f32>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }
}

impl Adam {
    pub fn step(
        &mut self,
        params: &mut ParamStore<f32>,
        grads: &HashMap<String, Array2<f32>>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = lr as f32;
        // Sorted so the update order never depends on hash iteration.
        let mut names: Vec<&String> = grads.keys().collect();
        names.sort();
        for name in names {
            let g = &grads[name];
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_mae: f64,
    pub val_obo: f64,
}

pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,L,L_S,L_F,val_MAE,val_OBO\n");
    for r in trace {
        writeln!(
            out,
            "{},{:.8},{:.8},{:.8},{:.6},{:.6}",
            r.epoch, r.loss.total, r.loss.skim, r.loss.focus, r.val_mae, r.val_obo
        )
        .unwrap();
    }
    out
}

pub struct TrainOutcome {
    /// The model at the best validation epoch.
    pub net: SkimFocusNet,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: Option<MetricsReport>,
}

/// Loss and gradients for one batch. Every video contributes one fine view
/// at an offset chosen by `rng`.
pub fn batch_step(
    net: &SkimFocusNet,
    batch: &[&PreparedVideo],
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, HashMap<String, Array2<f32>>)> {
    let mut grads = HashMap::new();
    let (mut ls, mut lf) = (0.0, 0.0);
    let inv = 1.0 / batch.len() as f32;
    for video in batch {
        let len = net.config.view.view_len;
        let slack = video.track.mask.len().saturating_sub(len);
        let view = video.window(rng.random_range(0..=slack), len);
        let seed = rng.random::<u64>();
        let mut g = Graph::new(&net.params);
        let vars = net.training_forward(&mut g, video, &view, seed)?;
        let mut loss = vars.focus_loss;
        lf += f64::from(g.value(vars.focus_loss)[[0, 0]]);
        if let Some(s) = vars.skim_loss {
            ls += f64::from(g.value(s)[[0, 0]]);
            loss = g.add(loss, s)?;
        }
        let loss = g.scale(loss, inv);
        let value = g.value(loss)[[0, 0]];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss on {}", video.id)));
        }
        g.backward(loss)?;
        g.accumulate_param_grads(&mut grads);
    }
    let n = batch.len() as f64;
    Ok((LossBreakdown::new(ls / n, lf / n), grads))
}

/// Trains from `cfg.seed`. `on_epoch` sees every record as it is produced.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[PreparedVideo],
    val_set: &[PreparedVideo],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut net = SkimFocusNet::new(&cfg.model, mix_seed(cfg.seed, 0x1a, 0))?;
    let mut adam = Adam::default();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x2b, 0));
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, ParamStore<f32>, Option<MetricsReport>)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedVideo> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_step(&net, &batch, &mut rng)?;
            let lr = learning_rate(cfg, step, total_steps);
            adam.step(&mut net.params, &grads, lr)?;
            step += 1;
            sum = LossBreakdown::new(sum.skim + loss.skim, sum.focus + loss.focus);
        }
        let k = batches_per_epoch as f64;
        let loss = LossBreakdown::new(sum.skim / k, sum.focus / k);
        let (val_mae, val_obo, report) = if val_set.is_empty() {
            (f64::NAN, f64::NAN, None)
        } else {
            let (report, _) = evaluate(&net, val_set)?;
            (report.mae, report.obo, Some(report))
        };
        let record = EpochRecord {
            epoch,
            loss,
            val_mae,
            val_obo,
        };
        log::info!(
            "epoch {epoch}: L={:.5} L_S={:.5} L_F={:.5} val MAE={val_mae:.4} OBO={val_obo:.3}",
            loss.total,
            loss.skim,
            loss.focus
        );
        on_epoch(&record);
        trace.push(record);
        // Lower MAE wins, then higher OBO; without validation the last epoch wins.
        let better = match &best {
            None => true,
            Some(_) if val_set.is_empty() => true,
            Some((e, ..)) => {
                let b = &trace[e - 1];
                val_mae < b.val_mae || (val_mae == b.val_mae && val_obo > b.val_obo)
            }
        };
        if better {
            best = Some((epoch, net.params.clone(), report));
        }
    }
    let (best_epoch, params, best_val) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        net: SkimFocusNet::from_params(&cfg.model, params)?,
        trace,
        best_epoch,
        best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(values: &[f64], mask: &[bool]) -> DensityMap {
        DensityMap {
            values: values.to_vec(),
            mask: mask.to_vec(),
        }
    }

    #[test]
    fn identical_maps_give_zero_loss() {
        let a = dm(&[0.1, 0.4, 0.2], &[true; 3]);
        let l = compute_loss(&[(a.clone(), a.clone())], &[(a.clone(), a)]).unwrap();
        assert_eq!(l, LossBreakdown::default());
    }

    #[test]
    fn hand_computed_three_frame_mse() {
        let p = dm(&[0.5, 0.0, 1.0], &[true; 3]);
        let g = dm(&[0.25, 0.5, 1.0], &[true; 3]);
        let l = compute_loss(&[], &[(p, g)]).unwrap();
        // (0.0625 + 0.25 + 0) / 3
        assert!((l.focus - 0.3125 / 3.0).abs() < 1e-12);
        assert_eq!(l.skim, 0.0);
        assert_eq!(l.total, l.focus);
    }

    #[test]
    fn masked_positions_do_not_count() {
        let p = dm(&[0.5, 9.0], &[true, false]);
        let g = dm(&[0.0, 0.0], &[true, false]);
        assert_eq!(compute_loss(&[], &[(p, g)]).unwrap().focus, 0.25);
    }

    #[test]
    fn mismatched_masks_are_rejected() {
        let p = dm(&[0.5, 0.0], &[true, true]);
        let g = dm(&[0.0, 0.0], &[true, false]);
        assert!(matches!(
            compute_loss(&[], &[(p, g)]),
            Err(Error::MaskMismatch { .. })
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::desk(4);
        assert_eq!(learning_rate(&cfg, 0, 100), cfg.learning_rate);
        assert!((learning_rate(&cfg, 50, 100) - cfg.learning_rate / 2.0).abs() < 1e-15);
        assert!(learning_rate(&cfg, 100, 100).abs() < 1e-15);
    }
}
