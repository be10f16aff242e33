//! File-level workflows: load a dataset directory, train, evaluate and run
//! ablation grids. Used by the command line and the integration tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, TrainConfig};
use crate::data::io::load_split;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, VideoResult};
use crate::model::{Prediction, PreparedVideo, SkimFocusNet};
use crate::train::{trace_csv, train, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "model.sfnc";
pub const SNAPSHOT_FILE: &str = "resolved_config.txt";
pub const TRACE_FILE: &str = "trace.csv";

/// Loads `<data_dir>/<split>.jsonl` and prepares every video for `cfg`.
pub fn prepare_split(data_dir: &Path, split: &str, cfg: &TrainConfig) -> Result<Vec<PreparedVideo>> {
    let loaded = load_split(&data_dir.join(format!("{split}.jsonl")))?;
    prepare_loaded(&loaded.items, &loaded.exemplars, cfg)
}

pub fn prepare_loaded(
    items: &[crate::data::AnnotatedSequence],
    exemplars: &[Option<crate::data::AnnotatedSequence>],
    cfg: &TrainConfig,
) -> Result<Vec<PreparedVideo>> {
    items
        .iter()
        .zip(exemplars)
        .map(|(seq, ex)| PreparedVideo::new(seq, ex.as_ref(), &cfg.model, cfg.mode))
        .collect()
}

/// Writes the resolved configuration next to a run's artifacts.
pub fn write_snapshot(out_dir: &Path, run: &RunConfig) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(SNAPSHOT_FILE), run.snapshot())?;
    Ok(())
}

/// Reads the configuration a checkpoint was trained with.
pub fn snapshot_for(checkpoint: &Path) -> Result<RunConfig> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let path = dir.join(SNAPSHOT_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {} next to checkpoint: {e}", path.display())))?;
    RunConfig::resolve(Some(&text), &[])
}

/// Trains on `train.jsonl`, selects on `val.jsonl`, writes the checkpoint,
/// the loss trace and the config snapshot into `out_dir`.
pub fn run_train(run: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    write_snapshot(out_dir, run)?;
    let train_set = prepare_split(data_dir, "train", &run.train)?;
    let val_set = prepare_split(data_dir, "val", &run.train)?;
    let check_dim = |videos: &[PreparedVideo]| -> Result<()> {
        match videos.first() {
            Some(v) if v.context.features.ncols() != run.train.model.d_in => Err(Error::Config(format!(
                "data has {} features per frame but synth.d_in = {}",
                v.context.features.ncols(),
                run.train.model.d_in
            ))),
            _ => Ok(()),
        }
    };
    check_dim(&train_set)?;
    let trace_path = out_dir.join(TRACE_FILE);
    let mut trace = Vec::new();
    let outcome = train(&run.train, &train_set, &val_set, |r| {
        trace.push(r.clone());
        // Rewritten every epoch so a partial run still leaves a trace.
        let _ = fs::write(&trace_path, trace_csv(&trace));
    })?;
    fs::write(&trace_path, trace_csv(&outcome.trace))?;
    outcome.net.save(&out_dir.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

/// Loads a checkpoint together with its snapshot; the snapshot's model
/// config must match the digest stored in the checkpoint.
pub fn load_model(checkpoint: &Path) -> Result<(RunConfig, SkimFocusNet)> {
    let run = snapshot_for(checkpoint)?;
    let net = SkimFocusNet::load(checkpoint, &run.train.model)?;
    Ok((run, net))
}

/// Evaluates a checkpoint on a manifest; writes `<stem>.json` / `<stem>.csv`.
/// `run` is usually the checkpoint's snapshot, possibly with inference-only
/// settings (sampling, `N_C`) changed.
pub fn run_eval(
    run: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    out_dir: &Path,
    stem: &str,
) -> Result<(MetricsReport, Vec<Prediction>, Vec<PreparedVideo>)> {
    let net = SkimFocusNet::load(checkpoint, &run.train.model)?;
    write_snapshot(out_dir, run)?;
    let loaded = load_split(manifest)?;
    let videos = prepare_loaded(&loaded.items, &loaded.exemplars, &run.train)?;
    let (report, preds) = evaluate(&net, &videos)?;
    report.write(out_dir, stem)?;
    Ok((report, preds, videos))
}

/// The chance reference: predict the mean training count for every video.
pub fn mean_count_baseline(train_set: &[PreparedVideo], test_set: &[PreparedVideo]) -> Result<MetricsReport> {
    if train_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = train_set.iter().map(|v| v.count as f64).sum::<f64>() / train_set.len() as f64;
    MetricsReport::from_results(
        test_set
            .iter()
            .map(|v| VideoResult {
                id: v.id.clone(),
                class: v.class_label.clone(),
                gt: v.count as f64,
                pred: mean,
            })
            .collect(),
    )
}

/// Parses `key=v1,v2;key2=w1` into axes. Range-valued keys such as
/// `synth.cycles_range` cannot be gridded since their values contain commas.
pub fn parse_grid(spec: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut axes = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis {part:?} is not key=v1,v2,...")))?;
        let key = key.trim().to_string();
        if key.starts_with("synth.") || key.starts_with("split.") || key == "preset" {
            return Err(Error::Config(format!(
                "{key} changes the dataset and cannot be part of an ablation grid"
            )));
        }
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("grid axis {key} has no values")));
        }
        axes.push((key, values));
    }
    if axes.is_empty() {
        return Err(Error::Config("empty ablation grid".into()));
    }
    Ok(axes)
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn grid_cells(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut cells = vec![Vec::new()];
    for (key, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub settings: Vec<(String, String)>,
    pub mae: f64,
    pub obo: f64,
}

pub fn ablation_csv(axes: &[(String, Vec<String>)], rows: &[AblationRow]) -> String {
    let mut out = String::from("cell");
    for (k, _) in axes {
        out.push(',');
        out.push_str(k);
    }
    out.push_str(",test_MAE,test_OBO\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(out, "{i}");
        for (_, v) in &r.settings {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{:.6},{:.6}", r.mae, r.obo);
    }
    out
}

/// Trains and tests every cell of the grid on the dataset in `data_dir`.
/// Each cell's artifacts go to `out_dir/cell-<i>`; the table is written to
/// `out_dir/ablation.csv` and returned.
pub fn run_ablation(
    base: &RunConfig,
    grid: &str,
    data_dir: &Path,
    out_dir: &Path,
) -> Result<(String, Vec<AblationRow>)> {
    let axes = parse_grid(grid)?;
    let mut rows = Vec::new();
    for (i, cell) in grid_cells(&axes).into_iter().enumerate() {
        let mut run = base.clone();
        for (k, v) in &cell {
            run.set(k, v)?;
        }
        run.train.validate()?;
        let cell_dir: PathBuf = out_dir.join(format!("cell-{i}"));
        log::info!("ablation cell {i}: {cell:?}");
        let outcome = run_train(&run, data_dir, &cell_dir)?;
        let test_set = prepare_split(data_dir, "test", &run.train)?;
        let (report, _) = evaluate(&outcome.net, &test_set)?;
        report.write(&cell_dir, "test_metrics")?;
        rows.push(AblationRow {
            settings: cell,
            mae: report.mae,
            obo: report.obo,
        });
    }
    let csv = ablation_csv(&axes, &rows);
    fs::write(out_dir.join("ablation.csv"), &csv)?;
    Ok((csv, rows))
}
