//! The `skimfocus` command line.
//!
//! Exit codes: 0 on success (including `--help`), 1 for usage and
//! configuration errors, 2 when the run itself fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::{RunConfig, Sampling};
use crate::error::Error;
use crate::experiment::{
    prepare_loaded, run_ablation, run_eval, run_train, snapshot_for, write_snapshot, CHECKPOINT_FILE,
};
use crate::model::{Prediction, PreparedVideo, SkimFocusNet};
use crate::plot::{density_curves, render_density_svg};
use crate::synth::{build_dataset, compose_units, write_units};
use crate::verify::{gradient_suite, SuiteSizes};

#[derive(Debug, Parser)]
#[command(
    name = "skimfocus",
    version,
    about = "Skim-then-focus repetition counting over frame-feature sequences",
    after_help = "Configuration precedence: preset defaults < --config file < --set overrides.\n\
                  Every run writes resolved_config.txt into the output directory."
)]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for both data generation and training (`seed` and `synth.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for every artifact of this run.
    #[arg(long, global = true, env = "SKIMFOCUS_OUT", default_value = "runs")]
    pub out: PathBuf,
    /// Instructive-frame sampling strategy.
    #[arg(long, global = true, value_parser = parse_sampling)]
    pub sampling: Option<Sampling>,
    /// Number of instructive frames `N_C`.
    #[arg(long, global = true)]
    pub n_instructive: Option<usize>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_sampling(s: &str) -> Result<Sampling, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (train/val/test manifests plus features).
    Synth,
    /// Compose standalone multi-action units with exemplars and layouts.
    ComposeMultirep {
        #[arg(long, default_value_t = 20)]
        units: usize,
    },
    /// Train on a dataset directory and keep the best-validation checkpoint.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Score a checkpoint on a manifest; writes metrics JSON and CSV.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Stem for the report files.
        #[arg(long, default_value = "metrics")]
        name: String,
    },
    /// Per-video counts, view sums and density maps as JSON lines.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Also render density plots.
        #[arg(long)]
        plot: bool,
    },
    /// Finite-difference gradient checks of every building block.
    Gradcheck,
    /// Train and test every cell of a grid such as
    /// `ablations.skim_enabled=true,false;hyperparams.N_C=8,16`.
    Ablate {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        grid: String,
    },
    /// Render ground-truth versus predicted density curves as SVG.
    Plot {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, String)>, Failure> {
        let mut out = Vec::new();
        if let Some(seed) = self.seed {
            out.push(("seed".to_string(), seed.to_string()));
            out.push(("synth.seed".to_string(), seed.to_string()));
        }
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(s) = self.sampling {
            out.push(("hyperparams.sampling".to_string(), s.to_string()));
        }
        if let Some(n) = self.n_instructive {
            out.push(("hyperparams.N_C".to_string(), n.to_string()));
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<RunConfig, Failure> {
        let text = match &self.config {
            Some(path) => Some(
                fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?,
            ),
            None => None,
        };
        Ok(RunConfig::resolve(text.as_deref(), &self.overrides()?)?)
    }

    /// The checkpoint's own snapshot with this invocation's overrides on top.
    fn resolve_for(&self, checkpoint: &Path) -> Result<RunConfig, Failure> {
        let mut run = snapshot_for(checkpoint)?;
        for (k, v) in self.overrides()? {
            run.set(&k, &v)?;
        }
        run.train.validate()?;
        Ok(run)
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::new()
            .filter_level(log::LevelFilter::Info)
            .parse_default_env()
            .try_init();
    } else {
        let _ = env_logger::Builder::from_default_env().try_init();
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let out = &cli.out;
    match &cli.command {
        Command::Synth => {
            let run = cli.resolve()?;
            write_snapshot(out, &run)?;
            let data = build_dataset(out, &run.split, &run.synth)?;
            for (name, seqs, _) in &data.splits {
                println!("{name}: {} sequences", seqs.len());
            }
            if !data.exemplars.is_empty() {
                println!("exemplars: {}", data.exemplars.len());
            }
            println!("wrote {}", out.display());
        }
        Command::ComposeMultirep { units } => {
            let run = cli.resolve()?;
            write_snapshot(out, &run)?;
            let composed = compose_units(
                &run.synth,
                *units,
                run.split.exemplars_per_class,
                run.split.distractors_per_class,
            )?;
            write_units(out, &composed)?;
            let mean =
                composed.iter().map(|u| u.target_fraction()).sum::<f64>() / composed.len().max(1) as f64;
            println!(
                "composed {} units (mean target fraction {mean:.3}) into {}",
                composed.len(),
                out.display()
            );
        }
        Command::Train { data } => {
            let run = cli.resolve()?;
            let outcome = run_train(&run, data, out)?;
            let last = outcome.trace.last().expect("at least one epoch");
            println!(
                "trained {} epochs; best epoch {} (val MAE {:.4}, OBO {:.3}); final L {:.5}",
                outcome.trace.len(),
                outcome.best_epoch,
                outcome.trace[outcome.best_epoch - 1].val_mae,
                outcome.trace[outcome.best_epoch - 1].val_obo,
                last.loss.total
            );
            println!("checkpoint {}", out.join(CHECKPOINT_FILE).display());
        }
        Command::Eval {
            checkpoint,
            manifest,
            name,
        } => {
            let run = cli.resolve_for(checkpoint)?;
            let (report, _, _) = run_eval(&run, checkpoint, manifest, out, name)?;
            println!(
                "MAE {:.4}  OBO {:.4}  (n = {})",
                report.mae,
                report.obo,
                report.per_video.len()
            );
            for b in &report.range_buckets {
                println!(
                    "  {:>6}: n = {:<4} MAE {}  OBO {}",
                    b.label,
                    b.n,
                    b.mae.map_or("-".into(), |m| format!("{m:.4}")),
                    b.obo.map_or("-".into(), |o| format!("{o:.4}"))
                );
            }
        }
        Command::Predict {
            checkpoint,
            manifest,
            plot,
        } => {
            let (preds, videos) = predict(cli, checkpoint, manifest)?;
            let mut lines = String::new();
            for p in &preds {
                lines.push_str(&prediction_json(p).to_string());
                lines.push('\n');
            }
            fs::write(out.join("predictions.jsonl"), lines)?;
            for p in &preds {
                println!("{}\t{:.3}", p.id, p.count);
            }
            if *plot {
                write_plots(out, &videos, &preds)?;
            }
        }
        Command::Gradcheck => {
            let run = cli.resolve()?;
            write_snapshot(out, &run)?;
            let sizes = SuiteSizes {
                seed: run.train.seed,
                ..SuiteSizes::default()
            };
            let reports = gradient_suite(&sizes)?;
            let mut text = String::new();
            let mut failed = 0;
            for (name, r) in &reports {
                let line = format!(
                    "{:<36} {:.3e}  {}",
                    name,
                    r.max_rel_error,
                    if r.passed { "pass" } else { "FAIL" }
                );
                println!("{line}");
                text.push_str(&line);
                text.push('\n');
                failed += usize::from(!r.passed);
            }
            fs::write(out.join("gradcheck.txt"), text)?;
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} gradient check(s) failed")));
            }
        }
        Command::Ablate { data, grid } => {
            let run = cli.resolve()?;
            write_snapshot(out, &run)?;
            let (csv, _) = run_ablation(&run, grid, data, out)?;
            print!("{csv}");
        }
        Command::Plot { checkpoint, manifest } => {
            let (preds, videos) = predict(cli, checkpoint, manifest)?;
            write_plots(out, &videos, &preds)?;
            println!("wrote {} plots to {}", preds.len(), out.join("plots").display());
        }
    }
    Ok(())
}

fn predict(
    cli: &Cli,
    checkpoint: &Path,
    manifest: &Path,
) -> Result<(Vec<Prediction>, Vec<PreparedVideo>), Failure> {
    let run = cli.resolve_for(checkpoint)?;
    let net = SkimFocusNet::load(checkpoint, &run.train.model)?;
    write_snapshot(&cli.out, &run)?;
    let loaded = crate::data::io::load_split(manifest)?;
    let videos = prepare_loaded(&loaded.items, &loaded.exemplars, &run.train)?;
    let preds = videos
        .iter()
        .map(|v| net.count_video(v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((preds, videos))
}

fn prediction_json(p: &Prediction) -> serde_json::Value {
    let maps: Vec<Vec<f64>> = p
        .view_densities
        .iter()
        .map(|m| {
            m.values
                .iter()
                .zip(&m.mask)
                .filter(|(_, &keep)| keep)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    serde_json::json!({
        "id": p.id,
        "count": p.count,
        "per_view_sums": p.view_sums,
        "density_maps": maps,
        "instructive": p.instructive,
    })
}

fn write_plots(out: &Path, videos: &[PreparedVideo], preds: &[Prediction]) -> Result<(), Failure> {
    let dir = out.join("plots");
    fs::create_dir_all(&dir)?;
    for (v, p) in videos.iter().zip(preds) {
        let (gt, pred) = density_curves(v, p);
        fs::write(
            dir.join(format!("{}.svg", v.id)),
            render_density_svg(&v.id, &gt, &pred),
        )?;
    }
    Ok(())
}
