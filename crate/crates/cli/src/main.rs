//! `softsim` command line: generate / train / mine / eval / sweep.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! error (clap argument errors also exit 2).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softsim_core::config::{parse_config_file_with, ConfigOverrides, RunConfig};
use softsim_core::error::{Error, ErrorCategory, Result};
use softsim_core::persist;
use softsim_core::pipeline::{self, IterationMetrics, TrainState};
use softsim_core::sweep::{sweep, SweepParam};
use softsim_core::synthgen::{generate_dataset, Dataset};

#[derive(Parser)]
#[command(name = "softsim", version, about = "Softened-similarity embedding learning on synthetic re-identification data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config; omit for the default configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation preset: baseline | no-part-no-cce | no-part | full.
    #[arg(long)]
    preset: Option<String>,
    /// Video mode: tracklets instead of single images.
    #[arg(long)]
    video: bool,
    /// Override both the generation and training seeds.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = ConfigOverrides {
            video: self.video.then_some(true),
            ablation: self.preset.clone(),
            seed: self.seed,
        };
        parse_config_file_with(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset file (magic SOFTSIM-DS-1).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full training pipeline and record metrics + checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory for config echo, metrics, and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Reuse a dataset file instead of generating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Dump the reliable sets of a checkpoint with component breakdown.
    Mine {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's query/gallery split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for metrics.csv and query_details.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the pipeline once per parameter value and tabulate final metrics.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of: lambda | k | lambda_c | lambda_p | p | iterations.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0,1,2,4,8.
        #[arg(long)]
        values: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            match err.category() {
                ErrorCategory::Config => ExitCode::from(2),
                ErrorCategory::Data => ExitCode::from(3),
                ErrorCategory::Numeric => ExitCode::from(4),
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { config, out } => {
            let cfg = config.load()?;
            let ds = generate_dataset(&cfg.generation)?;
            persist::write_dataset(&ds, &out)?;
            println!(
                "wrote {} ({} train / {} query / {} gallery)",
                out.display(),
                ds.train.len(),
                ds.query.len(),
                ds.gallery.len()
            );
            Ok(())
        }
        Command::Train {
            config,
            out,
            dataset,
            resume,
        } => cmd_train(config, &out, dataset.as_deref(), resume.as_deref()),
        Command::Mine {
            checkpoint,
            dataset,
            out,
        } => cmd_mine(&checkpoint, &dataset, &out),
        Command::Eval {
            checkpoint,
            dataset,
            out,
        } => cmd_eval(&checkpoint, &dataset, &out),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => cmd_sweep(config, &param, &values, &out),
    }
}

fn cmd_train(
    config: ConfigArgs,
    out: &Path,
    dataset_path: Option<&Path>,
    resume: Option<&Path>,
) -> Result<()> {
    let mut cfg = config.load()?;
    let dataset: Dataset = match dataset_path {
        Some(p) => {
            let ds = persist::read_dataset(p)?;
            // the dataset file is authoritative for the generation block
            cfg.generation = ds.config.clone();
            cfg.video = ds.config.video_mode;
            ds
        }
        None => generate_dataset(&cfg.generation)?,
    };
    // training continues under the checkpointed hyperparameters when
    // resuming, except for the target iteration count which the config sets
    let start_state = match resume {
        Some(ckpt_path) => {
            let (mut hp, state) = persist::load_checkpoint(ckpt_path)?;
            hp.iterations = cfg.hyper.iterations;
            cfg.hyper = hp;
            Some(state)
        }
        None => None,
    };
    let hp = cfg.hyper.clone();

    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("config.resolved.toml"),
        softsim_core::config::resolved_toml(&cfg)?,
    )?;

    let write_stage = |state: &TrainState| -> Result<()> {
        let ckpt = out.join(format!("checkpoint-iter-{:03}.ckpt", state.iteration));
        persist::save_checkpoint(&hp, state, &ckpt)?;
        write_metrics(&state.history, out)?;
        if let Some(m) = state.history.last() {
            println!(
                "iteration {}: rank1={:.3} rank5={:.3} rank10={:.3} mAP={:.3}",
                m.iteration, m.rank1, m.rank5, m.rank10, m.map
            );
        }
        Ok(())
    };

    let state = match start_state {
        Some(s) => pipeline::continue_run_with_hook(&dataset, &hp, s, write_stage)?,
        None => pipeline::run_with_hook(&dataset, &hp, write_stage)?,
    };

    persist::save_checkpoint(&hp, &state, &out.join("checkpoint-final.ckpt"))?;
    write_metrics(&state.history, out)?;
    Ok(())
}

fn write_metrics(history: &[IterationMetrics], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("metrics.csv"))
        .map_err(|e| Error::Format(format!("metrics.csv: {}", e)))?;
    w.write_record(["iteration", "rank1", "rank5", "rank10", "mAP"])
        .map_err(|e| Error::Format(format!("metrics.csv: {}", e)))?;
    for m in history {
        w.write_record([
            m.iteration.to_string(),
            m.rank1.to_string(),
            m.rank5.to_string(),
            m.rank10.to_string(),
            m.map.to_string(),
        ])
        .map_err(|e| Error::Format(format!("metrics.csv: {}", e)))?;
    }
    w.flush()?;

    let mut text = String::new();
    for m in history {
        text.push_str(&format!(
            "iteration={} rank1={} rank5={} rank10={} map={}\n",
            m.iteration, m.rank1, m.rank5, m.rank10, m.map
        ));
    }
    std::fs::write(out.join("metrics.txt"), text)?;
    Ok(())
}

fn cmd_mine(checkpoint: &Path, dataset: &Path, out: &Path) -> Result<()> {
    let (hp, state) = persist::load_checkpoint(checkpoint)?;
    let ds = persist::read_dataset(dataset)?;
    let outcome = pipeline::mine(&state, &ds, &hp)?;
    // identity and camera of each training class, for inspection columns
    let (classes, n_classes) = pipeline::class_assignment(&ds);
    let mut meta = vec![(0u32, 0u32); n_classes];
    for (img, &class) in ds.train.iter().zip(&classes) {
        meta[class] = (img.identity, img.camera);
    }
    let mut w = csv::Writer::from_path(out)
        .map_err(|e| Error::Format(format!("{}: {}", out.display(), e)))?;
    w.write_record([
        "anchor",
        "anchor_identity",
        "anchor_camera",
        "rank",
        "neighbor",
        "neighbor_identity",
        "neighbor_camera",
        "d_global",
        "d_part",
        "cce",
        "d_overall",
        "same_identity",
        "cross_camera",
    ])
    .map_err(|e| Error::Format(format!("mine csv: {}", e)))?;
    for set in &outcome.sets {
        let (a_id, a_cam) = meta[set.anchor];
        for (rank, nb) in set.neighbors.iter().enumerate() {
            let (n_id, n_cam) = meta[nb.index];
            w.write_record([
                set.anchor.to_string(),
                a_id.to_string(),
                a_cam.to_string(),
                (rank + 1).to_string(),
                nb.index.to_string(),
                n_id.to_string(),
                n_cam.to_string(),
                nb.global_distance.to_string(),
                nb.part_distance.to_string(),
                nb.cce.to_string(),
                nb.dissimilarity.to_string(),
                (a_id == n_id).to_string(),
                (a_cam != n_cam).to_string(),
            ])
            .map_err(|e| Error::Format(format!("mine csv: {}", e)))?;
        }
    }
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dataset: &Path, out: &Path) -> Result<()> {
    let (_hp, state) = persist::load_checkpoint(checkpoint)?;
    let ds = persist::read_dataset(dataset)?;
    let result = pipeline::evaluate(&state.params, &ds)?;
    std::fs::create_dir_all(out)?;

    let mut w = csv::Writer::from_path(out.join("metrics.csv"))
        .map_err(|e| Error::Format(format!("metrics.csv: {}", e)))?;
    w.write_record(["iteration", "rank1", "rank5", "rank10", "mAP"])
        .map_err(|e| Error::Format(format!("metrics.csv: {}", e)))?;
    w.write_record([
        state.iteration.to_string(),
        result.rank1.to_string(),
        result.rank5.to_string(),
        result.rank10.to_string(),
        result.map.to_string(),
    ])
    .map_err(|e| Error::Format(format!("metrics.csv: {}", e)))?;
    w.flush()?;

    let mut d = csv::Writer::from_path(out.join("query_details.csv"))
        .map_err(|e| Error::Format(format!("query_details.csv: {}", e)))?;
    d.write_record(["query", "first_match_rank", "average_precision"])
        .map_err(|e| Error::Format(format!("query_details.csv: {}", e)))?;
    for (i, q) in result.per_query.iter().enumerate() {
        d.write_record([
            i.to_string(),
            q.first_match_rank.to_string(),
            q.average_precision.to_string(),
        ])
        .map_err(|e| Error::Format(format!("query_details.csv: {}", e)))?;
    }
    d.flush()?;
    println!(
        "rank1={:.3} rank5={:.3} rank10={:.3} mAP={:.3}",
        result.rank1, result.rank5, result.rank10, result.map
    );
    Ok(())
}

fn cmd_sweep(config: ConfigArgs, param: &str, values: &str, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let param: SweepParam = param.parse()?;
    let values: Vec<f64> = values
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("sweep value '{}' is not a number", tok)))
        })
        .collect::<Result<_>>()?;
    let rows = sweep(param, &values, &cfg)?;
    let mut w =
        csv::Writer::from_path(out).map_err(|e| Error::Format(format!("sweep csv: {}", e)))?;
    w.write_record([param.to_string().as_str(), "rank1", "rank5", "rank10", "mAP"])
        .map_err(|e| Error::Format(format!("sweep csv: {}", e)))?;
    for row in &rows {
        w.write_record([
            row.value.to_string(),
            row.metrics.rank1.to_string(),
            row.metrics.rank5.to_string(),
            row.metrics.rank10.to_string(),
            row.metrics.map.to_string(),
        ])
        .map_err(|e| Error::Format(format!("sweep csv: {}", e)))?;
        println!(
            "{}={}: rank1={:.3} mAP={:.3}",
            param, row.value, row.metrics.rank1, row.metrics.map
        );
    }
    w.flush()?;
    Ok(())
}
