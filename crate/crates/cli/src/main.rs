//! Command line front end. Every subcommand is a thin wrapper over the
//! library pipeline; all numeric behavior lives in fgrd-core.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgrd_core::config::{ConfigValue, Metric, RunConfig};
use fgrd_core::pipeline::{
    run_ablate, run_attn_export, run_eval, run_extract, run_param_count, run_synth_gen,
    run_train, EvalOptions,
};

#[derive(Parser)]
#[command(
    name = "fgrd",
    version,
    about = "Video re-identification toolkit: synthesize data, train, embed, score"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Shared config sourcing: a file, a named preset, or built-in defaults,
/// plus repeatable single-key overrides applied on top.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file (one `key = value` per line)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Start from a named preset instead of a file
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,

    /// Override one key, e.g. --set epochs=10 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut run = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::default(),
        };
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            run.set_key(key.trim(), value.trim())?;
        }
        Ok(run)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic benchmark dataset with camera-split manifests
    SynthGen {
        /// Output directory for pixel archives and manifests
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        identities: usize,
        #[arg(long, default_value_t = 4)]
        tracklets_per_id: usize,
        /// Frames per tracklet
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Square image side in pixels
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },

    /// Train a model from a tracklet manifest
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Manifest of training tracklets (JSON lines)
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the metrics log
        #[arg(long)]
        out: PathBuf,
    },

    /// Embed every tracklet in a manifest with a trained checkpoint
    Extract {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest of tracklets to embed
        #[arg(long)]
        data: PathBuf,
        /// Output embedding archive
        #[arg(long)]
        out: PathBuf,
    },

    /// Score stored query embeddings against stored gallery embeddings
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// Refine distances with k-reciprocal re-ranking
        #[arg(long)]
        rerank: bool,
        /// Ranks to report, comma separated (overrides the config)
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        /// Scoring metric: dot or euclidean (overrides the config)
        #[arg(long)]
        metric: Option<String>,
        /// Also write the report table to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Render per-frame attention overlays for one tracklet as PPM images
    AttnExport {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest containing the tracklet
        #[arg(long)]
        data: PathBuf,
        /// Tracklet id to render
        #[arg(long)]
        tracklet: usize,
        /// Output directory for the images
        #[arg(long)]
        out: PathBuf,
    },

    /// Report per-component parameter counts for the configured head
    ParamCount {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also report the extra parameters of distinct key/query projections
        #[arg(long)]
        compare_kqv: bool,
    },

    /// Train and score one named head variant
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Variant name: full, wo-gfm, only-gfm, wo-fgm, wo-nonlocal,
        /// wo-channel-weights, distinct-kqv
        #[arg(long)]
        name: String,
        /// Directory from synth-gen (manifest.jsonl, query.jsonl, gallery.jsonl)
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the trained variant and its report
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // One line on stderr regardless of how the error formats itself.
            let msg = err.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::SynthGen { out, identities, tracklets_per_id, frames, size, seed } => {
            let report =
                run_synth_gen(&out, identities, tracklets_per_id, frames, size, seed)?;
            println!("wrote {} tracklets under {}", report.tracklets, out.display());
            println!("manifest {}", report.manifest.display());
            println!("query manifest {}", report.query_manifest.display());
            println!("gallery manifest {}", report.gallery_manifest.display());
        }
        Cmd::Train { config, data, out } => {
            let run = config.load()?;
            let report = run_train(&run, &data, &out)?;
            println!(
                "trained {} epochs, final loss {:.6}",
                report.epochs, report.final_total_loss
            );
            println!("checkpoint {}", report.checkpoint.display());
            println!("metrics {}", report.metrics.display());
            println!("resolved config {}", report.resolved_config.display());
        }
        Cmd::Extract { config, checkpoint, data, out } => {
            let run = config.load()?;
            let n = run_extract(&run, &checkpoint, &data, &out)?;
            println!("embedded {n} tracklets into {}", out.display());
        }
        Cmd::Eval { config, query, gallery, rerank, ranks, metric, out } => {
            let run = config.load()?;
            let mut opts = EvalOptions::from_run(&run, rerank);
            if let Some(ranks) = ranks {
                anyhow::ensure!(!ranks.is_empty(), "--ranks needs at least one rank");
                opts.ranks = ranks;
            }
            if let Some(metric) = metric {
                opts.metric = Metric::parse_value(&metric)?;
            }
            let report = run_eval(&query, &gallery, &opts)?;
            print!("{}", report.to_csv());
            println!("{}", report.to_summary());
            if let Some(path) = out {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            }
        }
        Cmd::AttnExport { config, checkpoint, data, tracklet, out } => {
            let run = config.load()?;
            let paths = run_attn_export(&run, &checkpoint, &data, tracklet, &out)?;
            println!("wrote {} overlays", paths.len());
            for path in paths {
                println!("{}", path.display());
            }
        }
        Cmd::ParamCount { config, compare_kqv } => {
            let run = config.load()?;
            print!("{}", run_param_count(&run, compare_kqv)?);
        }
        Cmd::Ablate { config, name, data, out } => {
            let run = config.load()?;
            let report = run_ablate(&name, &run, &data, &out)?;
            print!("{}", report.to_csv());
            println!("{}", report.eval.to_summary());
        }
    }
    Ok(())
}
