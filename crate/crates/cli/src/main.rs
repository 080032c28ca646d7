//! `oscar`: recipe preparation, frame sampling, scoring, decoding,
//! evaluation and the live tracking service.

mod backend;
mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use oscar_core::embedding::DEFAULT_TIMEOUT_MS;
use oscar_core::frames::{DEFAULT_K, DEFAULT_RADIUS_S};

#[derive(Parser, Debug)]
#[command(name = "oscar", version, about = "Track progress through a recipe from video frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Embedding backend options shared by the scoring commands.
#[derive(clap::Args, Debug, Clone)]
pub struct BackendArgs {
    /// `synthetic` or the base URL of an embedding service.
    #[arg(long, default_value = "synthetic")]
    pub backend: String,

    /// World definitions for the synthetic backend.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,

    /// Label reported for a remote model.
    #[arg(long, default_value = "remote")]
    pub model_label: String,

    #[arg(long, default_value_t = DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: u64,

    /// Persist remote embeddings here.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecodeMode {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    Baseline,
    Oscar,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw recipe into ordered steps.
    Normalize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split compound steps with a chat model.
        #[arg(long)]
        llm_endpoint: Option<String>,
    },
    /// Attach object-status prompts to every step.
    StatusExtract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "rule_based")]
        llm_endpoint: Option<String>,
        /// Use the built-in rules (the default without an endpoint).
        #[arg(long)]
        rule_based: bool,
    },
    /// Pick k sharp frames per annotated segment.
    Sample {
        /// Directory holding `frames.jsonl`.
        #[arg(long)]
        manifest: PathBuf,
        /// Annotation file for the video.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_RADIUS_S)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score frames against a recipe's steps.
    Align {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        recipe: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value = "fused")]
        channel: oscar_core::alignment::Channel,
        #[arg(long, default_value_t = oscar_core::alignment::DEFAULT_FUSION_WEIGHT)]
        fusion_weight: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn per-frame scores into step predictions.
    Decode {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value = "offline")]
        mode: DecodeMode,
        /// Tracker settings as JSON (online mode).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the step-recognition benchmark over a dataset.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        condition: ConditionArg,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_RADIUS_S)]
        radius: f64,
        #[arg(long, default_value_t = oscar_core::alignment::DEFAULT_FUSION_WEIGHT)]
        fusion_weight: f64,
        #[arg(long)]
        report: PathBuf,
        /// Decode baseline predictions monotonically as well.
        #[arg(long)]
        causal_on_baseline: bool,
        /// Write every frame's similarity scores as JSON lines.
        #[arg(long)]
        score_log: Option<PathBuf>,
    },
    /// Host live tracking sessions over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[command(flatten)]
        backend: BackendArgs,
        /// `mock` or the base URL of a chat service.
        #[arg(long, default_value = "mock")]
        llm: String,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Accept frames given as server-side file paths.
        #[arg(long)]
        allow_file_refs: bool,
    },
    /// Convert YouCook2 annotations into a dataset directory.
    ImportYoucook2 {
        #[arg(long)]
        annotations: PathBuf,
        /// Recipe titles and ingredients keyed by video id.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic benchmark dataset.
    SynthBench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 1.5)]
        sigma: f64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Normalize { input, out, llm_endpoint } => commands::normalize(&input, &out, llm_endpoint.as_deref()),
        Command::StatusExtract {
            input,
            out,
            llm_endpoint,
            rule_based: _,
        } => commands::status_extract(&input, &out, llm_endpoint.as_deref()),
        Command::Sample {
            manifest,
            annotations,
            k,
            seed,
            radius,
            out,
        } => commands::sample(&manifest, &annotations, k, seed, radius, &out),
        Command::Align {
            frames,
            recipe,
            backend,
            channel,
            fusion_weight,
            out,
        } => commands::align(&frames, &recipe, &backend, channel, fusion_weight, &out),
        Command::Decode {
            scores,
            mode,
            config,
            out,
        } => commands::decode(&scores, mode, config.as_deref(), &out),
        Command::Evaluate {
            dataset,
            condition,
            backend,
            trials,
            seed,
            k,
            radius,
            fusion_weight,
            report,
            causal_on_baseline,
            score_log,
        } => {
            let cfg = oscar_core::evaluation::RunConfig {
                trials,
                seed,
                k,
                radius_s: radius,
                fusion_weight,
                causal_on_baseline,
            };
            commands::evaluate(&dataset, condition, &backend, cfg, &report, score_log.as_deref())
        }
        Command::Serve {
            port,
            host,
            backend,
            llm,
            log_dir,
            allow_file_refs,
        } => commands::serve((host, port).into(), &backend, &llm, log_dir, allow_file_refs),
        Command::ImportYoucook2 { annotations, sidecar, out } => {
            commands::import_youcook2(&annotations, sidecar.as_deref(), &out)
        }
        Command::SynthBench {
            out,
            videos,
            steps,
            seed,
            alpha,
            sigma,
        } => {
            let cfg = oscar_core::evaluation::BenchmarkConfig {
                n_videos: videos,
                n_steps: steps,
                seed,
                alpha,
                sigma,
                ..Default::default()
            };
            commands::synth_bench(&out, &cfg)
        }
    }
}
