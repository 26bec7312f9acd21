use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use mbquant::config::ExperimentConfig;
use mbquant::pipeline::{Pipeline, Stage};

/// Run the mixed-bit quantization study pipeline.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gen-data, train, variants, eval, stats, report or all.
    #[arg(long, default_value = "all")]
    stage: Stage,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for the eval stage.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = args.output {
        config.output_dir = out;
    }
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pipeline = Pipeline::new(config, jobs)?;
    let stages: Vec<Stage> = match args.stage {
        Stage::All => Stage::SEQUENCE.to_vec(),
        s => vec![s],
    };
    for stage in stages {
        let start = std::time::Instant::now();
        pipeline
            .run(stage)
            .with_context(|| format!("stage `{stage}` failed"))?;
        eprintln!("{stage}: done in {:.1}s", start.elapsed().as_secs_f64());
    }
    eprintln!(
        "artifacts in {} (config {})",
        pipeline.layout.root.display(),
        &pipeline.config_hash()[..12]
    );
    Ok(())
}
