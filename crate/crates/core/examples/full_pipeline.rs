//! Every stage end to end on the default config, written to a directory.
//!
//! cargo run --release --example full_pipeline -- [output-dir]

use mbquant::config::ExperimentConfig;
use mbquant::pipeline::{Pipeline, Stage};

fn main() -> mbquant::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "runs/example".into());
    let config = ExperimentConfig {
        output_dir: out.into(),
        ..ExperimentConfig::default()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pipeline = Pipeline::new(config, jobs)?;
    for stage in Stage::SEQUENCE {
        pipeline.run(stage)?;
        println!("{stage} done");
    }

    let table = std::fs::read_to_string(pipeline.layout.report_dir().join("main_table.csv"))?;
    print!("\n{table}");
    let stats = pipeline.load_stats()?;
    for c in stats
        .comparisons
        .comparisons
        .iter()
        .filter(|c| c.name_b == "uniform_int4")
    {
        println!(
            "{}: {} - {} = {:+.3} [{:.3}, {:.3}] p={:.3}",
            c.budget, c.name_a, c.name_b, c.delta, c.ci_low, c.ci_high, c.p_sign
        );
    }
    for c in &stats.correlations.correlations {
        println!("spearman(success, {}) = {:?}", c.diagnostic, c.rho);
    }
    Ok(())
}
