//! Paired statistics on synthetic success vectors: bootstrap delta, sign
//! test, matchup counts, difficulty bins and a rank correlation.
//!
//! cargo run --example paired_stats

use mbquant::planner::EpisodeRecord;
use mbquant::rng::RngScheme;
use mbquant::stats::{
    difficulty_bins, matchup_counts, paired_delta_ci, sign_test, spearman, DEFAULT_LEVEL,
    DEFAULT_RESAMPLES,
};

fn record(variant: &str, episode_id: u64, success: bool) -> EpisodeRecord {
    EpisodeRecord {
        variant: variant.into(),
        budget: "bA".into(),
        seed: episode_id / 10,
        episode_id: episode_id % 10,
        success: u8::from(success),
        initial_goal_distance: 0.3 + 0.02 * episode_id as f64,
        steps_executed: 0,
        runtime_seconds: 0.0,
        mean_state_distance: 0.0,
        visual_embedding_divergence: 0.0,
        model_size_bytes: 0,
    }
}

fn main() -> mbquant::Result<()> {
    // 8 of 30 successes against 2 of 30 on the same paired units.
    let a: Vec<bool> = (0..30).map(|i| i % 4 == 1).collect();
    let b: Vec<bool> = (0..30).map(|i| i == 1 || i == 20).collect();
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (f64::from(u8::from(x)), f64::from(u8::from(y))))
        .collect();

    let mut rng = RngScheme::new(0).stream("bootstrap/example", &[]);
    let ci = paired_delta_ci(&pairs, DEFAULT_RESAMPLES, DEFAULT_LEVEL, &mut rng)?;
    let (p, m) = sign_test(&pairs);
    println!(
        "delta {:+.3}  95% CI [{:.3}, {:.3}]  sign test p = {p:.4} over {m} non-tied pairs",
        ci.delta, ci.ci_low, ci.ci_high
    );

    let ra: Vec<_> = a
        .iter()
        .enumerate()
        .map(|(i, &s)| record("mixed_int4", i as u64, s))
        .collect();
    let rb: Vec<_> = b
        .iter()
        .enumerate()
        .map(|(i, &s)| record("uniform_int4", i as u64, s))
        .collect();
    let counts = matchup_counts(
        &ra.iter().collect::<Vec<_>>(),
        &rb.iter().collect::<Vec<_>>(),
    )?;
    println!("{counts:?}");

    for bin in difficulty_bins(&ra.iter().collect::<Vec<_>>(), 3)? {
        println!(
            "{:<13} n={} distance [{:.2}, {:.2}] success {:.2}",
            bin.label, bin.n, bin.min_distance, bin.max_distance, bin.success
        );
    }

    let success = [0.5, 0.45, 0.3, 0.1, 0.0, 0.0];
    let divergence = [0.0, 0.002, 0.01, 0.04, 0.12, 0.6];
    println!(
        "spearman(success, divergence) = {:.3}",
        spearman(&success, &divergence)?
    );
    Ok(())
}
