//! Success/size Pareto frontier over a handful of variants.
//!
//! cargo run --example pareto

use mbquant::stats::pareto_frontier;

fn main() {
    let mb = |v: f64| (v * 1_048_576.0) as u64;
    let rows = [
        ("fp16", 0.533, 204.99),
        ("uniform_int6", 0.533, 77.92),
        ("mixed_int6", 0.533, 143.58),
        ("uniform_int4", 0.067, 68.12),
        ("mixed_int4", 0.267, 138.84),
        ("uniform_int3", 0.0, 63.23),
        ("mixed_int3", 0.0, 136.47),
    ];
    let points: Vec<_> = rows
        .iter()
        .map(|(n, s, m)| (n.to_string(), *s, mb(*m)))
        .collect();
    for p in pareto_frontier(&points) {
        let mark = if p.non_dominated { "*" } else { " " };
        println!(
            "{mark} {:<14} success {:.3}  {:>8.2} MB",
            p.variant_name,
            p.success,
            p.size_bytes as f64 / 1_048_576.0
        );
    }
}
