//! Summary table and figures rendered from evaluation and stats artifacts.

use crate::artifacts::{BinsFile, ComparisonsFile, CorrelationsFile, FrontierFile, SizesFile};
use crate::error::Result;
use crate::eval::RunSet;
use crate::stats::DIAGNOSTICS;
use crate::store::bytes_to_mb;
use crate::svg::{padded_range, Axes, Svg};

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Encoder retention percentage of each variant in the layerwise sweep.
/// The endpoints are reported under their uniform/mixed names.
pub const RETENTION_POINTS: [(u8, &str); 5] = [
    (0, "uniform_int4"),
    (25, "layerwise_int4_25"),
    (50, "layerwise_int4_50"),
    (75, "layerwise_int4_75"),
    (100, "mixed_int4"),
];

fn mean_success<'a>(
    records: impl Iterator<Item = &'a crate::planner::EpisodeRecord>,
) -> Option<f64> {
    let (n, s) = records.fold((0usize, 0.0), |(n, s), r| (n + 1, s + f64::from(r.success)));
    (n > 0).then(|| s / n as f64)
}

/// `variant,size_bytes,size_mb,success_<budget>...,success_pooled`, one row
/// per evaluated variant in sizes order.
pub fn main_table_csv(runs: &RunSet, sizes: &SizesFile) -> Result<String> {
    let budgets = runs.budgets();
    let evaluated = runs.variants();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant".to_string(), "size_bytes".into(), "size_mb".into()];
    header.extend(budgets.iter().map(|b| format!("success_{b}")));
    header.push("success_pooled".into());
    w.write_record(&header)?;
    for entry in sizes
        .variants
        .iter()
        .filter(|e| evaluated.contains(&e.name))
    {
        let mut row = vec![
            entry.name.clone(),
            entry.size_bytes.to_string(),
            format!("{:.4}", bytes_to_mb(entry.size_bytes)),
        ];
        for b in &budgets {
            row.push(
                mean_success(runs.for_variant(&entry.name, b))
                    .map_or(String::new(), |s| format!("{s:.3}")),
            );
        }
        let pooled = mean_success(runs.records.iter().filter(|r| r.variant == entry.name));
        row.push(pooled.map_or(String::new(), |s| format!("{s:.3}")));
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn header(svg: &mut Svg, config_hash: &str) {
    svg.comment(&format!("config_hash: {config_hash}"));
}

/// Success against size, one panel per frontier scope; a star marks every
/// non-dominated point.
pub fn frontier_svg(frontier: &FrontierFile) -> String {
    let panel_w = 420.0;
    let mut svg = Svg::new(panel_w * frontier.frontiers.len().max(1) as f64, 360.0);
    header(&mut svg, &frontier.config_hash);
    for (i, entry) in frontier.frontiers.iter().enumerate() {
        let axes = Axes {
            left: i as f64 * panel_w + 70.0,
            top: 40.0,
            width: panel_w - 100.0,
            height: 260.0,
            x_range: padded_range(entry.points.iter().map(|p| bytes_to_mb(p.size_bytes)), 0.01),
            y_range: (-0.05, 1.05),
        };
        axes.draw(
            &mut svg,
            &format!("Pareto frontier ({})", entry.scope),
            "size (MB)",
            "success",
            4,
        );
        let mut front: Vec<_> = entry.points.iter().filter(|p| p.non_dominated).collect();
        front.sort_by_key(|p| p.size_bytes);
        let line: Vec<_> = front
            .iter()
            .map(|p| (axes.x(bytes_to_mb(p.size_bytes)), axes.y(p.success)))
            .collect();
        svg.polyline(&line, "frontier", "gray");
        for p in &entry.points {
            let (x, y) = (axes.x(bytes_to_mb(p.size_bytes)), axes.y(p.success));
            if p.non_dominated {
                svg.star(x, y, 7.0);
            } else {
                svg.circle(x, y, 3.5, "point", PALETTE[0]);
            }
            svg.text(x + 6.0, y - 6.0, "start", 9.0, &p.variant_name);
        }
    }
    svg.finish()
}

/// Paired deltas with bootstrap whiskers. Each whisker carries its interval
/// as `data-ci-low` / `data-ci-high` rendered to three decimals.
pub fn forest_svg(comparisons: &ComparisonsFile) -> String {
    let rows = comparisons.comparisons.len().max(1);
    let row_h = 22.0;
    let axes = Axes {
        left: 260.0,
        top: 40.0,
        width: 320.0,
        height: row_h * rows as f64,
        x_range: (-1.0, 1.0),
        y_range: (0.0, rows as f64),
    };
    let mut svg = Svg::new(800.0, axes.bottom() + 60.0);
    header(&mut svg, &comparisons.config_hash);
    axes.draw(
        &mut svg,
        "Paired success deltas (95% bootstrap CI)",
        "delta (a - b)",
        "",
        4,
    );
    svg.line(axes.x(0.0), axes.top, axes.x(0.0), axes.bottom(), "zero");
    for (i, c) in comparisons.comparisons.iter().enumerate() {
        let y = axes.top + (i as f64 + 0.5) * row_h;
        svg.text(
            axes.left - 8.0,
            y + 4.0,
            "end",
            10.0,
            &format!("{}: {} - {}", c.budget, c.name_a, c.name_b),
        );
        svg.raw(&format!(
            r#"<line class="whisker" data-ci-low="{lo:.3}" data-ci-high="{hi:.3}" x1="{x1:.2}" y1="{y:.2}" x2="{x2:.2}" y2="{y:.2}" stroke="black"/>"#,
            lo = c.ci_low,
            hi = c.ci_high,
            x1 = axes.x(c.ci_low),
            x2 = axes.x(c.ci_high),
        ));
        svg.circle(axes.x(c.delta), y, 4.0, "delta", PALETTE[1]);
        svg.text(
            axes.left + axes.width + 8.0,
            y + 4.0,
            "start",
            10.0,
            &format!(
                "{:+.3} [{:.3}, {:.3}] p={:.3}",
                c.delta, c.ci_low, c.ci_high, c.p_sign
            ),
        );
    }
    svg.finish()
}

/// Success against the percentage of encoder layers kept at baseline
/// precision (predictor fixed at INT4), one line per budget.
pub fn retention_curve_svg(runs: &RunSet, config_hash: &str) -> String {
    let axes = Axes {
        left: 70.0,
        top: 40.0,
        width: 360.0,
        height: 240.0,
        x_range: (-5.0, 105.0),
        y_range: (-0.05, 1.05),
    };
    let mut svg = Svg::new(560.0, 340.0);
    header(&mut svg, config_hash);
    axes.draw(
        &mut svg,
        "Encoder retention sweep (INT4 predictor)",
        "encoder layers kept at baseline (%)",
        "success",
        4,
    );
    for (bi, budget) in runs.budgets().iter().enumerate() {
        let color = PALETTE[bi % PALETTE.len()];
        let pts: Vec<(f64, f64)> = RETENTION_POINTS
            .iter()
            .filter_map(|(pct, name)| {
                mean_success(runs.for_variant(name, budget))
                    .map(|s| (axes.x(f64::from(*pct)), axes.y(s)))
            })
            .collect();
        svg.polyline(&pts, "retention", color);
        for &(x, y) in &pts {
            svg.circle(x, y, 3.5, "point", color);
        }
        svg.text(
            axes.left + axes.width + 12.0,
            axes.top + 16.0 * (bi as f64 + 1.0),
            "start",
            11.0,
            budget,
        );
        svg.rect(
            axes.left + axes.width + 2.0,
            axes.top + 16.0 * (bi as f64 + 1.0) - 8.0,
            8.0,
            8.0,
            "legend",
            color,
        );
    }
    svg.finish()
}

/// Grouped bars of success per goal-distance bin for the 4-bit pair and the
/// full-precision reference.
pub fn difficulty_svg(bins: &BinsFile) -> String {
    let shown = ["fp16", "uniform_int4", "mixed_int4"];
    let entries: Vec<_> = bins
        .bins
        .iter()
        .filter(|e| shown.contains(&e.variant.as_str()))
        .collect();
    let mut groups: Vec<(String, String)> = Vec::new();
    for e in &entries {
        for b in &e.bins {
            let key = (e.budget.clone(), b.label.clone());
            if !groups.contains(&key) {
                groups.push(key);
            }
        }
    }
    let group_w = 90.0;
    let axes = Axes {
        left: 70.0,
        top: 40.0,
        width: group_w * groups.len().max(1) as f64,
        height: 240.0,
        x_range: (0.0, groups.len().max(1) as f64),
        y_range: (0.0, 1.0),
    };
    let mut svg = Svg::new(axes.left + axes.width + 160.0, 360.0);
    header(&mut svg, &bins.config_hash);
    axes.draw(
        &mut svg,
        "Success by initial goal distance",
        "",
        "success",
        4,
    );
    let bar_w = (group_w - 20.0) / shown.len() as f64;
    for (gi, (budget, label)) in groups.iter().enumerate() {
        let gx = axes.left + gi as f64 * group_w + 10.0;
        svg.text(
            gx + (group_w - 20.0) / 2.0,
            axes.bottom() + 30.0,
            "middle",
            9.0,
            &format!("{budget} {label}"),
        );
        for (vi, variant) in shown.iter().enumerate() {
            let bin = entries
                .iter()
                .find(|e| &e.budget == budget && e.variant == *variant)
                .and_then(|e| e.bins.iter().find(|b| &b.label == label));
            if let Some(b) = bin {
                let top = axes.y(b.success);
                svg.rect(
                    gx + vi as f64 * bar_w,
                    top,
                    bar_w - 2.0,
                    axes.bottom() - top,
                    "bar",
                    PALETTE[vi],
                );
            }
        }
    }
    for (vi, variant) in shown.iter().enumerate() {
        let y = axes.top + 16.0 * (vi as f64 + 1.0);
        svg.rect(
            axes.left + axes.width + 12.0,
            y - 8.0,
            8.0,
            8.0,
            "legend",
            PALETTE[vi],
        );
        svg.text(axes.left + axes.width + 24.0, y, "start", 11.0, variant);
    }
    svg.finish()
}

/// Run-level success against both divergence diagnostics.
pub fn divergence_scatter_svg(corr: &CorrelationsFile) -> String {
    let mut svg = Svg::new(880.0, 360.0);
    header(&mut svg, &corr.config_hash);
    for (i, (name, get)) in DIAGNOSTICS.iter().enumerate() {
        let axes = Axes {
            left: 70.0 + 440.0 * i as f64,
            top: 40.0,
            width: 330.0,
            height: 250.0,
            x_range: padded_range(corr.run_points.iter().map(get), 1e-6),
            y_range: (-0.05, 1.05),
        };
        let rho = corr
            .correlations
            .iter()
            .find(|c| c.diagnostic == *name)
            .and_then(|c| c.rho)
            .map_or("undefined".to_string(), |r| format!("{r:.3}"));
        axes.draw(&mut svg, &format!("rho = {rho}"), name, "run success", 4);
        for p in &corr.run_points {
            svg.circle(axes.x(get(p)), axes.y(p.success), 3.0, "run", PALETTE[0]);
        }
    }
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifacts::FrontierEntry;
    use crate::stats::{PairedComparison, ParetoPoint};

    #[test]
    fn one_star_per_non_dominated_point() {
        let pt = |n: &str, s: f64, b: u64, nd: bool| ParetoPoint {
            variant_name: n.into(),
            success: s,
            size_bytes: b,
            non_dominated: nd,
        };
        let f = FrontierFile {
            config_hash: "h".into(),
            frontiers: vec![
                FrontierEntry {
                    scope: "bA".into(),
                    points: vec![
                        pt("a", 0.5, 10, true),
                        pt("b", 0.4, 20, false),
                        pt("c", 0.1, 5, true),
                    ],
                },
                FrontierEntry {
                    scope: "pooled".into(),
                    points: vec![pt("a", 0.5, 10, true)],
                },
            ],
        };
        let s = frontier_svg(&f);
        assert_eq!(s.matches(r#"class="star""#).count(), 3);
        assert!(s.contains("config_hash: h"));
    }

    #[test]
    fn forest_whiskers_carry_three_decimal_intervals() {
        let c = PairedComparison {
            name_a: "mixed_int4".into(),
            name_b: "uniform_int4".into(),
            budget: "bA".into(),
            n_pairs: 30,
            delta: 0.2,
            ci_low: 0.0333333,
            ci_high: 0.4,
            p_sign: 0.109,
            n_nontied: 7,
        };
        let s = forest_svg(&ComparisonsFile {
            config_hash: "h".into(),
            comparisons: vec![c],
        });
        assert!(s.contains(r#"data-ci-low="0.033" data-ci-high="0.400""#));
    }
}
