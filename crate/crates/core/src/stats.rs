//! Paired statistics over episode records: bootstrap deltas, exact sign
//! tests, rank correlations, difficulty bins, matchup tables and Pareto
//! frontiers.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::planner::EpisodeRecord;
use crate::rng::Stream;

pub const DEFAULT_RESAMPLES: usize = 4000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Key of a paired unit: the same start/goal for every variant.
pub type UnitKey = (u64, u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub name_a: String,
    pub name_b: String,
    pub budget: String,
    pub n_pairs: usize,
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_sign: f64,
    pub n_nontied: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaCi {
    pub n_pairs: usize,
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean of `a - b` with a percentile bootstrap interval over paired units.
pub fn paired_delta_ci(
    pairs: &[(f64, f64)],
    n_resamples: usize,
    level: f64,
    rng: &mut Stream,
) -> Result<DeltaCi> {
    if pairs.is_empty() {
        return Err(invalid("paired_delta_ci needs at least one pair"));
    }
    if n_resamples == 0 {
        return Err(invalid("n_resamples must be at least 1"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let n = pairs.len();
    let diffs: Vec<f64> = pairs.iter().map(|&(a, b)| a - b).collect();
    let delta = diffs.iter().sum::<f64>() / n as f64;

    let mut boot = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += diffs[rng.random_range(0..n)];
        }
        boot.push(s / n as f64);
    }
    boot.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(DeltaCi {
        n_pairs: n,
        delta,
        ci_low: quantile_sorted(&boot, tail),
        ci_high: quantile_sorted(&boot, 1.0 - tail),
    })
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Two-sided exact sign test. Returns `(p, n_nontied)`.
///
/// The p-value doubles the smaller binomial tail and caps it at 1.
pub fn sign_test(pairs: &[(f64, f64)]) -> (f64, usize) {
    let m = pairs.iter().filter(|(a, b)| a != b).count();
    let k = pairs.iter().filter(|(a, b)| a > b).count();
    if m == 0 {
        return (1.0, 0);
    }
    let (le, ge) = binomial_tails(m, k);
    ((2.0 * le.min(ge)).min(1.0), m)
}

/// `(P(X <= k), P(X >= k))` for `X ~ Binomial(m, 1/2)`.
fn binomial_tails(m: usize, k: usize) -> (f64, f64) {
    if m <= 126 {
        // Exact integer counts; the division by 2^m is exact in f64.
        let mut c: u128 = 1;
        let (mut le, mut ge) = (0u128, 0u128);
        for i in 0..=m {
            if i <= k {
                le += c;
            }
            if i >= k {
                ge += c;
            }
            c = c * (m - i) as u128 / (i + 1) as u128;
        }
        let total = 2f64.powi(m as i32);
        (le as f64 / total, ge as f64 / total)
    } else {
        let ln_half_m = m as f64 * 0.5f64.ln();
        let mut ln_c = 0.0;
        let (mut le, mut ge) = (0.0, 0.0);
        for i in 0..=m {
            let p = (ln_c + ln_half_m).exp();
            if i <= k {
                le += p;
            }
            if i >= k {
                ge += p;
            }
            ln_c += ((m - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        (le, ge)
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs is constant".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "spearman inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(invalid(format!(
            "spearman needs at least 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("spearman inputs must be finite"));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyBin {
    pub label: String,
    pub n: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub success: f64,
}

pub fn bin_labels(n_bins: usize) -> Result<&'static [&'static str]> {
    match n_bins {
        2 => Ok(&["lower half", "upper half"]),
        3 => Ok(&["low tertile", "mid tertile", "high tertile"]),
        _ => Err(invalid(format!(
            "difficulty bins must be 2 or 3, got {n_bins}"
        ))),
    }
}

/// Splits one variant's episodes into equal-count goal-distance bins.
///
/// Episodes are ranked by `(initial_goal_distance, seed, episode_id)`, so
/// tied distances still give stable, equal-size bins. Bin `i` holds ranks
/// `[i*n/k, (i+1)*n/k)`.
pub fn difficulty_bins(records: &[&EpisodeRecord], n_bins: usize) -> Result<Vec<DifficultyBin>> {
    let labels = bin_labels(n_bins)?;
    if records.len() < n_bins {
        return Err(invalid(format!(
            "{} records cannot fill {n_bins} difficulty bins",
            records.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.budget != records[0].budget) {
        return Err(invalid(format!(
            "difficulty bins mix budgets `{}` and `{}`",
            records[0].budget, r.budget
        )));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| {
        a.initial_goal_distance
            .total_cmp(&b.initial_goal_distance)
            .then(a.seed.cmp(&b.seed))
            .then(a.episode_id.cmp(&b.episode_id))
    });
    let n = sorted.len();
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let chunk = &sorted[i * n / n_bins..(i + 1) * n / n_bins];
            DifficultyBin {
                label: (*label).into(),
                n: chunk.len(),
                min_distance: chunk[0].initial_goal_distance,
                max_distance: chunk[chunk.len() - 1].initial_goal_distance,
                success: chunk.iter().map(|r| f64::from(r.success)).sum::<f64>()
                    / chunk.len() as f64,
            }
        })
        .collect())
}

/// Aligns two variants' records on their paired-unit keys.
///
/// Returns `(key, success_a, success_b)` sorted by key.
pub fn align_pairs(a: &[&EpisodeRecord], b: &[&EpisodeRecord]) -> Result<Vec<(UnitKey, f64, f64)>> {
    let index = |rs: &[&EpisodeRecord], side: &str| -> Result<BTreeMap<UnitKey, f64>> {
        let mut m = BTreeMap::new();
        for r in rs {
            if m.insert((r.seed, r.episode_id), f64::from(r.success))
                .is_some()
            {
                return Err(invalid(format!(
                    "duplicate paired unit (seed {}, episode {}) on side {side}",
                    r.seed, r.episode_id
                )));
            }
        }
        Ok(m)
    };
    let ma = index(a, "a")?;
    let mb = index(b, "b")?;
    if let Some(k) = ma
        .keys()
        .find(|k| !mb.contains_key(k))
        .or_else(|| mb.keys().find(|k| !ma.contains_key(k)))
    {
        return Err(invalid(format!(
            "paired unit (seed {}, episode {}) is present for only one variant",
            k.0, k.1
        )));
    }
    Ok(ma.into_iter().map(|(k, sa)| (k, sa, mb[&k])).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchupCounts {
    pub a_only_wins: usize,
    pub b_only_wins: usize,
    pub both_win: usize,
    pub both_fail: usize,
}

impl MatchupCounts {
    pub fn n_pairs(&self) -> usize {
        self.a_only_wins + self.b_only_wins + self.both_win + self.both_fail
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            a_only_wins: self.a_only_wins + other.a_only_wins,
            b_only_wins: self.b_only_wins + other.b_only_wins,
            both_win: self.both_win + other.both_win,
            both_fail: self.both_fail + other.both_fail,
        }
    }
}

pub fn matchup_counts(a: &[&EpisodeRecord], b: &[&EpisodeRecord]) -> Result<MatchupCounts> {
    let mut c = MatchupCounts::default();
    for (_, sa, sb) in align_pairs(a, b)? {
        match (sa > 0.0, sb > 0.0) {
            (true, true) => c.both_win += 1,
            (true, false) => c.a_only_wins += 1,
            (false, true) => c.b_only_wins += 1,
            (false, false) => c.both_fail += 1,
        }
    }
    Ok(c)
}

/// Paired comparison of `a - b` on one budget's records.
pub fn compare_variants(
    a: &[&EpisodeRecord],
    b: &[&EpisodeRecord],
    n_resamples: usize,
    rng: &mut Stream,
) -> Result<PairedComparison> {
    let name = |rs: &[&EpisodeRecord]| rs.first().map(|r| r.variant.clone()).unwrap_or_default();
    let pairs: Vec<(f64, f64)> = align_pairs(a, b)?
        .into_iter()
        .map(|(_, x, y)| (x, y))
        .collect();
    let ci = paired_delta_ci(&pairs, n_resamples, DEFAULT_LEVEL, rng)?;
    let (p_sign, n_nontied) = sign_test(&pairs);
    Ok(PairedComparison {
        name_a: name(a),
        name_b: name(b),
        budget: a.first().map(|r| r.budget.clone()).unwrap_or_default(),
        n_pairs: ci.n_pairs,
        delta: ci.delta,
        ci_low: ci.ci_low,
        ci_high: ci.ci_high,
        p_sign,
        n_nontied,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub variant_name: String,
    pub success: f64,
    pub size_bytes: u64,
    pub non_dominated: bool,
}

/// Flags the points not dominated under (maximize success, minimize size).
///
/// Output order follows input order.
pub fn pareto_frontier(points: &[(String, f64, u64)]) -> Vec<ParetoPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .2
            .cmp(&points[j].2)
            .then(points[j].1.total_cmp(&points[i].1))
    });
    let mut flags = vec![false; points.len()];
    // Best success among strictly smaller sizes.
    let mut best_smaller = f64::NEG_INFINITY;
    let mut g = 0;
    while g < order.len() {
        let size = points[order[g]].2;
        let mut end = g;
        while end < order.len() && points[order[end]].2 == size {
            end += 1;
        }
        // Within a size group the first entry has the highest success.
        let group_best = points[order[g]].1;
        for &i in &order[g..end] {
            flags[i] = points[i].1 == group_best && points[i].1 > best_smaller;
        }
        best_smaller = best_smaller.max(group_best);
        g = end;
    }
    points
        .iter()
        .zip(flags)
        .map(|((name, success, size), non_dominated)| ParetoPoint {
            variant_name: name.clone(),
            success: *success,
            size_bytes: *size,
            non_dominated,
        })
        .collect()
}

/// One (variant, budget, seed) aggregate of episode records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub variant: String,
    pub budget: String,
    pub seed: u64,
    pub n: usize,
    pub success: f64,
    pub mean_state_distance: f64,
    pub visual_embedding_divergence: f64,
}

/// Named accessor for one run-level diagnostic.
pub type Diagnostic = (&'static str, fn(&RunPoint) -> f64);

/// Run-level divergence diagnostics by name.
pub const DIAGNOSTICS: [Diagnostic; 2] = [
    ("mean_state_distance", |p| p.mean_state_distance),
    ("visual_embedding_divergence", |p| {
        p.visual_embedding_divergence
    }),
];

/// Episode count and summed success, state distance and embedding divergence.
type RunAccumulator = (usize, f64, f64, f64);

/// Aggregates records into run-level points, ordered by first appearance.
pub fn run_points(records: &[EpisodeRecord]) -> Vec<RunPoint> {
    let mut order: Vec<(String, String, u64)> = Vec::new();
    let mut acc: BTreeMap<(String, String, u64), RunAccumulator> = BTreeMap::new();
    for r in records {
        let key = (r.variant.clone(), r.budget.clone(), r.seed);
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0.0, 0.0, 0.0)
        });
        e.0 += 1;
        e.1 += f64::from(r.success);
        e.2 += r.mean_state_distance;
        e.3 += r.visual_embedding_divergence;
    }
    order
        .into_iter()
        .map(|key| {
            let (n, s, m, v) = acc[&key];
            let nf = n as f64;
            RunPoint {
                variant: key.0,
                budget: key.1,
                seed: key.2,
                n,
                success: s / nf,
                mean_state_distance: m / nf,
                visual_embedding_divergence: v / nf,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticCorrelation {
    pub diagnostic: String,
    pub n_points: usize,
    /// `None` when the correlation is undefined (for example constant success).
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Spearman rho between run-level success and each divergence diagnostic.
pub fn diagnostic_correlations(points: &[RunPoint]) -> Vec<DiagnosticCorrelation> {
    let success: Vec<f64> = points.iter().map(|p| p.success).collect();
    DIAGNOSTICS
        .iter()
        .map(|(name, get)| {
            let d: Vec<f64> = points.iter().map(get).collect();
            let (rho, note) = match spearman(&success, &d) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            DiagnosticCorrelation {
                diagnostic: (*name).into(),
                n_points: points.len(),
                rho,
                note,
            }
        })
        .collect()
}
