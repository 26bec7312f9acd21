//! The staged experiment pipeline and its output directory layout.
//!
//! ```text
//! <out>/run_info.json
//! <out>/data/dataset.{json,bin}
//! <out>/model/{manifest.json,weights.bin}
//! <out>/variants/<name>/{manifest.json,weights.bin}
//! <out>/sizes.json
//! <out>/episodes.csv
//! <out>/{comparisons,matchups,bins,frontier,correlations}.json
//! <out>/report/{main_table.csv,*.svg}
//! ```
//!
//! Every stage reads its prerequisites from disk, so stages can be run one
//! at a time. A missing prerequisite names the stage that produces it; one
//! produced under a different config asks for that stage to be rerun.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alloc::{apply_policy, VariantModel};
use crate::artifacts::{
    read_artifact, write_json, BinsEntry, BinsFile, ComparisonsFile, CorrelationsFile,
    FrontierEntry, FrontierFile, MatchupEntry, MatchupsFile, SizeEntry, SizesFile,
};
use crate::config::ExperimentConfig;
use crate::env::{gen_dataset, Dataset, DATASET_BLOB, DATASET_MANIFEST};
use crate::error::{invalid, Error, Result};
use crate::eval::{read_episodes_csv, run_paired_eval, write_episodes_csv, RunSet};
use crate::planner::EpisodeRecord;
use crate::report;
use crate::rng::RngScheme;
use crate::stats::{
    compare_variants, diagnostic_correlations, difficulty_bins, matchup_counts, pareto_frontier,
    run_points, MatchupCounts,
};
use crate::store::{
    bytes_to_mb, load_bundle, persist_bundle, persist_model, Model, BLOB_FILE, MANIFEST_FILE,
};
use crate::worldmodel::{train_world_model, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenData,
    Train,
    Variants,
    Eval,
    Stats,
    Report,
    All,
}

impl Stage {
    pub const SEQUENCE: [Stage; 6] = [
        Stage::GenData,
        Stage::Train,
        Stage::Variants,
        Stage::Eval,
        Stage::Stats,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Variants => "variants",
            Stage::Eval => "eval",
            Stage::Stats => "stats",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::SEQUENCE
            .iter()
            .chain([&Stage::All])
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| {
                invalid(format!(
                    "unknown stage `{s}`; expected one of gen-data, train, variants, eval, stats, report, all"
                ))
            })
    }
}

/// Paths of every artifact under one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_info(&self) -> PathBuf {
        self.root.join("run_info.json")
    }
    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }
    pub fn variant_dir(&self, name: &str) -> PathBuf {
        self.root.join("variants").join(name)
    }
    pub fn sizes(&self) -> PathBuf {
        self.root.join("sizes.json")
    }
    pub fn episodes(&self) -> PathBuf {
        self.root.join("episodes.csv")
    }
    pub fn comparisons(&self) -> PathBuf {
        self.root.join("comparisons.json")
    }
    pub fn matchups(&self) -> PathBuf {
        self.root.join("matchups.json")
    }
    pub fn bins(&self) -> PathBuf {
        self.root.join("bins.json")
    }
    pub fn frontier(&self) -> PathBuf {
        self.root.join("frontier.json")
    }
    pub fn correlations(&self) -> PathBuf {
        self.root.join("correlations.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    /// The stats JSON files, in a fixed order.
    pub fn stats_files(&self) -> [PathBuf; 5] {
        [
            self.comparisons(),
            self.matchups(),
            self.bins(),
            self.frontier(),
            self.correlations(),
        ]
    }
}

/// Records which stages completed under which config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config_hash: String,
    pub completed: BTreeSet<String>,
    pub config: ExperimentConfig,
}

/// Paired comparisons reported by the stats stage, as `(a, b)` with delta `a - b`.
pub const COMPARISONS: [(&str, &str); 15] = [
    ("mixed_int8", "uniform_int8"),
    ("mixed_int6", "uniform_int6"),
    ("mixed_int4", "uniform_int4"),
    ("mixed_int3", "uniform_int3"),
    ("enc6_pred4", "uniform_int4"),
    ("enc8_pred4", "uniform_int4"),
    ("enc4_pred8", "mixed_int4"),
    ("enc4_pred6", "mixed_int4"),
    ("layerwise_int4_25", "uniform_int4"),
    ("layerwise_int4_50", "uniform_int4"),
    ("layerwise_int4_75", "uniform_int4"),
    ("uniform_int8", "fp16"),
    ("uniform_int6", "fp16"),
    ("uniform_int4", "fp16"),
    ("uniform_int3", "fp16"),
];

/// Mixed-versus-uniform matchup tables reported per budget and pooled.
pub const MATCHUPS: [(&str, &str); 4] = [
    ("mixed_int8", "uniform_int8"),
    ("mixed_int6", "uniform_int6"),
    ("mixed_int4", "uniform_int4"),
    ("mixed_int3", "uniform_int3"),
];

pub const POOLED: &str = "pooled";

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub layout: Layout,
    pub jobs: usize,
    hash: String,
    scheme: RngScheme,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, jobs: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layout: Layout::new(&config.output_dir),
            hash: config.hash(),
            scheme: RngScheme::new(config.master_seed),
            jobs: jobs.max(1),
            config,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::All => Stage::SEQUENCE.iter().try_for_each(|&s| self.run(s)),
            Stage::GenData => self.gen_data().map(drop),
            Stage::Train => self.train().map(drop),
            Stage::Variants => self.variants().map(drop),
            Stage::Eval => self.eval().map(drop),
            Stage::Stats => self.stats().map(drop),
            Stage::Report => self.report(),
        }
    }

    fn mark_done(&self, stage: Stage) -> Result<()> {
        let path = self.layout.run_info();
        let mut info = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<RunInfo>(&text).ok(),
            Err(_) => None,
        }
        .filter(|i| i.config_hash == self.hash)
        .unwrap_or_else(|| RunInfo {
            config_hash: self.hash.clone(),
            completed: BTreeSet::new(),
            config: self.config.clone(),
        });
        info.completed.insert(stage.name().to_string());
        write_json(&path, &info)
    }

    fn stamp(&self, model: &mut Model) {
        if !model.extras.is_object() {
            model.extras = serde_json::json!({});
        }
        model.extras["config_hash"] = self.hash.clone().into();
    }

    fn check_stamp(&self, model: &Model, path: &Path, stage: Stage) -> Result<()> {
        if model.extras.get("config_hash").and_then(|v| v.as_str()) != Some(self.hash.as_str()) {
            return Err(Error::StaleArtifact {
                stage: stage.name(),
                path: path.to_path_buf(),
            });
        }
        Ok(())
    }

    fn load_stamped(&self, dir: &Path, manifest: &str, blob: &str, stage: Stage) -> Result<Model> {
        let path = dir.join(manifest);
        if !path.is_file() {
            return Err(Error::MissingStage {
                stage: stage.name(),
                path,
            });
        }
        let model = load_bundle(dir, manifest, blob)?;
        self.check_stamp(&model, &path, stage)?;
        Ok(model)
    }

    pub fn gen_data(&self) -> Result<Dataset> {
        let d = &self.config.data;
        let ds = gen_dataset(d.n_traj, d.traj_len, d.seed, &self.config.env, &self.scheme)?;
        let mut model = ds.to_model();
        self.stamp(&mut model);
        persist_bundle(
            &model,
            &self.layout.data_dir(),
            DATASET_MANIFEST,
            DATASET_BLOB,
        )?;
        self.mark_done(Stage::GenData)?;
        Ok(ds)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let model = self.load_stamped(
            &self.layout.data_dir(),
            DATASET_MANIFEST,
            DATASET_BLOB,
            Stage::GenData,
        )?;
        Dataset::from_model(&model)
    }

    pub fn train(&self) -> Result<WorldModel> {
        let ds = self.load_dataset()?;
        let action_scale = 1.0 / self.config.env.max_step;
        let wm = train_world_model(
            &ds,
            &self.config.model,
            action_scale,
            &self.config.train,
            &self.scheme,
        )?;
        let mut model = wm.to_model();
        self.stamp(&mut model);
        persist_model(&model, &self.layout.model_dir())?;
        self.mark_done(Stage::Train)?;
        Ok(wm)
    }

    pub fn load_base_model(&self) -> Result<Model> {
        self.load_stamped(
            &self.layout.model_dir(),
            MANIFEST_FILE,
            BLOB_FILE,
            Stage::Train,
        )
    }

    pub fn variants(&self) -> Result<Vec<VariantModel>> {
        let base = self.load_base_model()?;
        let mut out = Vec::new();
        let mut entries = Vec::new();
        for (name, policy) in self.config.variant_policies()? {
            let mut v = apply_policy(&base, policy)?;
            v.name = name;
            v.model.extras["variant"] = serde_json::json!({
                "policy": v.policy.to_string(),
                "size_bytes": v.size_bytes,
            });
            persist_model(&v.model, &self.layout.variant_dir(&v.name))?;
            entries.push(SizeEntry {
                name: v.name.clone(),
                policy: v.policy,
                size_bytes: v.size_bytes,
                size_mb: bytes_to_mb(v.size_bytes),
            });
            out.push(v);
        }
        write_json(
            &self.layout.sizes(),
            &SizesFile {
                config_hash: self.hash.clone(),
                baseline_bits: base.baseline_bits,
                variants: entries,
            },
        )?;
        self.mark_done(Stage::Variants)?;
        Ok(out)
    }

    pub fn load_sizes(&self) -> Result<SizesFile> {
        read_artifact(&self.layout.sizes(), Stage::Variants.name(), &self.hash)
    }

    pub fn load_variants(&self) -> Result<Vec<VariantModel>> {
        self.load_sizes()?
            .variants
            .into_iter()
            .map(|e| {
                let model = self.load_stamped(
                    &self.layout.variant_dir(&e.name),
                    MANIFEST_FILE,
                    BLOB_FILE,
                    Stage::Variants,
                )?;
                Ok(VariantModel {
                    name: e.name,
                    policy: e.policy,
                    model,
                    size_bytes: e.size_bytes,
                })
            })
            .collect()
    }

    pub fn eval(&self) -> Result<RunSet> {
        let base = self.load_base_model()?;
        let variants = self.load_variants()?;
        let runs = run_paired_eval(
            &base,
            &variants,
            &self.config.protocol(),
            &self.scheme,
            self.jobs,
        )?;
        write_episodes_csv(&self.layout.episodes(), &runs.records)?;
        self.mark_done(Stage::Eval)?;
        Ok(runs)
    }

    pub fn load_episodes(&self) -> Result<RunSet> {
        let path = self.layout.episodes();
        if !path.is_file() {
            return Err(Error::MissingStage {
                stage: Stage::Eval.name(),
                path,
            });
        }
        let info: Option<RunInfo> = std::fs::read_to_string(self.layout.run_info())
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let fresh = info.is_some_and(|i| {
            i.config_hash == self.hash && i.completed.contains(Stage::Eval.name())
        });
        if !fresh {
            return Err(Error::StaleArtifact {
                stage: Stage::Eval.name(),
                path,
            });
        }
        read_episodes_csv(&path)
    }

    pub fn stats(&self) -> Result<StatsBundle> {
        let runs = self.load_episodes()?;
        let bundle = compute_stats(&runs, &self.config, &self.scheme, &self.hash)?;
        write_json(&self.layout.comparisons(), &bundle.comparisons)?;
        write_json(&self.layout.matchups(), &bundle.matchups)?;
        write_json(&self.layout.bins(), &bundle.bins)?;
        write_json(&self.layout.frontier(), &bundle.frontier)?;
        write_json(&self.layout.correlations(), &bundle.correlations)?;
        self.mark_done(Stage::Stats)?;
        Ok(bundle)
    }

    pub fn load_stats(&self) -> Result<StatsBundle> {
        let stage = Stage::Stats.name();
        Ok(StatsBundle {
            comparisons: read_artifact(&self.layout.comparisons(), stage, &self.hash)?,
            matchups: read_artifact(&self.layout.matchups(), stage, &self.hash)?,
            bins: read_artifact(&self.layout.bins(), stage, &self.hash)?,
            frontier: read_artifact(&self.layout.frontier(), stage, &self.hash)?,
            correlations: read_artifact(&self.layout.correlations(), stage, &self.hash)?,
        })
    }

    pub fn report(&self) -> Result<()> {
        let runs = self.load_episodes()?;
        let sizes = self.load_sizes()?;
        let stats = self.load_stats()?;
        let dir = self.layout.report_dir();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("main_table.csv"),
            report::main_table_csv(&runs, &sizes)?,
        )?;
        std::fs::write(
            dir.join("frontier.svg"),
            report::frontier_svg(&stats.frontier),
        )?;
        std::fs::write(
            dir.join("forest.svg"),
            report::forest_svg(&stats.comparisons),
        )?;
        std::fs::write(
            dir.join("retention_curve.svg"),
            report::retention_curve_svg(&runs, &self.hash),
        )?;
        std::fs::write(
            dir.join("difficulty.svg"),
            report::difficulty_svg(&stats.bins),
        )?;
        std::fs::write(
            dir.join("divergence_scatter.svg"),
            report::divergence_scatter_svg(&stats.correlations),
        )?;
        self.mark_done(Stage::Report)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsBundle {
    pub comparisons: ComparisonsFile,
    pub matchups: MatchupsFile,
    pub bins: BinsFile,
    pub frontier: FrontierFile,
    pub correlations: CorrelationsFile,
}

fn records_of<'a>(runs: &'a RunSet, variant: &str, budget: &str) -> Vec<&'a EpisodeRecord> {
    runs.records
        .iter()
        .filter(|r| r.variant == variant && r.budget == budget)
        .collect()
}

/// All stats artifacts for one evaluation.
pub fn compute_stats(
    runs: &RunSet,
    config: &ExperimentConfig,
    scheme: &RngScheme,
    config_hash: &str,
) -> Result<StatsBundle> {
    let variants = runs.variants();
    let has = |v: &str| variants.iter().any(|n| n == v);
    let budgets: Vec<_> = config
        .budgets
        .iter()
        .filter(|b| runs.budgets().contains(&b.name))
        .collect();

    let mut comparisons = Vec::new();
    for b in &budgets {
        for (a, c) in COMPARISONS.iter().filter(|(a, c)| has(a) && has(c)) {
            let mut rng = scheme.stream(&format!("bootstrap/{}/{a}/{c}", b.name), &[]);
            comparisons.push(compare_variants(
                &records_of(runs, a, &b.name),
                &records_of(runs, c, &b.name),
                config.bootstrap_resamples,
                &mut rng,
            )?);
        }
    }

    let mut matchups = Vec::new();
    for (a, c) in MATCHUPS.iter().filter(|(a, c)| has(a) && has(c)) {
        let mut pooled = MatchupCounts::default();
        for b in &budgets {
            let counts =
                matchup_counts(&records_of(runs, a, &b.name), &records_of(runs, c, &b.name))?;
            pooled = pooled.add(&counts);
            matchups.push(MatchupEntry {
                name_a: (*a).into(),
                name_b: (*c).into(),
                scope: b.name.clone(),
                n_pairs: counts.n_pairs(),
                counts,
            });
        }
        matchups.push(MatchupEntry {
            name_a: (*a).into(),
            name_b: (*c).into(),
            scope: POOLED.into(),
            n_pairs: pooled.n_pairs(),
            counts: pooled,
        });
    }

    let mut bins = Vec::new();
    for b in &budgets {
        for v in &variants {
            bins.push(BinsEntry {
                budget: b.name.clone(),
                variant: v.clone(),
                bins: difficulty_bins(&records_of(runs, v, &b.name), b.difficulty_bins)?,
            });
        }
    }

    let size_of = |v: &str| {
        runs.records
            .iter()
            .find(|r| r.variant == v)
            .map_or(0, |r| r.model_size_bytes)
    };
    let success_of = |v: &str, budget: Option<&str>| {
        let rs: Vec<_> = runs
            .records
            .iter()
            .filter(|r| r.variant == v && budget.is_none_or(|b| r.budget == b))
            .collect();
        rs.iter().map(|r| f64::from(r.success)).sum::<f64>() / rs.len().max(1) as f64
    };
    let mut frontiers = Vec::new();
    let scopes: Vec<Option<&str>> = budgets
        .iter()
        .map(|b| Some(b.name.as_str()))
        .chain([None])
        .collect();
    for scope in scopes {
        let points: Vec<_> = variants
            .iter()
            .map(|v| (v.clone(), success_of(v, scope), size_of(v)))
            .collect();
        frontiers.push(FrontierEntry {
            scope: scope.unwrap_or(POOLED).into(),
            points: pareto_frontier(&points),
        });
    }

    let points = run_points(&runs.records);
    Ok(StatsBundle {
        comparisons: ComparisonsFile {
            config_hash: config_hash.into(),
            comparisons,
        },
        matchups: MatchupsFile {
            config_hash: config_hash.into(),
            matchups,
        },
        bins: BinsFile {
            config_hash: config_hash.into(),
            bins,
        },
        frontier: FrontierFile {
            config_hash: config_hash.into(),
            frontiers,
        },
        correlations: CorrelationsFile {
            config_hash: config_hash.into(),
            correlations: diagnostic_correlations(&points),
            run_points: points,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::SEQUENCE.iter().chain([&Stage::All]) {
            assert_eq!(s.name().parse::<Stage>().unwrap(), *s);
        }
        assert!("evaluate".parse::<Stage>().is_err());
    }
}
