//! Paired-goal evaluation across variants and planner budgets.
//!
//! For every budget and seed, one list of episode specs is generated and
//! reused for every variant; the planner stream of each episode depends only
//! on `(seed, episode_id, round)`. Any difference between two variants on the
//! same `(seed, episode_id)` unit therefore comes from their weights alone.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::VariantModel;
use crate::env::{sample_episode_specs, WallEnvConfig};
use crate::error::{invalid, Result};
use crate::planner::{run_episode, CemConfig, EpisodeContext, EpisodeRecord, PlannerBudget};
use crate::rng::RngScheme;
use crate::store::Model;
use crate::worldmodel::WorldModel;

pub const EPISODES_HEADER: &str = "variant,budget,seed,episode_id,success,initial_goal_distance,steps_executed,runtime_seconds,mean_state_distance,visual_embedding_divergence,model_size_bytes";

/// A named planner budget and the seeds evaluated under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub name: String,
    pub goal_h: usize,
    pub opt_steps: usize,
    pub max_iter: usize,
    pub seeds: Vec<u64>,
    /// Number of goal-distance quantile bins used in the difficulty analysis.
    #[serde(default = "default_bins")]
    pub difficulty_bins: usize,
}

fn default_bins() -> usize {
    2
}

impl BudgetSpec {
    pub fn new(name: &str, budget: PlannerBudget, seeds: Vec<u64>, difficulty_bins: usize) -> Self {
        Self {
            name: name.into(),
            goal_h: budget.goal_h,
            opt_steps: budget.opt_steps,
            max_iter: budget.max_iter,
            seeds,
            difficulty_bins,
        }
    }

    pub fn budget(&self) -> PlannerBudget {
        PlannerBudget {
            goal_h: self.goal_h,
            opt_steps: self.opt_steps,
            max_iter: self.max_iter,
        }
    }
}

pub fn default_budgets() -> Vec<BudgetSpec> {
    vec![
        BudgetSpec::new("bA", PlannerBudget::BA, vec![0, 1, 2], 3),
        BudgetSpec::new("bB", PlannerBudget::BB, vec![0, 1], 2),
    ]
}

#[derive(Debug, Clone)]
pub struct EvalProtocol {
    pub env: WallEnvConfig,
    pub cem: CemConfig,
    pub budgets: Vec<BudgetSpec>,
    pub episodes_per_run: usize,
    pub record_wall_clock: bool,
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.cem.validate()?;
        if self.episodes_per_run == 0 {
            return Err(invalid("episodes_per_run must be at least 1"));
        }
        let mut names = HashSet::new();
        for b in &self.budgets {
            b.budget().validate()?;
            if !names.insert(b.name.as_str()) {
                return Err(invalid(format!("duplicate budget name `{}`", b.name)));
            }
            if b.seeds.is_empty() {
                return Err(invalid(format!("budget `{}` has no seeds", b.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub records: Vec<EpisodeRecord>,
}

impl RunSet {
    pub fn for_variant<'a>(
        &'a self,
        variant: &'a str,
        budget: &'a str,
    ) -> impl Iterator<Item = &'a EpisodeRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.variant == variant && r.budget == budget)
    }

    pub fn variants(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.variant.as_str()))
            .map(|r| r.variant.clone())
            .collect()
    }

    pub fn budgets(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.budget.as_str()))
            .map(|r| r.budget.clone())
            .collect()
    }
}

/// Evaluates every variant on the same paired episodes.
///
/// Records are ordered by (variant list order, budget list order, seed,
/// episode_id) regardless of how many worker threads run the cells.
pub fn run_paired_eval(
    fullprec: &Model,
    variants: &[VariantModel],
    protocol: &EvalProtocol,
    scheme: &RngScheme,
    jobs: usize,
) -> Result<RunSet> {
    protocol.validate()?;
    if variants.is_empty() {
        return Err(invalid("no variants to evaluate"));
    }
    let mut names = HashSet::new();
    for v in variants {
        if !names.insert(v.name.as_str()) {
            return Err(invalid(format!("duplicate variant name `{}`", v.name)));
        }
    }
    let reference = WorldModel::from_model(fullprec)?;
    let models: Vec<WorldModel> = variants
        .iter()
        .map(|v| WorldModel::from_model(&v.model))
        .collect::<Result<_>>()?;

    struct Cell {
        variant: usize,
        budget: usize,
        spec: crate::env::EpisodeSpec,
    }
    let mut cells = Vec::new();
    for (bi, b) in protocol.budgets.iter().enumerate() {
        for &seed in &b.seeds {
            let specs =
                sample_episode_specs(seed, protocol.episodes_per_run, &protocol.env, scheme);
            for vi in 0..variants.len() {
                cells.extend(specs.iter().map(|&spec| Cell {
                    variant: vi,
                    budget: bi,
                    spec,
                }));
            }
        }
    }

    let run = |c: &Cell| -> Result<((usize, usize, u64, u64), EpisodeRecord)> {
        let b = &protocol.budgets[c.budget];
        let ctx = EpisodeContext {
            env: &protocol.env,
            cem: &protocol.cem,
            budget_name: &b.name,
            budget: b.budget(),
            scheme,
            record_wall_clock: protocol.record_wall_clock,
        };
        let v = &variants[c.variant];
        let rec = run_episode(
            &ctx,
            &v.name,
            &models[c.variant],
            v.size_bytes,
            &reference,
            &c.spec,
        )?;
        Ok(((c.variant, c.budget, c.spec.seed, c.spec.episode_id), rec))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let mut keyed: Vec<_> =
        pool.install(|| cells.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    keyed.sort_by_key(|(k, _)| *k);
    Ok(RunSet {
        records: keyed.into_iter().map(|(_, r)| r).collect(),
    })
}

pub fn write_episodes_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(EPISODES_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episodes_csv(path: &Path) -> Result<RunSet> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != EPISODES_HEADER {
        return Err(invalid(format!(
            "{} has header `{}`, expected `{EPISODES_HEADER}`",
            path.display(),
            header.join(",")
        )));
    }
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<EpisodeRecord>, _>>()?;
    Ok(RunSet { records })
}
