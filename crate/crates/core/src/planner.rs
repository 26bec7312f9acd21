//! Cross-entropy-method planning in latent space and MPC episode execution.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{dist, render, step, EnvState, EpisodeSpec, Vec2, WallEnvConfig};
use crate::error::{invalid, Error, Result};
use crate::rng::{RngScheme, Stream};
use crate::worldmodel::WorldModel;

/// Horizon, CEM iterations per plan, and MPC replanning rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerBudget {
    pub goal_h: usize,
    pub opt_steps: usize,
    pub max_iter: usize,
}

impl PlannerBudget {
    pub const BA: Self = Self {
        goal_h: 9,
        opt_steps: 2,
        max_iter: 2,
    };
    pub const BB: Self = Self {
        goal_h: 12,
        opt_steps: 3,
        max_iter: 3,
    };

    pub fn validate(&self) -> Result<()> {
        if self.goal_h == 0 || self.opt_steps == 0 || self.max_iter == 0 {
            return Err(invalid(
                "goal_h, opt_steps and max_iter must all be at least 1",
            ));
        }
        Ok(())
    }

    pub fn max_steps(&self) -> usize {
        self.goal_h * self.max_iter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    /// Initial per-dimension standard deviation; `None` means half the max step.
    pub init_std: Option<f64>,
    pub std_floor: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 64,
            elite_fraction: 0.25,
            init_std: None,
            std_floor: 1e-3,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(invalid("population must be at least 4"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 0.5) {
            return Err(invalid("elite_fraction must lie in (0, 0.5]"));
        }
        if let Some(s) = self.init_std {
            if s.is_nan() || s <= 0.0 {
                return Err(invalid("init_std must be positive"));
            }
        }
        if self.std_floor.is_nan() || self.std_floor <= 0.0 {
            return Err(invalid("std_floor must be positive"));
        }
        Ok(())
    }

    pub fn n_elite(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).ceil() as usize).max(1)
    }

    fn init_std_for(&self, max_step: f64) -> f64 {
        self.init_std.unwrap_or(0.5 * max_step)
    }
}

/// Costs logged while planning.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanTrace {
    /// Cost of the all-zero starting mean.
    pub initial_mean_cost: f64,
    /// Lowest cost in each CEM iteration's population.
    pub best_costs: Vec<f64>,
    pub returned_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub actions: Vec<Vec2>,
    pub trace: PlanTrace,
}

fn latent_cost(model: &WorldModel, z0: &[f64], goal: &[f64], seq: &[Vec2]) -> f64 {
    let z = model.rollout_last(z0, seq);
    z.iter()
        .zip(goal)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// CEM over action sequences of length `goal_h`, scoring each sequence by the
/// distance between its final predicted latent and the goal latent.
///
/// The current mean and the previous iteration's elites are re-evaluated
/// alongside fresh samples, so the best cost never increases across
/// iterations. The refit mean is returned unless a sampled elite beats it.
pub fn plan_actions(
    model: &WorldModel,
    current_obs: &[f32],
    goal_obs: &[f32],
    budget: &PlannerBudget,
    cem: &CemConfig,
    max_step: f64,
    rng: &mut Stream,
) -> Result<Plan> {
    budget.validate()?;
    cem.validate()?;
    let z0 = model.encode(current_obs)?;
    let zg = model.encode(goal_obs)?;
    let h = budget.goal_h;
    let n_elite = cem.n_elite();
    let clamp = |a: f64| a.clamp(-max_step, max_step);

    let mut mean = vec![[0.0f64; 2]; h];
    let mut std = vec![[cem.init_std_for(max_step); 2]; h];
    let mut elites: Vec<(f64, Vec<Vec2>)> = Vec::new();
    let initial_mean_cost = latent_cost(model, &z0, &zg, &mean);
    let mut best_costs = Vec::with_capacity(budget.opt_steps);

    for _ in 0..budget.opt_steps {
        let mut population: Vec<Vec<Vec2>> = Vec::with_capacity(cem.population);
        population.push(mean.iter().map(|a| a.map(clamp)).collect());
        population.extend(elites.drain(..).map(|(_, seq)| seq));
        while population.len() < cem.population {
            let seq = (0..h)
                .map(|t| {
                    let mut a = [0.0; 2];
                    for d in 0..2 {
                        let n: f64 = rng.sample(StandardNormal);
                        a[d] = clamp(mean[t][d] + std[t][d] * n);
                    }
                    a
                })
                .collect();
            population.push(seq);
        }
        let mut scored: Vec<(f64, Vec<Vec2>)> = population
            .into_iter()
            .map(|seq| (latent_cost(model, &z0, &zg, &seq), seq))
            .collect();
        if let Some((c, _)) = scored.iter().find(|(c, _)| !c.is_finite()) {
            return Err(Error::Planning(format!("non-finite plan cost {c}")));
        }
        // Stable sort keeps population order among equal costs.
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        scored.truncate(n_elite);
        best_costs.push(scored[0].0);

        let k = scored.len() as f64;
        for t in 0..h {
            for d in 0..2 {
                let m = scored.iter().map(|(_, s)| s[t][d]).sum::<f64>() / k;
                let var = scored
                    .iter()
                    .map(|(_, s)| (s[t][d] - m).powi(2))
                    .sum::<f64>()
                    / k;
                mean[t][d] = m;
                std[t][d] = var.sqrt().max(cem.std_floor);
            }
        }
        elites = scored;
    }

    let mean: Vec<Vec2> = mean.iter().map(|a| a.map(clamp)).collect();
    let mean_cost = latent_cost(model, &z0, &zg, &mean);
    let (best_cost, best_seq) = elites.swap_remove(0);
    let (actions, returned_cost) = if mean_cost <= best_cost {
        (mean, mean_cost)
    } else {
        (best_seq, best_cost)
    };
    Ok(Plan {
        actions,
        trace: PlanTrace {
            initial_mean_cost,
            best_costs,
            returned_cost,
        },
    })
}

/// Outcome of one planning episode: one row of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub variant: String,
    pub budget: String,
    pub seed: u64,
    pub episode_id: u64,
    pub success: u8,
    pub initial_goal_distance: f64,
    pub steps_executed: usize,
    pub runtime_seconds: f64,
    pub mean_state_distance: f64,
    pub visual_embedding_divergence: f64,
    pub model_size_bytes: u64,
}

/// Everything `run_episode` needs besides the models and the spec.
#[derive(Debug, Clone)]
pub struct EpisodeContext<'a> {
    pub env: &'a WallEnvConfig,
    pub cem: &'a CemConfig,
    pub budget_name: &'a str,
    pub budget: PlannerBudget,
    pub scheme: &'a RngScheme,
    pub record_wall_clock: bool,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Runs one MPC episode: plan `goal_h` actions with the variant model, execute
/// all of them, replan, up to `max_iter` rounds. Success is reaching the goal
/// radius after any executed step.
///
/// Diagnostics, averaged over executed steps:
/// * `mean_state_distance`: full-precision probe applied to the variant's
///   open-loop latent for the executed prefix of the current plan, vs the
///   true state.
/// * `visual_embedding_divergence`: `|enc_variant(o_t) - enc_fp(o_t)|` on the
///   observation each action was taken from.
///
/// With no executed steps both are measured on the start observation.
pub fn run_episode(
    ctx: &EpisodeContext<'_>,
    variant_name: &str,
    variant: &WorldModel,
    variant_size_bytes: u64,
    fullprec: &WorldModel,
    spec: &EpisodeSpec,
) -> Result<EpisodeRecord> {
    let started = Instant::now();
    let env = ctx.env;
    let goal = spec.goal;
    let goal_obs = render(&goal, env);
    let mut state = spec.start;
    let mut steps = 0usize;
    let mut success = dist(state.pos, goal.pos) <= env.success_radius;
    let mut state_dist_sum = 0.0;
    let mut div_sum = 0.0;

    'rounds: for round in 0..ctx.budget.max_iter {
        if success {
            break;
        }
        let obs = render(&state, env);
        let mut rng = ctx
            .scheme
            .stream("planner", &[spec.seed, spec.episode_id, round as u64]);
        let plan = match plan_actions(
            variant,
            &obs,
            &goal_obs,
            &ctx.budget,
            ctx.cem,
            env.max_step,
            &mut rng,
        ) {
            Ok(p) => p,
            Err(Error::Planning(_)) => break,
            Err(e) => return Err(e),
        };
        let mut z_pred = variant.encode(&obs)?;
        for a in &plan.actions {
            let obs_t = render(&state, env);
            div_sum += l2(&variant.encode(&obs_t)?, &fullprec.encode(&obs_t)?);
            state = step(state, *a, env);
            z_pred = variant.predict_next(&z_pred, a)?;
            state_dist_sum += dist(fullprec.probe_state(&z_pred), state.pos);
            steps += 1;
            if dist(state.pos, goal.pos) <= env.success_radius {
                success = true;
                break 'rounds;
            }
        }
    }

    let (mean_state_distance, visual_embedding_divergence) = if steps == 0 {
        let obs0 = render(&spec.start, env);
        let zv = variant.encode(&obs0)?;
        (
            dist(fullprec.probe_state(&zv), spec.start.pos),
            l2(&zv, &fullprec.encode(&obs0)?),
        )
    } else {
        (state_dist_sum / steps as f64, div_sum / steps as f64)
    };
    let runtime_seconds = if ctx.record_wall_clock {
        started.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Ok(EpisodeRecord {
        variant: variant_name.to_string(),
        budget: ctx.budget_name.to_string(),
        seed: spec.seed,
        episode_id: spec.episode_id,
        success: u8::from(success),
        initial_goal_distance: spec.initial_goal_distance,
        steps_executed: steps,
        runtime_seconds,
        mean_state_distance,
        visual_embedding_divergence,
        model_size_bytes: variant_size_bytes,
    })
}

/// Final state reached by executing `actions` from `start`.
pub fn execute(start: EnvState, actions: &[Vec2], env: &WallEnvConfig) -> EnvState {
    actions.iter().fold(start, |s, a| step(s, *a, env))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Mlp};
    use crate::worldmodel::ModelShape;

    fn random_model(seed: u64) -> WorldModel {
        let shape = ModelShape {
            obs_dim: 16,
            latent_dim: 4,
            hidden: 8,
            encoder_depth: 2,
            predictor_depth: 2,
        };
        WorldModel::init(&shape, 8.0, &mut RngScheme::new(seed).stream("m", &[])).unwrap()
    }

    fn small_env() -> WallEnvConfig {
        WallEnvConfig {
            image_side: 4,
            ..WallEnvConfig::default()
        }
    }

    #[test]
    fn plan_is_deterministic_and_monotone() {
        let m = random_model(1);
        let env = small_env();
        let cur = render(&EnvState::new(0.1, 0.2), &env);
        let goal = render(&EnvState::new(0.9, 0.8), &env);
        let cem = CemConfig::default();
        for seed in 0..20 {
            let plan = |s| {
                let mut rng = RngScheme::new(s).stream("planner", &[0]);
                plan_actions(
                    &m,
                    &cur,
                    &goal,
                    &PlannerBudget::BB,
                    &cem,
                    env.max_step,
                    &mut rng,
                )
                .unwrap()
            };
            let p = plan(seed);
            assert_eq!(p, plan(seed));
            assert_eq!(p.actions.len(), 12);
            assert!(p.actions.iter().flatten().all(|a| a.abs() <= env.max_step));
            assert!(p.trace.best_costs.windows(2).all(|w| w[1] <= w[0]));
            assert!(p.trace.best_costs[0] <= p.trace.initial_mean_cost);
            assert!(p.trace.returned_cost <= p.trace.initial_mean_cost);
        }
    }

    #[test]
    fn identity_predictor_stationary_goal() {
        let mut m = random_model(2);
        // Zero predictor output makes the residual predictor the identity.
        m.predictor = Mlp {
            layers: vec![Linear::zeros(8, 6), Linear::zeros(4, 8)],
        };
        let env = small_env();
        let obs = render(&EnvState::new(0.3, 0.3), &env);
        let mut rng = RngScheme::new(0).stream("planner", &[0]);
        let p = plan_actions(
            &m,
            &obs,
            &obs,
            &PlannerBudget::BA,
            &CemConfig::default(),
            env.max_step,
            &mut rng,
        )
        .unwrap();
        assert_eq!(p.trace.initial_mean_cost, 0.0);
        assert_eq!(p.trace.returned_cost, 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = CemConfig {
            population: 3,
            ..CemConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CemConfig {
            elite_fraction: 0.6,
            ..CemConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PlannerBudget {
            goal_h: 0,
            ..PlannerBudget::BA
        };
        assert!(bad.validate().is_err());
        assert_eq!(PlannerBudget::BA.max_steps(), 18);
        assert_eq!(PlannerBudget::BB.max_steps(), 36);
        assert_eq!(CemConfig::default().n_elite(), 16);
    }

    fn ctx<'a>(
        env: &'a WallEnvConfig,
        cem: &'a CemConfig,
        scheme: &'a RngScheme,
        budget: PlannerBudget,
    ) -> EpisodeContext<'a> {
        EpisodeContext {
            env,
            cem,
            budget_name: "bA",
            budget,
            scheme,
            record_wall_clock: false,
        }
    }

    #[test]
    fn episode_caps_steps_and_self_divergence_is_zero() {
        let env = small_env();
        let cem = CemConfig::default();
        let scheme = RngScheme::new(0);
        let m = random_model(3);
        let specs = crate::env::sample_episode_specs(0, 5, &env, &scheme);
        for budget in [PlannerBudget::BA, PlannerBudget::BB] {
            for spec in &specs {
                let r = run_episode(&ctx(&env, &cem, &scheme, budget), "fp16", &m, 10, &m, spec)
                    .unwrap();
                assert!(r.steps_executed <= budget.max_steps());
                assert_eq!(r.visual_embedding_divergence, 0.0);
                assert!(r.mean_state_distance.is_finite());
                assert_eq!(r.runtime_seconds, 0.0);
            }
        }
    }

    #[test]
    fn start_inside_goal_radius_is_immediate_success() {
        let env = small_env();
        let cem = CemConfig::default();
        let scheme = RngScheme::new(0);
        let m = random_model(4);
        let start = EnvState::new(0.49, 0.5);
        let goal = EnvState::new(0.52, 0.5);
        let spec = EpisodeSpec {
            seed: 0,
            episode_id: 0,
            start,
            goal,
            initial_goal_distance: dist(start.pos, goal.pos),
        };
        let r = run_episode(
            &ctx(&env, &cem, &scheme, PlannerBudget::BA),
            "fp16",
            &m,
            1,
            &m,
            &spec,
        )
        .unwrap();
        assert_eq!(r.success, 1);
        assert_eq!(r.steps_executed, 0);
        assert_eq!(r.visual_embedding_divergence, 0.0);
    }
}
