//! One MPC episode with the CEM planner, at full precision and at INT3.
//!
//! cargo run --release --example cem_planning

use mbquant::alloc::{apply_policy, AllocationPolicy};
use mbquant::env::{gen_dataset, render, sample_episode_specs, WallEnvConfig};
use mbquant::planner::{plan_actions, run_episode, CemConfig, EpisodeContext, PlannerBudget};
use mbquant::rng::RngScheme;
use mbquant::worldmodel::{train_world_model, ModelShape, TrainConfig, WorldModel};

fn main() -> mbquant::Result<()> {
    let env = WallEnvConfig::default();
    let scheme = RngScheme::new(0);
    let data = gen_dataset(200, 20, 0, &env, &scheme)?;
    let fp = train_world_model(
        &data,
        &ModelShape::default(),
        1.0 / env.max_step,
        &TrainConfig::default(),
        &scheme,
    )?;
    let base = fp.to_model();
    let cem = CemConfig::default();
    let spec = sample_episode_specs(0, 1, &env, &scheme)[0];

    let mut rng = scheme.stream("planner", &[0, 0, 0]);
    let plan = plan_actions(
        &fp,
        &render(&spec.start, &env),
        &render(&spec.goal, &env),
        &PlannerBudget::BB,
        &cem,
        env.max_step,
        &mut rng,
    )?;
    println!(
        "latent cost of the zero plan {:.4}",
        plan.trace.initial_mean_cost
    );
    println!("best cost per CEM iteration {:?}", plan.trace.best_costs);
    println!("first actions {:?}", &plan.actions[..3]);

    let ctx = EpisodeContext {
        env: &env,
        cem: &cem,
        budget_name: "bB",
        budget: PlannerBudget::BB,
        scheme: &scheme,
        record_wall_clock: true,
    };
    for policy in [
        AllocationPolicy::FullPrecision,
        AllocationPolicy::Uniform(3),
    ] {
        let v = apply_policy(&base, policy)?;
        let wm = WorldModel::from_model(&v.model)?;
        let rec = run_episode(&ctx, &v.name, &wm, v.size_bytes, &fp, &spec)?;
        println!(
            "{:<14} success {} steps {:>2} state error {:.3} embedding divergence {:.4} ({:.3}s)",
            rec.variant,
            rec.success,
            rec.steps_executed,
            rec.mean_state_distance,
            rec.visual_embedding_divergence,
            rec.runtime_seconds
        );
    }
    Ok(())
}
