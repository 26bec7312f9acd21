//! The two-room wall environment: a few steps and the rendered image.
//!
//! cargo run --example wall_env

use mbquant::env::{render, sample_episode_specs, step, EnvState, WallEnvConfig};
use mbquant::rng::RngScheme;

fn show(obs: &[f32], side: usize) {
    for row in obs.chunks(side) {
        let line: String = row
            .iter()
            .map(|&v| match v {
                v if v > 0.75 => '#',
                v if v > 0.25 => '+',
                v if v > 0.0 => '.',
                _ => ' ',
            })
            .collect();
        println!("|{line}|");
    }
}

fn main() {
    let cfg = WallEnvConfig::default();
    let mut s = EnvState::new(0.3, 0.2);
    // Pushing right below the gap stops at the wall.
    for _ in 0..4 {
        s = step(s, [cfg.max_step, 0.0], &cfg);
        println!("pos = ({:.4}, {:.4})", s.pos[0], s.pos[1]);
    }
    // Moving up into the gap lets the agent through.
    for a in [[0.0, 0.125], [0.0, 0.125], [0.125, 0.0], [0.125, 0.0]] {
        s = step(s, a, &cfg);
        println!("pos = ({:.4}, {:.4})", s.pos[0], s.pos[1]);
    }
    show(&render(&s, &cfg), cfg.image_side);

    println!("\nepisodes for seed 0:");
    for e in sample_episode_specs(0, 5, &cfg, &RngScheme::new(0)) {
        println!(
            "  #{}: start ({:.2}, {:.2}) goal ({:.2}, {:.2}) distance {:.3}",
            e.episode_id,
            e.start.pos[0],
            e.start.pos[1],
            e.goal.pos[0],
            e.goal.pos[1],
            e.initial_goal_distance
        );
    }
}
