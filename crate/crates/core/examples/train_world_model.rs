//! Train the encoder + predictor world model on random-policy rollouts.
//!
//! cargo run --release --example train_world_model

use mbquant::env::{gen_dataset, WallEnvConfig};
use mbquant::rng::RngScheme;
use mbquant::worldmodel::{train_world_model, ModelShape, TrainConfig};

fn main() -> mbquant::Result<()> {
    let env = WallEnvConfig::default();
    let scheme = RngScheme::new(0);
    let data = gen_dataset(100, 20, 0, &env, &scheme)?;
    println!("{} transitions", data.len());

    let cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let model = train_world_model(
        &data,
        &ModelShape::default(),
        1.0 / env.max_step,
        &cfg,
        &scheme,
    )?;
    let report = model
        .report
        .as_ref()
        .expect("trained models carry a report");
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {epoch:>2}: loss {loss:.5}");
    }
    println!(
        "initial loss {:.4}, final {:.4}, probe holdout error {:?}",
        report.initial_loss, report.final_loss, report.probe_holdout_error
    );

    let z = model.encode(&data.transitions[0].obs)?;
    let p = model.probe_state(&z);
    println!(
        "true state ({:.3}, {:.3}), probe ({:.3}, {:.3})",
        data.transitions[0].state[0], data.transitions[0].state[1], p[0], p[1]
    );
    Ok(())
}
