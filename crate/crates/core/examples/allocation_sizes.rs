//! Bit-allocation policies and the storage size each implies for the
//! default world-model architecture.
//!
//! cargo run --example allocation_sizes

use mbquant::alloc::{enumerate_paper_variants, EncoderLayout, Precision};
use mbquant::store::bytes_to_mb;
use mbquant::worldmodel::{ModelShape, WorldModel};

fn main() -> mbquant::Result<()> {
    let mut rng = mbquant::rng::RngScheme::new(0).stream("example", &[]);
    let model = WorldModel::init(&ModelShape::default(), 8.0, &mut rng)?.to_model();
    let layout = EncoderLayout::from_tensors(&model.tensors);

    println!(
        "{:<20} {:>10} {:>10}  per-tensor bits",
        "variant", "bytes", "MB"
    );
    for (name, policy) in enumerate_paper_variants() {
        let bytes = model.size_bytes(&policy);
        let bits: Vec<String> = model
            .tensors
            .iter()
            .filter(|t| t.kind == mbquant::store::TensorKind::LinearWeight)
            .map(|t| match policy.bits_for_tensor(t, &layout) {
                Precision::Baseline => "fp".to_string(),
                Precision::Int(b) => b.to_string(),
            })
            .collect();
        println!(
            "{name:<20} {bytes:>10} {:>10.4}  {}",
            bytes_to_mb(bytes),
            bits.join(" ")
        );
    }
    Ok(())
}
