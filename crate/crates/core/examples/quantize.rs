//! Per-channel symmetric quantization of a small weight matrix.
//!
//! cargo run --example quantize

use mbquant::quant::{clip_bound, dequantize_tensor, fake_quantize_tensor, quantize_tensor};

fn main() -> mbquant::Result<()> {
    let w: Vec<f32> = vec![1.0, -2.0, 0.5, 0.0, 0.03, -0.01, 0.02, 0.0];
    let shape = [2, 4];

    for bits in [8, 6, 4, 3, 2] {
        let q = quantize_tensor(&w, shape, bits)?;
        let back = dequantize_tensor(&q);
        let max_err = w
            .iter()
            .zip(&back)
            .map(|(&a, &b)| (f64::from(a) - b).abs())
            .fold(0.0, f64::max);
        println!("int{bits} (codes within +-{}):", clip_bound(bits));
        for row in 0..2 {
            println!(
                "  row {row}: scale {:.6} codes {:?}",
                q.scales[row],
                q.row_codes(row)
            );
        }
        println!("  max |W - W~| = {max_err:.6}");
    }

    // Fake quantization is a fixed point: applying it twice changes nothing.
    let once = fake_quantize_tensor(&w, shape, 4)?;
    let twice = fake_quantize_tensor(&once, shape, 4)?;
    assert_eq!(once, twice);
    println!("int4 fake-quantized: {once:?}");
    Ok(())
}
