//! Symmetric per-output-channel weight quantization.
//!
//! For row `j` of a weight matrix and bitwidth `b`:
//!
//! ```text
//! s_j = max|W_j| / (2^(b-1) - 1)
//! q_j = clip(round(W_j / s_j), -(2^(b-1) - 1), 2^(b-1) - 1)
//! W~_j = s_j * q_j
//! ```
//!
//! Rounding is half-away-from-zero. Rows whose maximum magnitude is zero get
//! `s_j = 0` and all-zero codes. The ratio `W / s_j` is evaluated as
//! `W * qmax / max|W_j|`, which is the same quantity without the intermediate
//! rounding of `s_j`.

use crate::error::{invalid, Result};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Largest code magnitude at bitwidth `bits`: `2^(bits-1) - 1`.
pub fn clip_bound(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub bits: u8,
    /// One scale per output channel.
    pub scales: Vec<f64>,
    /// Row-major codes, same layout as the source weight.
    pub codes: Vec<i8>,
    pub shape: [usize; 2],
}

impl QuantizedTensor {
    pub fn out_channels(&self) -> usize {
        self.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.shape[1]
    }

    pub fn row_codes(&self, row: usize) -> &[i8] {
        let n = self.in_channels();
        &self.codes[row * n..(row + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        let [out, inp] = self.shape;
        if self.scales.len() != out || self.codes.len() != out * inp {
            return Err(invalid(format!(
                "quantized tensor shape {:?} inconsistent with {} scales / {} codes",
                self.shape,
                self.scales.len(),
                self.codes.len()
            )));
        }
        let bound = clip_bound(self.bits);
        for (j, &s) in self.scales.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid(format!("scale {j} is {s}")));
            }
            let row = self.row_codes(j);
            if row.iter().any(|&q| i32::from(q).abs() > bound) {
                return Err(invalid(format!("row {j} has a code outside +/-{bound}")));
            }
            if s == 0.0 && row.iter().any(|&q| q != 0) {
                return Err(invalid(format!(
                    "row {j} has zero scale but non-zero codes"
                )));
            }
        }
        Ok(())
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(invalid(format!(
            "bitwidth {bits} outside supported range [{MIN_BITS}, {MAX_BITS}]"
        )));
    }
    Ok(())
}

fn check_shape(weights: &[f32], shape: [usize; 2]) -> Result<()> {
    if shape[0] * shape[1] != weights.len() {
        return Err(invalid(format!(
            "weight shape {shape:?} does not match {} values",
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(invalid(format!("weight element {i} is not finite")));
    }
    Ok(())
}

/// Quantizes a `[out, in]` row-major weight matrix at `bits`.
pub fn quantize_tensor(weights: &[f32], shape: [usize; 2], bits: u8) -> Result<QuantizedTensor> {
    check_bits(bits)?;
    check_shape(weights, shape)?;
    let [out, inp] = shape;
    let qmax = f64::from(clip_bound(bits));
    let mut scales = Vec::with_capacity(out);
    let mut codes = Vec::with_capacity(out * inp);
    for row in weights.chunks_exact(inp.max(1)).take(out) {
        let max_abs = row.iter().fold(0.0f64, |m, &w| m.max(f64::from(w).abs()));
        if max_abs == 0.0 {
            scales.push(0.0);
            codes.extend(std::iter::repeat_n(0i8, inp));
            continue;
        }
        scales.push(max_abs / qmax);
        codes.extend(row.iter().map(|&w| {
            // f64::round is half-away-from-zero.
            let q = (f64::from(w) * qmax / max_abs).round().clamp(-qmax, qmax);
            q as i8
        }));
    }
    Ok(QuantizedTensor {
        bits,
        scales,
        codes,
        shape,
    })
}

/// Exact reconstruction `s_j * q_j` in double precision.
pub fn dequantize_tensor(q: &QuantizedTensor) -> Vec<f64> {
    let n = q.in_channels();
    q.codes
        .iter()
        .enumerate()
        .map(|(i, &c)| q.scales[i / n.max(1)] * f64::from(c))
        .collect()
}

/// `dequantize(quantize(W, bits))` stored back at f32, the precision models are
/// persisted in. Idempotent bit-for-bit.
pub fn fake_quantize_tensor(weights: &[f32], shape: [usize; 2], bits: u8) -> Result<Vec<f32>> {
    let q = quantize_tensor(weights, shape, bits)?;
    Ok(dequantize_tensor(&q)
        .into_iter()
        .map(|v| v as f32)
        .collect())
}
