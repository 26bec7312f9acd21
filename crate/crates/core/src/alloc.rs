//! Bit-allocation policies and variant materialization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quant::{fake_quantize_tensor, MAX_BITS, MIN_BITS};
use crate::store::{Model, Role, TensorKind, TensorMeta};

/// Storage decision for one tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Baseline,
    Int(u8),
}

/// Encoder retention percentages of the layerwise sweep.
pub const RETENTION_SWEEP: [u8; 5] = [0, 25, 50, 75, 100];

/// Bitwidth given to encoder layers that are not retained in the layerwise sweep.
pub const LAYERWISE_ENCODER_BITS: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocationPolicy {
    FullPrecision,
    Uniform(u8),
    /// Encoder kept at baseline, every other linear weight at `b`.
    Mixed(u8),
    Asymmetric {
        encoder_bits: u8,
        predictor_bits: u8,
    },
    /// The first `ceil(pct/100 * n_encoder_layers)` encoder layers (ascending
    /// layer index) stay at baseline; the rest of the encoder is INT4.
    LayerwiseRetention {
        retained_pct: u8,
        predictor_bits: u8,
    },
}

/// Encoder linear layer indices, sorted ascending.
#[derive(Debug, Clone, Default)]
pub struct EncoderLayout {
    layers: Vec<u32>,
}

impl EncoderLayout {
    pub fn from_tensors<T: TensorMeta>(tensors: &[T]) -> Self {
        let mut layers: Vec<u32> = tensors
            .iter()
            .filter(|t| t.kind() == TensorKind::LinearWeight && t.role() == Role::Encoder)
            .map(|t| t.layer_index())
            .collect();
        layers.sort_unstable();
        layers.dedup();
        Self { layers }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Position of `layer_index` among the encoder layers.
    fn rank(&self, layer_index: u32) -> Option<usize> {
        self.layers.binary_search(&layer_index).ok()
    }
}

impl AllocationPolicy {
    pub fn validate(&self) -> Result<()> {
        let check = |b: u8| {
            if (MIN_BITS..=MAX_BITS).contains(&b) {
                Ok(())
            } else {
                Err(invalid(format!(
                    "bitwidth {b} outside [{MIN_BITS}, {MAX_BITS}]"
                )))
            }
        };
        match *self {
            Self::FullPrecision => Ok(()),
            Self::Uniform(b) | Self::Mixed(b) => check(b),
            Self::Asymmetric {
                encoder_bits,
                predictor_bits,
            } => check(encoder_bits).and(check(predictor_bits)),
            Self::LayerwiseRetention {
                retained_pct,
                predictor_bits,
            } => {
                if !RETENTION_SWEEP.contains(&retained_pct) {
                    return Err(invalid(format!(
                        "retained fraction {retained_pct}% not in {RETENTION_SWEEP:?}"
                    )));
                }
                check(predictor_bits)
            }
        }
    }

    /// Decides the storage precision of one tensor.
    pub fn bits_for_tensor<T: TensorMeta + ?Sized>(
        &self,
        t: &T,
        layout: &EncoderLayout,
    ) -> Precision {
        use Precision::{Baseline, Int};
        if t.kind() != TensorKind::LinearWeight {
            return Baseline;
        }
        let role = t.role();
        match *self {
            Self::FullPrecision => Baseline,
            Self::Uniform(b) => Int(b),
            Self::Mixed(b) => match role {
                Role::Encoder => Baseline,
                _ => Int(b),
            },
            Self::Asymmetric {
                encoder_bits,
                predictor_bits,
            } => match role {
                Role::Encoder => Int(encoder_bits),
                _ => Int(predictor_bits),
            },
            Self::LayerwiseRetention {
                retained_pct,
                predictor_bits,
            } => match role {
                Role::Encoder => {
                    let keep = (usize::from(retained_pct) * layout.n_layers()).div_ceil(100);
                    match layout.rank(t.layer_index()) {
                        Some(r) if r < keep => Baseline,
                        _ => Int(LAYERWISE_ENCODER_BITS),
                    }
                }
                _ => Int(predictor_bits),
            },
        }
    }

    /// Canonical variant name. The 0% and 100% retention points alias
    /// `uniform_int4` and `mixed_int4`.
    pub fn canonical_name(&self) -> String {
        match *self {
            Self::FullPrecision => "fp16".into(),
            Self::Uniform(b) => format!("uniform_int{b}"),
            Self::Mixed(b) => format!("mixed_int{b}"),
            Self::Asymmetric {
                encoder_bits,
                predictor_bits,
            } => format!("enc{encoder_bits}_pred{predictor_bits}"),
            Self::LayerwiseRetention {
                retained_pct: 0,
                predictor_bits: 4,
            } => "uniform_int4".into(),
            Self::LayerwiseRetention {
                retained_pct: 100,
                predictor_bits: 4,
            } => "mixed_int4".into(),
            Self::LayerwiseRetention {
                retained_pct,
                predictor_bits,
            } => format!("layerwise_int{predictor_bits}_{retained_pct}"),
        }
    }
}

impl fmt::Display for AllocationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name())
    }
}

impl FromStr for AllocationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = |t: &str| -> Result<u8> {
            t.parse::<u8>()
                .map_err(|_| invalid(format!("unknown variant name `{s}`")))
        };
        let policy = if s == "fp16" {
            Self::FullPrecision
        } else if let Some(b) = s.strip_prefix("uniform_int") {
            Self::Uniform(bits(b)?)
        } else if let Some(b) = s.strip_prefix("mixed_int") {
            Self::Mixed(bits(b)?)
        } else if let Some(rest) = s.strip_prefix("layerwise_int") {
            let (b, pct) = rest
                .split_once('_')
                .ok_or_else(|| invalid(format!("unknown variant name `{s}`")))?;
            Self::LayerwiseRetention {
                retained_pct: bits(pct)?,
                predictor_bits: bits(b)?,
            }
        } else if let Some(rest) = s.strip_prefix("enc") {
            let (e, p) = rest
                .split_once("_pred")
                .ok_or_else(|| invalid(format!("unknown variant name `{s}`")))?;
            Self::Asymmetric {
                encoder_bits: bits(e)?,
                predictor_bits: bits(p)?,
            }
        } else {
            return Err(invalid(format!("unknown variant name `{s}`")));
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl Serialize for AllocationPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical_name())
    }
}

impl<'de> Deserialize<'de> for AllocationPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The sixteen named variants of the study, in reporting order.
pub fn enumerate_paper_variants() -> Vec<(String, AllocationPolicy)> {
    use AllocationPolicy::*;
    let mut v = vec![FullPrecision];
    v.extend([8, 6, 4, 3].map(Uniform));
    v.extend([8, 6, 4, 3].map(Mixed));
    v.extend(
        [(8, 4), (6, 4), (4, 8), (4, 6)].map(|(encoder_bits, predictor_bits)| Asymmetric {
            encoder_bits,
            predictor_bits,
        }),
    );
    v.extend([25, 50, 75].map(|retained_pct| LayerwiseRetention {
        retained_pct,
        predictor_bits: 4,
    }));
    v.into_iter().map(|p| (p.canonical_name(), p)).collect()
}

/// The thirteen core variants (everything except the layerwise interior points).
pub fn paper_core_variants() -> Vec<(String, AllocationPolicy)> {
    enumerate_paper_variants().into_iter().take(13).collect()
}

/// The full five-point layerwise sweep with its aliased endpoints.
pub fn retention_sweep() -> Vec<(u8, AllocationPolicy)> {
    RETENTION_SWEEP
        .iter()
        .map(|&retained_pct| {
            (
                retained_pct,
                AllocationPolicy::LayerwiseRetention {
                    retained_pct,
                    predictor_bits: 4,
                },
            )
        })
        .collect()
}

/// A fake-quantized copy of a base model under one policy.
#[derive(Debug, Clone)]
pub struct VariantModel {
    pub name: String,
    pub policy: AllocationPolicy,
    pub model: Model,
    pub size_bytes: u64,
}

/// Materializes `policy` on `base`: linear weights with an integer decision are
/// replaced by their fake-quantized values, everything else is copied verbatim.
pub fn apply_policy(base: &Model, policy: AllocationPolicy) -> Result<VariantModel> {
    policy.validate()?;
    base.validate()?;
    let layout = EncoderLayout::from_tensors(&base.tensors);
    let mut model = base.clone();
    for t in &mut model.tensors {
        if let Precision::Int(bits) = policy.bits_for_tensor(t, &layout) {
            let shape = [t.shape[0], t.shape[1]];
            t.data = fake_quantize_tensor(&t.data, shape, bits)?;
        }
    }
    let size_bytes = base.size_bytes(&policy);
    Ok(VariantModel {
        name: policy.canonical_name(),
        policy,
        model,
        size_bytes,
    })
}
