//! Model persistence: a JSON manifest next to a raw little-endian f32 blob.
//!
//! A persisted model directory holds `manifest.json` and `weights.bin`.
//! Tensors are concatenated in manifest order; each descriptor records its
//! byte `offset` and `length` inside the blob. The manifest also carries a
//! SHA-256 of the blob so on-disk corruption is caught at load time.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alloc::{AllocationPolicy, Precision};
use crate::error::{invalid, Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BASELINE_BITS: u32 = 16;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";

/// Bits per stored per-channel scale.
pub const SCALE_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Encoder,
    Predictor,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    LinearWeight,
    LinearBias,
    NonLinearParam,
}

/// Metadata shared by in-memory tensors and manifest descriptors.
pub trait TensorMeta {
    fn name(&self) -> &str;
    fn role(&self) -> Role;
    fn layer_index(&self) -> u32;
    fn kind(&self) -> TensorKind;
    fn shape(&self) -> &[usize];

    fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    /// Rows of a linear weight (`[out, in]`).
    fn out_channels(&self) -> usize {
        self.shape().first().copied().unwrap_or(0)
    }
}

/// A named full-precision tensor with its module role.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub role: Role,
    pub layer_index: u32,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorMeta for TensorRecord {
    fn name(&self) -> &str {
        &self.name
    }
    fn role(&self) -> Role {
        self.role
    }
    fn layer_index(&self) -> u32 {
        self.layer_index
    }
    fn kind(&self) -> TensorKind {
        self.kind
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// One manifest entry. `offset` and `length` are in bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDescriptor {
    pub name: String,
    pub role: Role,
    pub layer_index: u32,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

impl TensorMeta for TensorDescriptor {
    fn name(&self) -> &str {
        &self.name
    }
    fn role(&self) -> Role {
        self.role
    }
    fn layer_index(&self) -> u32 {
        self.layer_index
    }
    fn kind(&self) -> TensorKind {
        self.kind
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub baseline_bits: u32,
    pub tensors: Vec<TensorDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extras: serde_json::Value,
}

impl ModelManifest {
    pub fn validate(&self) -> Result<()> {
        if self.baseline_bits == 0 {
            return Err(invalid("baseline_bits must be positive"));
        }
        check_meta(&self.tensors)?;
        let mut end = 0u64;
        for t in &self.tensors {
            let expected = 4 * t.numel() as u64;
            if t.length != expected {
                return Err(invalid(format!(
                    "tensor `{}`: length {} does not match 4 x shape product = {expected}",
                    t.name, t.length
                )));
            }
            if t.offset < end {
                return Err(invalid(format!(
                    "tensor `{}`: offset {} overlaps previous tensor ending at {end}",
                    t.name, t.offset
                )));
            }
            end = t.offset + t.length;
        }
        Ok(())
    }

    /// Blob size implied by the descriptors.
    pub fn blob_len(&self) -> u64 {
        self.tensors
            .iter()
            .map(|t| t.offset + t.length)
            .max()
            .unwrap_or(0)
    }
}

fn check_meta<T: TensorMeta>(tensors: &[T]) -> Result<()> {
    let mut names = HashSet::new();
    let mut linear_slots = HashSet::new();
    for t in tensors {
        if !names.insert(t.name()) {
            return Err(invalid(format!("duplicate tensor name `{}`", t.name())));
        }
        if t.shape().is_empty() || t.shape().contains(&0) {
            return Err(invalid(format!(
                "tensor `{}`: shape {:?} must be a non-empty list of positive integers",
                t.name(),
                t.shape()
            )));
        }
        if t.kind() == TensorKind::LinearWeight {
            if t.shape().len() != 2 {
                return Err(invalid(format!(
                    "linear weight `{}` must be 2-D, got shape {:?}",
                    t.name(),
                    t.shape()
                )));
            }
            if !linear_slots.insert((t.role(), t.layer_index())) {
                return Err(invalid(format!(
                    "linear weight `{}`: ({:?}, layer {}) already used",
                    t.name(),
                    t.role(),
                    t.layer_index()
                )));
            }
        }
    }
    Ok(())
}

/// In-memory model: metadata plus full-precision tensor data.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub format_version: u32,
    pub baseline_bits: u32,
    pub tensors: Vec<TensorRecord>,
    pub extras: serde_json::Value,
}

impl Model {
    pub fn new(tensors: Vec<TensorRecord>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            baseline_bits: DEFAULT_BASELINE_BITS,
            tensors,
            extras: serde_json::Value::Null,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.baseline_bits == 0 {
            return Err(invalid("baseline_bits must be positive"));
        }
        check_meta(&self.tensors)?;
        for t in &self.tensors {
            if t.numel() != t.data.len() {
                return Err(invalid(format!(
                    "tensor `{}`: shape {:?} implies {} values, data has {}",
                    t.name,
                    t.shape,
                    t.numel(),
                    t.data.len()
                )));
            }
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        let total: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(total);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Manifest describing this model's blob layout, including its checksum.
    pub fn manifest(&self) -> ModelManifest {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let length = 4 * t.data.len() as u64;
                let d = TensorDescriptor {
                    name: t.name.clone(),
                    role: t.role,
                    layer_index: t.layer_index,
                    kind: t.kind,
                    shape: t.shape.clone(),
                    offset,
                    length,
                };
                offset += length;
                d
            })
            .collect();
        ModelManifest {
            format_version: self.format_version,
            baseline_bits: self.baseline_bits,
            tensors,
            blob_sha256: Some(sha256_hex(&self.blob_bytes())),
            extras: self.extras.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `manifest.json` + `weights.bin` into `dir`.
pub fn persist_model(model: &Model, dir: &Path) -> Result<()> {
    persist_bundle(model, dir, MANIFEST_FILE, BLOB_FILE)
}

pub fn load_model(dir: &Path) -> Result<Model> {
    load_bundle(dir, MANIFEST_FILE, BLOB_FILE)
}

/// Like [`persist_model`] with caller-chosen file names (datasets use their own).
pub fn persist_bundle(
    model: &Model,
    dir: &Path,
    manifest_name: &str,
    blob_name: &str,
) -> Result<()> {
    model.validate()?;
    let manifest = model.manifest();
    manifest.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(blob_name), model.blob_bytes())?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(manifest_name), text)?;
    Ok(())
}

pub fn load_bundle(dir: &Path, manifest_name: &str, blob_name: &str) -> Result<Model> {
    let manifest_path = dir.join(manifest_name);
    let blob_path = dir.join(blob_name);
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path));
    }
    if !blob_path.is_file() {
        return Err(Error::MissingFile(blob_path));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: ModelManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedManifest {
            path: manifest_path.clone(),
            message: e.to_string(),
        })?;
    manifest.validate()?;

    let blob = fs::read(&blob_path)?;
    let expected = manifest.blob_len();
    if blob.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: blob.len() as u64,
        });
    }
    if let Some(sum) = &manifest.blob_sha256 {
        let found = sha256_hex(&blob);
        if &found != sum {
            return Err(Error::Checksum {
                expected: sum.clone(),
                found,
            });
        }
    }

    let tensors = manifest
        .tensors
        .iter()
        .map(|d| {
            let bytes = &blob[d.offset as usize..(d.offset + d.length) as usize];
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            TensorRecord {
                name: d.name.clone(),
                role: d.role,
                layer_index: d.layer_index,
                kind: d.kind,
                shape: d.shape.clone(),
                data,
            }
        })
        .collect();
    let model = Model {
        format_version: manifest.format_version,
        baseline_bits: manifest.baseline_bits,
        tensors,
        extras: manifest.extras,
    };
    model.validate()?;
    Ok(model)
}

/// Storage footprint in bytes of `tensors` under `policy`.
///
/// Quantized linear weights cost `ceil(numel * bits / 8)` plus one 32-bit
/// scale per output channel; everything else is stored at `baseline_bits`.
pub fn model_size_bytes<T: TensorMeta>(
    tensors: &[T],
    baseline_bits: u32,
    policy: &AllocationPolicy,
) -> u64 {
    let layout = crate::alloc::EncoderLayout::from_tensors(tensors);
    tensors
        .iter()
        .map(|t| {
            let numel = t.numel() as u64;
            match policy.bits_for_tensor(t, &layout) {
                Precision::Int(bits) => {
                    (numel * u64::from(bits)).div_ceil(8) + SCALE_BITS / 8 * t.out_channels() as u64
                }
                Precision::Baseline => (numel * u64::from(baseline_bits)).div_ceil(8),
            }
        })
        .sum()
}

impl Model {
    pub fn size_bytes(&self, policy: &AllocationPolicy) -> u64 {
        model_size_bytes(&self.tensors, self.baseline_bits, policy)
    }
}

pub fn bytes_to_mb(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 20) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(name: &str, role: Role, layer: u32, out: usize, inp: usize) -> TensorRecord {
        TensorRecord {
            name: name.into(),
            role,
            layer_index: layer,
            kind: TensorKind::LinearWeight,
            shape: vec![out, inp],
            data: (0..out * inp).map(|i| i as f32 * 0.25 - 1.0).collect(),
        }
    }

    fn bias(name: &str, role: Role, layer: u32, n: usize) -> TensorRecord {
        TensorRecord {
            name: name.into(),
            role,
            layer_index: layer,
            kind: TensorKind::LinearBias,
            shape: vec![n],
            data: vec![-0.0; n],
        }
    }

    #[test]
    fn size_of_small_linear_layer() {
        let w = Model::new(vec![linear("p.w", Role::Predictor, 0, 4, 3)]);
        assert_eq!(w.size_bytes(&AllocationPolicy::Uniform(4)), 22);
        assert_eq!(w.size_bytes(&AllocationPolicy::FullPrecision), 24);

        let wb = Model::new(vec![
            linear("p.w", Role::Predictor, 0, 4, 3),
            bias("p.b", Role::Predictor, 0, 4),
        ]);
        assert_eq!(wb.size_bytes(&AllocationPolicy::Uniform(4)), 30);
    }

    #[test]
    fn size_rounds_up_partial_bytes() {
        // 5 weights at 3 bits = 15 bits -> 2 bytes, plus one scale.
        let w = Model::new(vec![linear("p.w", Role::Predictor, 0, 1, 5)]);
        assert_eq!(w.size_bytes(&AllocationPolicy::Uniform(3)), 2 + 4);
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let m = Model::new(vec![
            linear("a", Role::Encoder, 0, 2, 2),
            linear("b", Role::Encoder, 1, 2, 2),
        ]);
        let mut manifest = m.manifest();
        manifest.validate().unwrap();
        manifest.tensors[1].offset = 8;
        assert!(matches!(manifest.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn invariant_violations_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = linear("a", Role::Encoder, 0, 2, 2);
        bad.data.pop();
        let err = persist_model(&Model::new(vec![bad]), dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
        assert!(!dir.path().join(BLOB_FILE).exists());

        let mut three_d = linear("a", Role::Encoder, 0, 2, 2);
        three_d.shape = vec![1, 2, 2];
        assert!(Model::new(vec![three_d]).validate().is_err());

        let dup = Model::new(vec![
            linear("a", Role::Encoder, 0, 2, 2),
            linear("b", Role::Encoder, 0, 2, 2),
        ]);
        assert!(dup.validate().is_err());
    }

    #[test]
    fn round_trip_preserves_bits_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Model::new(vec![
            linear("enc.w", Role::Encoder, 0, 3, 2),
            bias("enc.b", Role::Encoder, 0, 3),
        ]);
        m.tensors[0].data[1] = -0.0;
        m.tensors[0].data[2] = f32::MIN_POSITIVE / 4.0;
        m.extras = serde_json::json!({"note": "x"});
        persist_model(&m, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.blob_bytes(), m.blob_bytes());
        assert_eq!(back.manifest(), m.manifest());
        assert!(back.tensors[1].data[0].is_sign_negative());
    }
}
