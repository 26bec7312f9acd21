//! Experiment configuration: one JSON document drives every pipeline stage.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alloc::{enumerate_paper_variants, paper_core_variants, AllocationPolicy};
use crate::env::WallEnvConfig;
use crate::error::{Error, Result};
use crate::eval::{default_budgets, BudgetSpec, EvalProtocol};
use crate::planner::CemConfig;
use crate::store::sha256_hex;
use crate::worldmodel::{ModelShape, TrainConfig};

/// Minimum encoder depth for a non-degenerate 25/50/75% retention sweep.
pub const MIN_ENCODER_DEPTH: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_traj: usize,
    pub traj_len: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_traj: 200,
            traj_len: 20,
            seed: 0,
        }
    }
}

/// Either a preset (`"paper-core"`, `"paper-all"`) or explicit canonical names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantSelection {
    Preset(String),
    List(Vec<String>),
}

impl Default for VariantSelection {
    fn default() -> Self {
        Self::Preset("paper-core".into())
    }
}

impl VariantSelection {
    /// Resolves to `(name, policy)` pairs in reporting order.
    pub fn resolve(&self) -> std::result::Result<Vec<(String, AllocationPolicy)>, String> {
        match self {
            Self::Preset(p) if p == "paper-core" => Ok(paper_core_variants()),
            Self::Preset(p) if p == "paper-all" => Ok(enumerate_paper_variants()),
            Self::Preset(p) => Err(format!(
                "unknown preset `{p}`; use \"paper-core\", \"paper-all\" or a list of variant names"
            )),
            Self::List(names) => {
                if names.is_empty() {
                    return Err("variant list is empty".into());
                }
                let mut seen = HashSet::new();
                names
                    .iter()
                    .map(|n| {
                        let policy: AllocationPolicy =
                            n.parse().map_err(|e: Error| e.to_string())?;
                        let canonical = policy.canonical_name();
                        if !seen.insert(canonical.clone()) {
                            return Err(format!("variant `{n}` is listed twice"));
                        }
                        Ok((canonical, policy))
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub env: WallEnvConfig,
    pub data: DataConfig,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub cem: CemConfig,
    pub budgets: Vec<BudgetSpec>,
    pub episodes_per_run: usize,
    pub variants: VariantSelection,
    /// Bootstrap resamples per paired comparison.
    pub bootstrap_resamples: usize,
    /// Record measured planning time in `runtime_seconds`. Off by default
    /// because wall-clock values make `episodes.csv` non-reproducible.
    pub record_wall_clock: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            env: WallEnvConfig::default(),
            data: DataConfig::default(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            cem: CemConfig::default(),
            budgets: default_budgets(),
            episodes_per_run: 10,
            variants: VariantSelection::default(),
            bootstrap_resamples: crate::stats::DEFAULT_RESAMPLES,
            record_wall_clock: false,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON text; errors name the offending field path.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            file: origin.to_path_buf(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate_at(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json_str(&std::fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at(Path::new("<config>"))
    }

    fn validate_at(&self, origin: &Path) -> Result<()> {
        let fail = |field: &str, message: String| Error::Config {
            file: origin.to_path_buf(),
            field: field.into(),
            message,
        };
        let inner = |e: Error| match e {
            Error::Validation(m) => m,
            other => other.to_string(),
        };
        self.env.validate().map_err(|e| fail("env", inner(e)))?;
        self.train.validate().map_err(|e| fail("train", inner(e)))?;
        self.model.validate().map_err(|e| fail("model", inner(e)))?;
        self.cem.validate().map_err(|e| fail("cem", inner(e)))?;
        if self.data.n_traj == 0 || self.data.traj_len == 0 {
            return Err(fail(
                "data",
                "n_traj and traj_len must be at least 1".into(),
            ));
        }
        if self.model.encoder_depth < MIN_ENCODER_DEPTH {
            return Err(fail(
                "model.encoder_depth",
                format!(
                    "must be at least {MIN_ENCODER_DEPTH}, got {}",
                    self.model.encoder_depth
                ),
            ));
        }
        let pixels = self.env.image_side * self.env.image_side;
        if self.model.obs_dim != pixels {
            return Err(fail(
                "model.obs_dim",
                format!(
                    "must equal env.image_side^2 = {pixels}, got {}",
                    self.model.obs_dim
                ),
            ));
        }
        if self.budgets.is_empty() {
            return Err(fail("budgets", "at least one budget is required".into()));
        }
        for (i, b) in self.budgets.iter().enumerate() {
            crate::stats::bin_labels(b.difficulty_bins)
                .map_err(|e| fail(&format!("budgets[{i}].difficulty_bins"), inner(e)))?;
        }
        self.protocol()
            .validate()
            .map_err(|e| fail("budgets", inner(e)))?;
        if self.bootstrap_resamples == 0 {
            return Err(fail("bootstrap_resamples", "must be at least 1".into()));
        }
        self.variants.resolve().map_err(|m| fail("variants", m))?;
        Ok(())
    }

    pub fn variant_policies(&self) -> Result<Vec<(String, AllocationPolicy)>> {
        self.variants.resolve().map_err(crate::error::invalid)
    }

    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            env: self.env.clone(),
            cem: self.cem.clone(),
            budgets: self.budgets.clone(),
            episodes_per_run: self.episodes_per_run,
            record_wall_clock: self.record_wall_clock,
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs are written.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_json_str("{}", Path::new("c.json")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.variant_policies().unwrap().len(), 13);
        assert_eq!(cfg.budgets[0].seeds, vec![0, 1, 2]);
        assert_eq!(cfg.episodes_per_run, 10);
    }

    #[test]
    fn unknown_field_error_names_its_path() {
        let err =
            ExperimentConfig::from_json_str(r#"{"cem": {"populaton": 8}}"#, Path::new("c.json"))
                .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cem"), "{msg}");
        assert!(msg.contains("populaton"), "{msg}");
    }

    #[test]
    fn wrong_type_error_names_nested_path() {
        let text = r#"{"budgets": [{"name": "bA", "goal_h": "nine", "opt_steps": 2, "max_iter": 2, "seeds": [0]}]}"#;
        let msg = ExperimentConfig::from_json_str(text, Path::new("c.json"))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("budgets[0].goal_h"), "{msg}");
    }

    #[test]
    fn shallow_encoder_is_rejected() {
        let msg = ExperimentConfig::from_json_str(
            r#"{"model": {"encoder_depth": 3}}"#,
            Path::new("c.json"),
        )
        .unwrap_err()
        .to_string();
        assert!(msg.contains("model.encoder_depth"), "{msg}");
    }

    #[test]
    fn variant_lists_and_presets() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"variants": ["fp16", "enc6_pred4"]}"#).unwrap();
        let names: Vec<_> = cfg
            .variant_policies()
            .unwrap()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(names, vec!["fp16", "enc6_pred4"]);
        let all: ExperimentConfig = serde_json::from_str(r#"{"variants": "paper-all"}"#).unwrap();
        assert_eq!(all.variant_policies().unwrap().len(), 16);
        for bad in [
            r#"{"variants": "paper-most"}"#,
            r#"{"variants": ["fp16", "fp16"]}"#,
            r#"{"variants": ["int5"]}"#,
        ] {
            assert!(
                ExperimentConfig::from_json_str(bad, Path::new("c.json")).is_err(),
                "{bad}"
            );
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
