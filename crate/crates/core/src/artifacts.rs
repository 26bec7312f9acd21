//! On-disk JSON artifacts written by the pipeline stages. Each one carries
//! the hash of the config that produced it.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::alloc::AllocationPolicy;
use crate::error::{Error, Result};
use crate::stats::{
    DiagnosticCorrelation, DifficultyBin, MatchupCounts, PairedComparison, ParetoPoint, RunPoint,
};

pub trait Artifact: Serialize + DeserializeOwned {
    fn config_hash(&self) -> &str;
}

macro_rules! artifact {
    ($($t:ty),*) => {
        $(impl Artifact for $t {
            fn config_hash(&self) -> &str {
                &self.config_hash
            }
        })*
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub name: String,
    pub policy: AllocationPolicy,
    pub size_bytes: u64,
    pub size_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizesFile {
    pub config_hash: String,
    pub baseline_bits: u32,
    pub variants: Vec<SizeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonsFile {
    pub config_hash: String,
    pub comparisons: Vec<PairedComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupEntry {
    pub name_a: String,
    pub name_b: String,
    /// A budget name or `pooled`.
    pub scope: String,
    pub n_pairs: usize,
    #[serde(flatten)]
    pub counts: MatchupCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupsFile {
    pub config_hash: String,
    pub matchups: Vec<MatchupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinsEntry {
    pub budget: String,
    pub variant: String,
    pub bins: Vec<DifficultyBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinsFile {
    pub config_hash: String,
    pub bins: Vec<BinsEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    /// A budget name or `pooled`.
    pub scope: String,
    pub points: Vec<ParetoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierFile {
    pub config_hash: String,
    pub frontiers: Vec<FrontierEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationsFile {
    pub config_hash: String,
    pub correlations: Vec<DiagnosticCorrelation>,
    pub run_points: Vec<RunPoint>,
}

artifact!(
    SizesFile,
    ComparisonsFile,
    MatchupsFile,
    BinsFile,
    FrontierFile,
    CorrelationsFile
);

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads an artifact, mapping absence to "run `stage` first" and a foreign
/// config hash to "rerun `stage`".
pub fn read_artifact<T: Artifact>(
    path: &Path,
    stage: &'static str,
    config_hash: &str,
) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingStage {
            stage,
            path: path.to_path_buf(),
        });
    }
    let value: T = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if value.config_hash() != config_hash {
        return Err(Error::StaleArtifact {
            stage,
            path: path.to_path_buf(),
        });
    }
    Ok(value)
}
