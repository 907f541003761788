use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {found:?} (expected {SCHEMA_VERSION:?})")]
    UnsupportedSchema { found: String },
    #[error("duplicate model_id {0:?}")]
    DuplicateModelId(String),
    #[error("record {record:?}, field {field}: {reason}")]
    InvariantViolation {
        record: String,
        field: String,
        reason: String,
    },
    #[error("record {model_id:?} has no loss for task {task:?}")]
    MissingLoss { model_id: String, task: String },
}

/// One saved checkpoint of a training run.
///
/// `path`/`tensor` locate the unembedding matrix; the optional representation
/// pair locates precomputed last-token states for the same checkpoint. `loss`
/// is the in-distribution loss at that checkpoint, used by saturation analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub token_count: u64,
    pub path: PathBuf,
    pub tensor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representation_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representation_tensor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

/// One trained model: its hyperparameters and evaluation losses (nats).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub model_id: String,
    /// Non-embedding parameter count.
    pub param_count_nonembed: u64,
    /// Training tokens.
    pub token_budget: u64,
    pub batch_size: u64,
    pub weight_decay: f64,
    pub lr_scale: f64,
    pub lr_anneal_frac: f64,
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoint_paths: Vec<CheckpointEntry>,
}

impl ExperimentRecord {
    pub fn loss(&self, task: &str) -> Result<f64, ManifestError> {
        self.losses
            .get(task)
            .copied()
            .ok_or_else(|| ManifestError::MissingLoss {
                model_id: self.model_id.clone(),
                task: task.to_string(),
            })
    }

    /// The last checkpoint, taken as the final trained model.
    pub fn final_checkpoint(&self) -> Option<&CheckpointEntry> {
        self.checkpoint_paths.last()
    }

    fn validate(&self) -> Result<(), ManifestError> {
        let violation = |field: &str, reason: String| ManifestError::InvariantViolation {
            record: self.model_id.clone(),
            field: field.to_string(),
            reason,
        };
        if self.model_id.is_empty() {
            return Err(violation("model_id", "must not be empty".into()));
        }
        if self.param_count_nonembed == 0 {
            return Err(violation("param_count_nonembed", "must be > 0".into()));
        }
        if self.token_budget == 0 {
            return Err(violation("token_budget", "must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(violation("batch_size", "must be > 0".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(violation(
                "weight_decay",
                format!("must be finite and >= 0, got {}", self.weight_decay),
            ));
        }
        if !self.lr_scale.is_finite() || self.lr_scale <= 0.0 {
            return Err(violation(
                "lr_scale",
                format!("must be finite and > 0, got {}", self.lr_scale),
            ));
        }
        if !(0.0..=1.0).contains(&self.lr_anneal_frac) {
            return Err(violation(
                "lr_anneal_frac",
                format!("must lie in [0, 1], got {}", self.lr_anneal_frac),
            ));
        }
        for (task, &loss) in &self.losses {
            if !loss.is_finite() || loss <= 0.0 {
                return Err(violation(
                    &format!("losses.{task}"),
                    format!("must be finite and > 0, got {loss}"),
                ));
            }
        }
        for (i, pair) in self.checkpoint_paths.windows(2).enumerate() {
            if pair[1].token_count <= pair[0].token_count {
                return Err(violation(
                    &format!("checkpoint_paths[{}].token_count", i + 1),
                    format!(
                        "must be strictly increasing ({} after {})",
                        pair[1].token_count, pair[0].token_count
                    ),
                ));
            }
        }
        for (i, ck) in self.checkpoint_paths.iter().enumerate() {
            if let Some(loss) = ck.loss {
                if !loss.is_finite() || loss <= 0.0 {
                    return Err(violation(
                        &format!("checkpoint_paths[{i}].loss"),
                        format!("must be finite and > 0, got {loss}"),
                    ));
                }
            }
            if ck.representation_path.is_some() != ck.representation_tensor.is_some() {
                return Err(violation(
                    &format!("checkpoint_paths[{i}]"),
                    "representation_path and representation_tensor must be given together".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Validated collection of experiment records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: String,
    pub records: Vec<ExperimentRecord>,
    /// Directory relative checkpoint paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    /// Builds and validates a manifest from in-memory records.
    pub fn new(records: Vec<ExperimentRecord>) -> Result<Self, ManifestError> {
        let m = Self {
            schema_version: SCHEMA_VERSION.to_string(),
            records,
            base_dir: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("manifest serializes");
        serde_json::to_string_pretty(&value).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::UnsupportedSchema {
                found: self.schema_version.clone(),
            });
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.model_id.as_str()) {
                return Err(ManifestError::DuplicateModelId(r.model_id.clone()));
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn get(&self, model_id: &str) -> Option<&ExperimentRecord> {
        self.records.iter().find(|r| r.model_id == model_id)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut m = Manifest::from_json(&text)?;
    m.base_dir = path.parent().map(Path::to_path_buf);
    Ok(m)
}

/// Each record's loss on `task` divided by the lowest loss among records of
/// the same non-embedding parameter count. Output order follows the input.
pub fn scaled_loss(
    records: &[ExperimentRecord],
    task: &str,
) -> Result<IndexMap<String, f64>, ManifestError> {
    let losses = records
        .iter()
        .map(|r| r.loss(task))
        .collect::<Result<Vec<_>, _>>()?;
    let mut group_min: BTreeMap<u64, f64> = BTreeMap::new();
    for (r, &l) in records.iter().zip(&losses) {
        group_min
            .entry(r.param_count_nonembed)
            .and_modify(|m| *m = m.min(l))
            .or_insert(l);
    }
    Ok(records
        .iter()
        .zip(&losses)
        .map(|(r, &l)| (r.model_id.clone(), l / group_min[&r.param_count_nonembed]))
        .collect())
}
