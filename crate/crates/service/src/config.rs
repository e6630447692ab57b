//! Server configuration: feature settings plus one checkpoint pair per identity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use apbface_core::audio::FeatureConfig;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPair {
    pub predictor: PathBuf,
    pub reenactor: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Featurization applied to PCM request audio. Must match the predictors.
    #[serde(default)]
    pub features: FeatureConfig,
    pub identities: BTreeMap<String, CheckpointPair>,
}

impl ServiceConfig {
    /// Reads a config file. Relative checkpoint paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ServiceConfig =
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for pair in cfg.identities.values_mut() {
            pair.predictor = base.join(&pair.predictor);
            pair.reenactor = base.join(&pair.reenactor);
        }
        cfg.features
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Declares `{id}_predictor.ckpt` / `{id}_reenactor.ckpt` from `dir` for every identity.
    pub fn from_checkpoint_dir(features: FeatureConfig, dir: &Path, identities: &[&str]) -> Self {
        let identities = identities
            .iter()
            .map(|id| {
                let (predictor, reenactor) = apbface_core::pipeline::checkpoint_paths(dir, id);
                (id.to_string(), CheckpointPair { predictor, reenactor })
            })
            .collect();
        ServiceConfig { features, identities }
    }
}
