//! Run configuration file: one JSON document driving gallery lookup,
//! traversal, the selection environment, and inversion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedder::EmbedderSpec;
use crate::gallery::{AgeGroup, AlignmentOp, RankMode};
use crate::inversion::InversionConfig;
use crate::mdp::{MdpConfig, RewardConfig};
use crate::traversal::TraversalConfig;
use crate::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub embedder: EmbedderSpec,
    pub gallery: PathBuf,
    pub young_group: usize,
    pub old_group: usize,
    pub k: usize,
    /// Extended-list multiplier; the candidate pool per group is `n * k`.
    pub n: usize,
    pub alpha: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub policy_checkpoint: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub rank: RankMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        self.validate()?;
        crate::formats::write_json(path, self)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.k == 0 || self.n == 0 {
            return Err(Error::InvalidConfig("k and n must be >= 1".into()));
        }
        if self.young_group == self.old_group {
            return Err(Error::InvalidConfig("young and old groups must differ".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be finite".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        self.inversion.validate()?;
        Ok(())
    }

    pub fn mdp(&self) -> MdpConfig {
        MdpConfig {
            k: self.k,
            n_multiplier: self.n,
            young_group: AgeGroup(self.young_group),
            old_group: AgeGroup(self.old_group),
            alignment: AlignmentOp::Identity,
            rank: self.rank,
        }
    }

    pub fn traversal(&self) -> TraversalConfig {
        let mut t = self.mdp().traversal();
        t.alpha = self.alpha;
        t
    }

    pub fn reward(&self) -> RewardConfig {
        RewardConfig { epsilon: self.epsilon }
    }

    /// Desk-scale default used by the generated fixtures.
    pub fn desk_default(gallery: PathBuf, embedder: EmbedderSpec) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            embedder,
            gallery,
            young_group: 0,
            old_group: 1,
            k: 5,
            n: 4,
            alpha: 1.0,
            epsilon: 1e-2,
            inversion: InversionConfig::default(),
            policy_checkpoint: None,
            seed: 0,
            rank: RankMode::default(),
        }
    }
}
