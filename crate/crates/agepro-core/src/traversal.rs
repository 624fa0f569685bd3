//! Feature-space aging direction and linear manifold traversal.

use serde::{Deserialize, Serialize};

use crate::embedder::{Embedder, SynthesisEmbedding};
use crate::gallery::{AgeGroup, AlignmentOp, Gallery};
use crate::{Error, Frame};

/// Per-frame young/old candidate sets of size `K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborSets {
    pub young: Vec<String>,
    pub old: Vec<String>,
}

impl NeighborSets {
    pub fn k(&self) -> usize {
        self.young.len()
    }

    pub fn validate(&self, gallery: &Gallery, cfg: &TraversalConfig) -> Result<(), Error> {
        if self.young.len() != cfg.k || self.old.len() != cfg.k {
            return Err(Error::InvalidNeighborSets(format!(
                "expected K={} per list, got {}/{}",
                cfg.k,
                self.young.len(),
                self.old.len()
            )));
        }
        for (ids, group) in [(&self.young, cfg.young_group), (&self.old, cfg.old_group)] {
            let mut seen = std::collections::BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::InvalidNeighborSets(format!("duplicate id {id}")));
                }
                let entry = gallery.entry(id)?;
                if entry.age_group != group {
                    return Err(Error::InvalidNeighborSets(format!(
                        "entry {id} in group {} but list expects {}",
                        entry.age_group.0, group.0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The feature-space editing vector of length `D_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingDelta(pub Vec<f64>);

impl AgingDelta {
    pub fn norm(&self) -> f64 {
        crate::linalg::l2_norm(&self.0)
    }

    pub fn distance(&self, other: &AgingDelta) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalConfig {
    /// User-defined combination factor applied to the delta.
    pub alpha: f64,
    pub k: usize,
    pub young_group: AgeGroup,
    pub old_group: AgeGroup,
    pub alignment: AlignmentOp,
}

impl TraversalConfig {
    pub fn new(k: usize, young_group: AgeGroup, old_group: AgeGroup) -> Self {
        Self { alpha: 1.0, k, young_group, old_group, alignment: AlignmentOp::Identity }
    }
}

/// Mean aligned old-neighbor embedding minus mean aligned young-neighbor
/// embedding.
pub fn aging_delta(
    gallery: &Gallery,
    embedder: &dyn Embedder,
    sets: &NeighborSets,
    reference: &Frame,
    cfg: &TraversalConfig,
) -> Result<AgingDelta, Error> {
    sets.validate(gallery, cfg)?;
    let dim = embedder.synthesis_dim();
    let mut acc = vec![0.0; dim];
    for id in &sets.old {
        let emb = gallery.aligned_synthesis(embedder, id, reference, cfg.alignment)?;
        crate::linalg::add_scaled_vec(&mut acc, 1.0, &emb);
    }
    for id in &sets.young {
        let emb = gallery.aligned_synthesis(embedder, id, reference, cfg.alignment)?;
        crate::linalg::add_scaled_vec(&mut acc, -1.0, &emb);
    }
    let k = cfg.k as f64;
    for v in &mut acc {
        *v /= k;
    }
    Ok(AgingDelta(acc))
}

/// `embedding + alpha * delta`.
pub fn traverse(
    embedding: &SynthesisEmbedding,
    delta: &AgingDelta,
    alpha: f64,
) -> Result<SynthesisEmbedding, Error> {
    if embedding.0.len() != delta.0.len() {
        return Err(Error::LengthMismatch { expected: embedding.0.len(), got: delta.0.len() });
    }
    Ok(SynthesisEmbedding(
        embedding.0.iter().zip(&delta.0).map(|(e, d)| e + alpha * d).collect(),
    ))
}
