//! Age-grouped reference gallery with exhaustive nearest-neighbor queries.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedder::Embedder;
use crate::{Error, Frame};

/// Index into the age-group partition; the default partition has 11 groups of
/// five years starting at age 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgeGroup(pub usize);

impl AgeGroup {
    pub const DEFAULT_COUNT: usize = 11;

    /// Year-range label for the default five-year bands.
    pub fn label(&self) -> String {
        let lo = 10 + 5 * self.0;
        format!("{}-{}", lo, lo + 4)
    }
}

/// Fixed-length opaque attribute bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AttributeVector {
    bits: Vec<bool>,
}

impl AttributeVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn parse(s: &str) -> Result<Self, Error> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::GalleryParse(format!("attribute char {other:?}"))),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

impl TryFrom<String> for AttributeVector {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        Self::parse(&s)
    }
}

impl From<AttributeVector> for String {
    fn from(v: AttributeVector) -> String {
        v.bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
    }
}

/// Count of positions where both vectors agree.
pub fn attribute_matches(a: &AttributeVector, b: &AttributeVector) -> Result<usize, Error> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x == y).count())
}

/// `1 - <a,b> / (|a||b|)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64, Error> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), got: b.len() });
    }
    let na = crate::linalg::l2_norm(a);
    let nb = crate::linalg::l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(1.0 - crate::linalg::dot(a, b) / (na * nb))
}

/// Entry payload: either a raw frame or a precomputed embedding pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Frame(Frame),
    Embeddings { synthesis: Vec<f64>, policy: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub id: String,
    pub age_group: AgeGroup,
    pub attributes: AttributeVector,
    pub payload: Payload,
}

/// Positions a neighbor with respect to the reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlignmentOp {
    Identity,
    IntegerShift { dy: i64, dx: i64 },
}

impl AlignmentOp {
    pub fn is_identity(&self) -> bool {
        matches!(self, AlignmentOp::Identity | AlignmentOp::IntegerShift { dy: 0, dx: 0 })
    }
}

/// Applies the alignment operator to an entry's frame payload.
pub fn align(entry: &GalleryEntry, _reference: &Frame, op: AlignmentOp) -> Result<Frame, Error> {
    match (&entry.payload, op) {
        (Payload::Frame(f), AlignmentOp::Identity) => Ok(f.clone()),
        (Payload::Frame(f), AlignmentOp::IntegerShift { dy, dx }) => Ok(f.shifted(dy, dx)),
        (Payload::Embeddings { .. }, _) => Err(Error::EmbeddingOnlyPayload(entry.id.clone())),
    }
}

/// How the two closeness criteria combine when ranking neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RankMode {
    /// Matched attributes first, cosine distance as tie-break.
    #[default]
    AttributesFirst,
    CosineOnly,
}

/// Nearest-neighbor query: a synthesis embedding plus optional attributes.
#[derive(Debug, Clone)]
pub struct Query {
    pub embedding: Vec<f64>,
    pub attributes: Option<AttributeVector>,
}

struct CachedEntry {
    entry: GalleryEntry,
    emb_s: Vec<f64>,
    emb_p: Vec<f64>,
}

/// Immutable after ingest; embeddings cached once per entry.
pub struct Gallery {
    entries: BTreeMap<String, CachedEntry>,
    groups: BTreeMap<AgeGroup, Vec<String>>,
    attribute_len: usize,
    embedding_payloads: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFrame {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEntry {
    id: String,
    age_group: usize,
    attributes: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<RawFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb_p: Option<Vec<f64>>,
}

impl Gallery {
    /// Reads a JSON-lines gallery file and caches embeddings for every entry.
    pub fn ingest(path: &Path, embedder: &dyn Embedder) -> Result<Self, Error> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawEntry = serde_json::from_str(&line)
                .map_err(|e| Error::GalleryParse(format!("line {}: {e}", lineno + 1)))?;
            entries.push(raw_to_entry(raw, lineno + 1)?);
        }
        Self::from_entries(entries, embedder)
    }

    pub fn from_entries(entries: Vec<GalleryEntry>, embedder: &dyn Embedder) -> Result<Self, Error> {
        if entries.is_empty() {
            return Err(Error::GalleryParse("empty entry list".into()));
        }
        let attribute_len = entries[0].attributes.len();
        let embedding_payloads = matches!(entries[0].payload, Payload::Embeddings { .. });
        let mut map = BTreeMap::new();
        let mut groups: BTreeMap<AgeGroup, Vec<String>> = BTreeMap::new();
        for entry in entries {
            if entry.attributes.len() != attribute_len {
                return Err(Error::GalleryParse(format!(
                    "entry {}: attribute length {} != {}",
                    entry.id,
                    entry.attributes.len(),
                    attribute_len
                )));
            }
            if matches!(entry.payload, Payload::Embeddings { .. }) != embedding_payloads {
                return Err(Error::GalleryParse(format!(
                    "entry {}: mixed payload kinds",
                    entry.id
                )));
            }
            let (emb_s, emb_p) = match &entry.payload {
                Payload::Frame(f) => {
                    (embedder.embed_synthesis(f)?.0, embedder.embed_policy(f)?.0)
                }
                Payload::Embeddings { synthesis, policy } => {
                    if synthesis.len() != embedder.synthesis_dim() {
                        return Err(Error::LengthMismatch {
                            expected: embedder.synthesis_dim(),
                            got: synthesis.len(),
                        });
                    }
                    if policy.len() != embedder.policy_dim() {
                        return Err(Error::LengthMismatch {
                            expected: embedder.policy_dim(),
                            got: policy.len(),
                        });
                    }
                    (synthesis.clone(), policy.clone())
                }
            };
            groups.entry(entry.age_group).or_default().push(entry.id.clone());
            let id = entry.id.clone();
            if map.insert(id.clone(), CachedEntry { entry, emb_s, emb_p }).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        for ids in groups.values_mut() {
            ids.sort();
        }
        Ok(Self { entries: map, groups, attribute_len, embedding_payloads })
    }

    /// Writes the gallery back as JSON lines, embeddings precomputed.
    pub fn write_embedding_jsonl(&self, path: &Path) -> Result<(), Error> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for cached in self.entries.values() {
            let raw = RawEntry {
                id: cached.entry.id.clone(),
                age_group: cached.entry.age_group.0,
                attributes: String::from(cached.entry.attributes.clone()),
                frame: None,
                emb_s: Some(cached.emb_s.clone()),
                emb_p: Some(cached.emb_p.clone()),
            };
            serde_json::to_writer(&mut out, &raw)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn attribute_len(&self) -> usize {
        self.attribute_len
    }

    pub fn has_embedding_payloads(&self) -> bool {
        self.embedding_payloads
    }

    pub fn entry(&self, id: &str) -> Result<&GalleryEntry, Error> {
        self.entries.get(id).map(|c| &c.entry).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn synthesis_embedding(&self, id: &str) -> Result<&[f64], Error> {
        self.entries
            .get(id)
            .map(|c| c.emb_s.as_slice())
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn policy_embedding(&self, id: &str) -> Result<&[f64], Error> {
        self.entries
            .get(id)
            .map(|c| c.emb_p.as_slice())
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn group_ids(&self, group: AgeGroup) -> &[String] {
        self.groups.get(&group).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn query_for_frame(&self, embedder: &dyn Embedder, frame: &Frame) -> Result<Query, Error> {
        Ok(Query { embedding: embedder.embed_synthesis(frame)?.0, attributes: None })
    }

    /// Synthesis embedding of `id` after alignment; identity alignment uses the
    /// cached embedding directly.
    pub fn aligned_synthesis(
        &self,
        embedder: &dyn Embedder,
        id: &str,
        reference: &Frame,
        op: AlignmentOp,
    ) -> Result<Vec<f64>, Error> {
        if op.is_identity() {
            return Ok(self.synthesis_embedding(id)?.to_vec());
        }
        let aligned = align(self.entry(id)?, reference, op)?;
        Ok(embedder.embed_synthesis(&aligned)?.0)
    }

    /// Exhaustive k-nearest-neighbor scan of one age group.
    ///
    /// Entries sort by (matched attributes desc, cosine distance asc, id asc);
    /// with `CosineOnly` or an attribute-free query the first key drops out.
    pub fn knn(
        &self,
        query: &Query,
        group: AgeGroup,
        k: usize,
        rank: RankMode,
    ) -> Result<Vec<String>, Error> {
        let ids = self.group_ids(group);
        if ids.len() < k {
            return Err(Error::UndersizedGroup { group: group.0, have: ids.len(), need: k });
        }
        let mut scored = Vec::with_capacity(ids.len());
        for id in ids {
            let cached = &self.entries[id];
            let matches = match (rank, &query.attributes) {
                (RankMode::AttributesFirst, Some(attrs)) => {
                    attribute_matches(attrs, &cached.entry.attributes)?
                }
                _ => 0,
            };
            let dist = cosine_distance(&query.embedding, &cached.emb_s)?;
            scored.push((matches, dist, id));
        }
        scored.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(a.1.partial_cmp(&b.1).expect("finite distances"))
                .then(a.2.cmp(b.2))
        });
        Ok(scored.into_iter().take(k).map(|(_, _, id)| id.clone()).collect())
    }
}

fn raw_to_entry(raw: RawEntry, lineno: usize) -> Result<GalleryEntry, Error> {
    let attributes = AttributeVector::parse(&raw.attributes)?;
    let payload = match (raw.frame, raw.emb_s, raw.emb_p) {
        (Some(f), None, None) => Payload::Frame(
            Frame::new(f.h, f.w, f.values)
                .map_err(|e| Error::GalleryParse(format!("line {lineno}: {e}")))?,
        ),
        (None, Some(s), Some(p)) => Payload::Embeddings { synthesis: s, policy: p },
        _ => {
            return Err(Error::GalleryParse(format!(
                "line {lineno}: entry needs either a frame or both emb_s and emb_p"
            )))
        }
    };
    Ok(GalleryEntry { id: raw.id, age_group: AgeGroup(raw.age_group), attributes, payload })
}

/// Serializes entries (frame or embedding payloads) as JSON lines.
pub fn write_entries_jsonl(path: &Path, entries: &[GalleryEntry]) -> Result<(), Error> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for entry in entries {
        let raw = match &entry.payload {
            Payload::Frame(f) => RawEntry {
                id: entry.id.clone(),
                age_group: entry.age_group.0,
                attributes: String::from(entry.attributes.clone()),
                frame: Some(RawFrame {
                    h: f.height(),
                    w: f.width(),
                    values: f.values().to_vec(),
                }),
                emb_s: None,
                emb_p: None,
            },
            Payload::Embeddings { synthesis, policy } => RawEntry {
                id: entry.id.clone(),
                age_group: entry.age_group.0,
                attributes: String::from(entry.attributes.clone()),
                frame: None,
                emb_s: Some(synthesis.clone()),
                emb_p: Some(policy.clone()),
            },
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
