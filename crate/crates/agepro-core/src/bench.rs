//! Synthetic benchmark generator: a clustered gallery whose old group is the
//! young group shifted by a known direction, plus smooth orbiting videos.
//!
//! Each cluster mixes three neighbor roles around its center: a few tight
//! core entries that stay nearest throughout a video, a cone of volatile
//! entries at a common radius whose nearest-rank churns as the video orbits,
//! and one stable anchor entry on the cone axis just beyond the shell.
//! Greedy per-frame K-NN keeps flipping among the volatiles while a
//! selection policy can trade the volatile slot for the anchor and hold its
//! sets steady.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::VideoSequence;
use crate::gallery::{AgeGroup, AttributeVector, GalleryEntry, Payload};
use crate::{Error, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSizes {
    pub per_group: usize,
    pub clusters: usize,
    pub videos: usize,
    pub frames_per_video: usize,
    pub height: usize,
    pub width: usize,
}

impl BenchSizes {
    pub fn desk_default() -> Self {
        Self { per_group: 40, clusters: 4, videos: 5, frames_per_video: 20, height: 8, width: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub sizes: BenchSizes,
    /// Per-pixel noise half-width added to each old entry on top of the
    /// ground-truth direction.
    pub noise: f64,
    /// Euclidean radius of the volatile shell around each cluster center;
    /// core and anchor radii are fixed fractions of it.
    pub spread: f64,
    /// Per-frame jitter half-width of the video trajectory; the orbit
    /// amplitude is a fixed multiple of it.
    pub walk_step: f64,
    pub attribute_len: usize,
}

impl BenchConfig {
    pub fn new(seed: u64, sizes: BenchSizes) -> Self {
        Self {
            seed,
            sizes,
            noise: 0.005,
            spread: 0.5,
            walk_step: 0.06,
            attribute_len: 4,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        let s = &self.sizes;
        if s.per_group == 0 || s.clusters == 0 {
            return Err(Error::InvalidConfig("benchmark sizes must be positive".into()));
        }
        if s.videos > 0 && s.frames_per_video < 2 {
            return Err(Error::InvalidConfig("videos need at least 2 frames".into()));
        }
        if s.height < Frame::MIN_DIM || s.width < Frame::MIN_DIM {
            return Err(Error::InvalidConfig("benchmark frames too small".into()));
        }
        if self.noise < 0.0 || self.spread < 0.0 || self.walk_step < 0.0 {
            return Err(Error::InvalidConfig("noise terms must be >= 0".into()));
        }
        Ok(())
    }
}

/// Ground-truth record written next to the generated files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchTruth {
    pub schema_version: u32,
    pub config: BenchConfig,
    /// Pixel-space aging direction applied to every old entry.
    pub direction: Vec<f64>,
    pub video_starts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub gallery_path: PathBuf,
    pub video_dirs: Vec<PathBuf>,
    pub truth_path: PathBuf,
    pub truth: BenchTruth,
}

// young pixels live in [0.1, 0.6] and the direction in [0.015, 0.035], so
// old = young + direction stays inside [0, 1] before noise; the direction is
// kept small so both age groups share one neighborhood geometry
const BASE_LOW: f64 = 0.1;
const BASE_HIGH: f64 = 0.6;
const DIR_LOW: f64 = 0.015;
const DIR_HIGH: f64 = 0.035;

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub fn generate_synthetic_benchmark(cfg: &BenchConfig, out_dir: &Path) -> Result<BenchOutput, Error> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let s = cfg.sizes;
    let dim = s.height * s.width;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let direction: Vec<f64> = (0..dim).map(|_| rng.gen_range(DIR_LOW..DIR_HIGH)).collect();
    let centers: Vec<Vec<f64>> = (0..s.clusters)
        .map(|_| (0..dim).map(|_| rng.gen_range(BASE_LOW..BASE_HIGH)).collect())
        .collect();

    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.into_iter().map(|x| x / norm).collect()
    };

    // volatile shells live in a cone per cluster with the anchor on its axis
    let cone_axes: Vec<Vec<f64>> = (0..s.clusters).map(|_| unit(&mut rng)).collect();

    let mut entries = Vec::with_capacity(2 * s.per_group);
    for i in 0..s.per_group {
        let cluster = i % s.clusters;
        let center = &centers[cluster];
        let axis = &cone_axes[cluster];
        // within-cluster ordinal decides the role: tight core entries first,
        // one anchor just beyond the volatile shell, at most 15 shell
        // entries, and any remainder parked well outside the extended range
        let ordinal = i / s.clusters;
        let (radius, dir) = match ordinal {
            0..=3 => (cfg.spread * 0.15 * rng.gen_range(0.5..=1.0), unit(&mut rng)),
            4 => (cfg.spread * 1.2, axis.clone()),
            5..=19 => {
                let off = unit(&mut rng);
                let mixed: Vec<f64> =
                    axis.iter().zip(&off).map(|(a, o)| a + 0.6 * o).collect();
                let norm = mixed.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                (cfg.spread, mixed.into_iter().map(|x| x / norm).collect())
            }
            _ => (cfg.spread * 3.0 * rng.gen_range(1.0..=1.2), unit(&mut rng)),
        };
        let young: Vec<f64> = center
            .iter()
            .zip(&dir)
            .map(|(c, d)| clamp01(c + radius * d))
            .collect();
        let old: Vec<f64> = center
            .iter()
            .zip(&dir)
            .zip(&direction)
            .map(|((c, d), g)| {
                clamp01(c + radius * d + g + rng.gen_range(-cfg.noise..=cfg.noise))
            })
            .collect();
        let attrs: String =
            (0..cfg.attribute_len).map(|_| if rng.gen_bool(0.5) { '1' } else { '0' }).collect();
        let attrs = AttributeVector::parse(&attrs)?;
        entries.push(GalleryEntry {
            id: format!("y{i:04}"),
            age_group: AgeGroup(0),
            attributes: attrs.clone(),
            payload: Payload::Frame(Frame::new(s.height, s.width, young)?),
        });
        entries.push(GalleryEntry {
            id: format!("o{i:04}"),
            age_group: AgeGroup(1),
            attributes: attrs,
            payload: Payload::Frame(Frame::new(s.height, s.width, old)?),
        });
    }
    let gallery_path = out_dir.join("gallery.jsonl");
    crate::gallery::write_entries_jsonl(&gallery_path, &entries)?;

    let mut video_dirs = Vec::with_capacity(s.videos);
    let mut video_starts = Vec::with_capacity(s.videos);
    for v in 0..s.videos {
        let center = &centers[v % s.clusters];
        // smooth trajectory: a slow orbit around the cluster center plus
        // per-frame jitter, so the view direction keeps changing
        let e1 = unit(&mut rng);
        let raw = unit(&mut rng);
        let dot: f64 = raw.iter().zip(&e1).map(|(a, b)| a * b).sum();
        let mut e2: Vec<f64> = raw.iter().zip(&e1).map(|(a, b)| a - dot * b).collect();
        let n2 = e2.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        for x in &mut e2 {
            *x /= n2;
        }
        let amp = 4.0 * cfg.walk_step;
        let phase0 = rng.gen_range(0.0..std::f64::consts::TAU);
        let dphase = 0.8;
        let mut frames = Vec::with_capacity(s.frames_per_video);
        for t in 0..s.frames_per_video {
            let phase = phase0 + dphase * t as f64;
            let (sin, cos) = phase.sin_cos();
            let frame: Vec<f64> = center
                .iter()
                .zip(&e1)
                .zip(&e2)
                .map(|((c, a), b)| {
                    let jitter = rng.gen_range(-cfg.walk_step..=cfg.walk_step);
                    clamp01(c + amp * (cos * a + sin * b) + jitter)
                })
                .collect();
            if t == 0 {
                video_starts.push(frame.clone());
            }
            frames.push(Frame::new(s.height, s.width, frame.clone())?);
        }
        let dir = out_dir.join(format!("video_{v:02}"));
        crate::formats::write_video(&dir, &VideoSequence::new(frames)?)?;
        video_dirs.push(dir);
    }

    let truth = BenchTruth {
        schema_version: crate::formats::SCHEMA_VERSION,
        config: cfg.clone(),
        direction,
        video_starts,
    };
    let truth_path = out_dir.join("truth.json");
    crate::formats::write_json(&truth_path, &truth)?;
    Ok(BenchOutput { gallery_path, video_dirs, truth_path, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::IdentityEmbedder;
    use crate::gallery::Gallery;
    use crate::traversal::{aging_delta, NeighborSets, TraversalConfig};

    fn tiny(seed: u64) -> BenchConfig {
        let sizes = BenchSizes {
            per_group: 6,
            clusters: 2,
            videos: 1,
            frames_per_video: 3,
            height: 4,
            width: 4,
        };
        BenchConfig::new(seed, sizes)
    }

    #[test]
    fn zero_sizes_rejected() {
        let mut cfg = tiny(0);
        cfg.sizes.per_group = 0;
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_synthetic_benchmark(&cfg, dir.path()).is_err());
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let cfg = tiny(9);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_benchmark(&cfg, a.path()).unwrap();
        generate_synthetic_benchmark(&cfg, b.path()).unwrap();
        for rel in ["gallery.jsonl", "truth.json", "video_00/frame_0001.pgm", "video_00/index.json"]
        {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap(),
                "{rel} differs between runs"
            );
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_benchmark(&tiny(1), a.path()).unwrap();
        generate_synthetic_benchmark(&tiny(2), b.path()).unwrap();
        assert_ne!(
            std::fs::read(a.path().join("gallery.jsonl")).unwrap(),
            std::fs::read(b.path().join("gallery.jsonl")).unwrap()
        );
    }

    #[test]
    fn zero_noise_mirrored_sets_recover_direction() {
        let mut cfg = tiny(5);
        cfg.noise = 0.0;
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synthetic_benchmark(&cfg, dir.path()).unwrap();
        let e = IdentityEmbedder::new(4, 4);
        let g = Gallery::ingest(&out.gallery_path, &e).unwrap();
        let k = 3;
        let sets = NeighborSets {
            young: (0..k).map(|i| format!("y{i:04}")).collect(),
            old: (0..k).map(|i| format!("o{i:04}")).collect(),
        };
        let tcfg = TraversalConfig::new(k, AgeGroup(0), AgeGroup(1));
        let d = aging_delta(&g, &e, &sets, &Frame::zeros(4, 4), &tcfg).unwrap();
        for (got, want) in d.0.iter().zip(&out.truth.direction) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn videos_are_smooth_walks() {
        let cfg = tiny(7);
        let dir = tempfile::tempdir().unwrap();
        let out = generate_synthetic_benchmark(&cfg, dir.path()).unwrap();
        let video = crate::formats::read_video(&out.video_dirs[0]).unwrap();
        assert_eq!(video.len(), 3);
        // orbit chord (amplitude 4 * walk_step, phase step 0.8) plus jitter
        let quant = 0.5 / 65535.0;
        let bound = 6.5 * cfg.walk_step + 2.0 * quant + 1e-12;
        for pair in video.frames.windows(2) {
            for (a, b) in pair[0].values().iter().zip(pair[1].values()) {
                assert!((a - b).abs() <= bound);
            }
        }
    }
}
