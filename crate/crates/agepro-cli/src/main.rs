use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use agepro_core::bench::{generate_synthetic_benchmark, BenchConfig, BenchSizes};
use agepro_core::config::RunConfig;
use agepro_core::evaluation::{
    matching_score, temporal_smoothness, FlowConfig, FrameMetrics, MatchingSummary, MetricReport,
};
use agepro_core::formats;
use agepro_core::gallery::Payload;
use agepro_core::inversion::invert;
use agepro_core::pipeline::{synthesize_video, PolicyMode, RunManifest};
use agepro_core::policy::{
    greedy_baseline, load_checkpoint, save_checkpoint, train, write_train_log_csv, PolicyParams,
    TrainConfig,
};
use agepro_core::traversal::aging_delta;
use agepro_core::{Error, Frame, Gallery, SelectionEnv};

#[derive(Parser)]
#[command(name = "agepro", version, about = "Feature-space age progression for image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gallery file operations
    Gallery {
        #[command(subcommand)]
        command: GalleryCommand,
    },
    /// Synthetic benchmark data
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Neighbor-selection policy operations
    Policy {
        #[command(subcommand)]
        command: PolicyCommand,
    },
    /// Video synthesis and evaluation
    Video {
        #[command(subcommand)]
        command: VideoCommand,
    },
    /// Invert a frame's embedding back to pixels
    Invert(InvertArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        cfg.validate()
    }
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

#[derive(Subcommand)]
enum GalleryCommand {
    /// Ingest a frame gallery and write it back with precomputed embeddings
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate a synthetic gallery, videos, and ground truth
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        per_group: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 5)]
        videos: usize,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        height: usize,
        #[arg(long, default_value_t = 8)]
        width: usize,
        #[arg(long, default_value_t = 0.005)]
        noise: f64,
        #[arg(long, default_value_t = 0.06)]
        walk_step: f64,
    },
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Train the selection policy on episodes sampled from videos
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Video directory; repeatable
        #[arg(long, required = true)]
        video: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Optional CSV training log
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Subcommand)]
enum VideoCommand {
    /// Age a video and write frames plus a run manifest
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ignore any configured checkpoint and keep per-frame sets
        #[arg(long)]
        no_policy: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compute metrics for a synthesized video against the original
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct InvertArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gallery { command: GalleryCommand::Build { config, out, overrides } } => {
            let cfg = load_config(&config, &overrides)?;
            let embedder = cfg.embedder.build()?;
            let gallery = Gallery::ingest(&cfg.gallery, &*embedder)?;
            gallery.write_embedding_jsonl(&out)?;
            println!("wrote {} entries to {}", gallery.len(), out.display());
        }
        Command::Bench {
            command:
                BenchCommand::Gen {
                    out,
                    seed,
                    per_group,
                    clusters,
                    videos,
                    frames,
                    height,
                    width,
                    noise,
                    walk_step,
                },
        } => {
            let sizes = BenchSizes {
                per_group,
                clusters,
                videos,
                frames_per_video: frames,
                height,
                width,
            };
            let mut cfg = BenchConfig::new(seed, sizes);
            cfg.noise = noise;
            cfg.walk_step = walk_step;
            let result = generate_synthetic_benchmark(&cfg, &out)?;
            println!(
                "wrote gallery ({} per group), {} videos, truth to {}",
                per_group,
                result.video_dirs.len(),
                out.display()
            );
        }
        Command::Policy {
            command:
                PolicyCommand::Train {
                    config,
                    video,
                    out,
                    episodes,
                    learning_rate,
                    log,
                    overrides,
                },
        } => {
            let cfg = load_config(&config, &overrides)?;
            let embedder = cfg.embedder.build()?;
            let gallery = Gallery::ingest(&cfg.gallery, &*embedder)?;
            let params = train_policy(
                &gallery,
                &*embedder,
                &cfg,
                &video,
                episodes,
                learning_rate,
                log.as_deref(),
            )?;
            save_checkpoint(&out, &params)?;
            println!("saved checkpoint to {}", out.display());
        }
        Command::Video {
            command: VideoCommand::Synth { config, input, out, no_policy, overrides },
        } => {
            let cfg = load_config(&config, &overrides)?;
            let embedder = cfg.embedder.build()?;
            let gallery = Gallery::ingest(&cfg.gallery, &*embedder)?;
            let video = formats::read_video(&input)?;
            let policy = if no_policy {
                PolicyMode::NoOp
            } else {
                match &cfg.policy_checkpoint {
                    Some(path) => PolicyMode::Learned(load_checkpoint(path)?),
                    None => PolicyMode::NoOp,
                }
            };
            let (aged, manifest) = synthesize_video(&video, &gallery, &*embedder, &policy, &cfg)?;
            formats::write_video(&out, &aged)?;
            formats::write_json(&out.join("manifest.json"), &manifest)?;
            println!(
                "synthesized {} frames ({} policy) to {}",
                aged.len(),
                manifest.policy,
                out.display()
            );
        }
        Command::Video {
            command: VideoCommand::Eval { config, original, synth, manifest, out, overrides },
        } => {
            let cfg = load_config(&config, &overrides)?;
            let embedder = cfg.embedder.build()?;
            let gallery = Gallery::ingest(&cfg.gallery, &*embedder)?;
            let orig = formats::read_video(&original)?;
            let syn = formats::read_video(&synth)?;
            let manifest: RunManifest = formats::read_json(&manifest)?;
            let report = evaluate(&cfg, &gallery, &*embedder, &orig, &syn, &manifest)?;
            formats::write_json(&out, &report)?;
            println!(
                "consistency {:.6} smoothness {:.6} matching {:.6}",
                report.consistency, report.smoothness, report.matching.mean
            );
        }
        Command::Invert(InvertArgs { config, frame, out, overrides }) => {
            let cfg = load_config(&config, &overrides)?;
            let embedder = cfg.embedder.build()?;
            let input = formats::read_pgm(&frame)?;
            let target = embedder.embed_synthesis(&input)?;
            let (recovered, objective) = invert(&target, &*embedder, &cfg.inversion, &input)?;
            formats::write_pgm(&out, &recovered)?;
            let sidecar = out.with_extension("json");
            formats::write_json(
                &sidecar,
                &serde_json::json!({ "final_objective": objective }),
            )?;
            println!("objective {objective:.6e}, wrote {}", out.display());
        }
    }
    Ok(())
}

/// One training sample: a consecutive frame pair with the earlier frame's
/// greedy sets and delta.
struct EpisodeSeed {
    current: Frame,
    previous: Frame,
    prev_sets: agepro_core::NeighborSets,
    prev_delta: agepro_core::AgingDelta,
}

fn train_policy(
    gallery: &Gallery,
    embedder: &dyn agepro_core::Embedder,
    cfg: &RunConfig,
    video_dirs: &[PathBuf],
    episodes: usize,
    learning_rate: f64,
    log_path: Option<&std::path::Path>,
) -> Result<PolicyParams, Error> {
    let mdp_cfg = cfg.mdp();
    let traversal_cfg = cfg.traversal();
    let mut seeds = Vec::new();
    for dir in video_dirs {
        let video = formats::read_video(dir)?;
        for t in 1..video.len() {
            let previous = video.frames[t - 1].clone();
            let prev_sets = greedy_baseline(&previous, gallery, embedder, &mdp_cfg)?;
            let prev_delta =
                aging_delta(gallery, embedder, &prev_sets, &previous, &traversal_cfg)?;
            seeds.push(EpisodeSeed {
                current: video.frames[t].clone(),
                previous,
                prev_sets,
                prev_delta,
            });
        }
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no frame pairs to train on".into()));
    }

    let make = |seed: &EpisodeSeed| {
        SelectionEnv::new(
            gallery,
            embedder,
            mdp_cfg.clone(),
            cfg.reward(),
            seed.current.clone(),
            seed.previous.clone(),
            seed.prev_sets.clone(),
            seed.prev_delta.clone(),
        )
    };

    // exploring starts: next to each greedy seed, add variants whose previous
    // sets already hold the last extended candidate in place of the rank-K
    // member, separately per group, so swap actions get on-policy coverage
    let k = mdp_cfg.k;
    let n = mdp_cfg.n();
    let mut pool = Vec::with_capacity(3 * seeds.len());
    for s in seeds {
        let env = make(&s)?;
        let ext_young = env.state().extended.young.clone();
        let ext_old = env.state().extended.old.clone();
        drop(env);
        for variant in [None, Some(true), Some(false)] {
            let mut sets = s.prev_sets.clone();
            match variant {
                None => {}
                // the candidate comes from the current frame's ranking and
                // may already sit in the previous sets; skip those
                Some(true) if !sets.young.contains(&ext_young[n - 1]) => {
                    sets.young[k - 1] = ext_young[n - 1].clone()
                }
                Some(false) if !sets.old.contains(&ext_old[n - 1]) => {
                    sets.old[k - 1] = ext_old[n - 1].clone()
                }
                _ => continue,
            }
            let delta = if variant.is_none() {
                s.prev_delta.clone()
            } else {
                aging_delta(gallery, embedder, &sets, &s.previous, &traversal_cfg)?
            };
            pool.push(EpisodeSeed {
                current: s.current.clone(),
                previous: s.previous.clone(),
                prev_sets: sets,
                prev_delta: delta,
            });
        }
    }

    let probe = make(&pool[0])?;
    let (u, v) = probe.encode_features()?;
    let (h1, h2) = PolicyParams::DESK_HIDDEN;
    let mut params =
        PolicyParams::seeded(u.len() + v.len(), h1, h2, mdp_cfg.n() + 1, cfg.seed);

    let train_cfg = TrainConfig {
        learning_rate,
        episodes,
        seed: cfg.seed,
        baseline_momentum: 0.5,
        ..TrainConfig::default()
    };
    // cycle seeds in blocks of consecutive batches so the moving baseline
    // mostly compares returns from the same start state
    let block = train_cfg.batch_size * 4;
    let calls = std::cell::Cell::new(0usize);
    let log = train(&mut params, &train_cfg, |_rng| {
        let idx = (calls.get() / block) % pool.len();
        calls.set(calls.get() + 1);
        make(&pool[idx])
    })?;
    if let Some(path) = log_path {
        write_train_log_csv(path, &log)?;
    }
    Ok(params)
}

fn evaluate(
    cfg: &RunConfig,
    gallery: &Gallery,
    embedder: &dyn agepro_core::Embedder,
    original: &agepro_core::evaluation::VideoSequence,
    synth: &agepro_core::evaluation::VideoSequence,
    manifest: &RunManifest,
) -> Result<MetricReport, Error> {
    let smoothness = temporal_smoothness(original, synth, &FlowConfig::default())?;
    let consistency = manifest
        .consistency
        .ok_or_else(|| Error::InvalidConfig("manifest has no consistency value".into()))?;

    // matching references are the old-group gallery frames
    let old_ids = gallery.group_ids(agepro_core::AgeGroup(cfg.old_group));
    let mut references = Vec::new();
    for id in old_ids {
        if let Payload::Frame(f) = &gallery.entry(id)?.payload {
            references.push(f.clone());
        }
    }
    if references.is_empty() {
        return Err(Error::InvalidConfig(
            "gallery has no old-group frame payloads for matching".into(),
        ));
    }

    let mut per_frame = Vec::with_capacity(synth.len());
    let mut means = Vec::with_capacity(synth.len());
    for (i, frame) in synth.frames.iter().enumerate() {
        let (mean, _) = matching_score(frame, &references, embedder)?;
        means.push(mean);
        per_frame.push(FrameMetrics {
            index: i + 1,
            delta_norm: manifest.frames.get(i).map(|r| r.delta_norm).unwrap_or(f64::NAN),
            matching_mean: mean,
        });
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / means.len() as f64;
    Ok(MetricReport {
        consistency,
        smoothness,
        matching: MatchingSummary { mean, std: var.sqrt() },
        per_frame,
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
