//! `apbface` command line: data preparation, training, evaluation and serving.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use apbface_core::array_file::{self, DType};
use apbface_core::audio::{extract_mfcc, read_wav, window_for_frame, FeatureConfig};
use apbface_core::data::preprocess::{preprocess, PreprocessConfig};
use apbface_core::data::{synth_dataset, DatasetManifest, Split, SynthConfig};
use apbface_core::geometry::{IndexGroups, LandmarkSet};
use apbface_core::pipeline::{checkpoint_paths, evaluate_pipeline, split_cache, IdentityModels};
use apbface_core::render::{rasterize, POINT_RADIUS};
use apbface_core::train::{train_predictor, train_reenactor, RunOutput, TrainConfig};
use apbface_service::{Service, ServiceConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "apbface", version, about = "Audio, pose and blink driven face reenactment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract the MFCC window of one video frame into an array file.
    Mfcc {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Feature config JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize a landmark JSON file to a PNG.
    Render {
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Generate the synthetic dataset.
    SynthData {
        /// Synthetic dataset config JSON; the seed-7 toy set when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a dataset from annotated video frames and an audio track.
    Preprocess {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the landmark predictor of every (or one) identity.
    TrainPredictor(TrainArgs),
    /// Train the face reenactor of every (or one) identity.
    TrainReenactor(TrainArgs),
    /// Evaluate checkpoints on the test split and write a report.
    Eval {
        /// Directory holding `{identity}_predictor.ckpt` and `{identity}_reenactor.ckpt`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip driving each identity with the others' signals.
        #[arg(long)]
        no_cross: bool,
    },
    /// Run the HTTP inference service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Print a preset config as JSON.
    PrintConfig {
        #[arg(value_enum)]
        kind: ConfigKind,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Resolution for the tiny preset.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Epochs for the tiny preset.
        #[arg(long, default_value_t = 2)]
        epochs: usize,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Training config JSON (see `print-config`).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these identities.
    #[arg(long)]
    identity: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    TrainFull,
    TrainToy,
    TrainTiny,
    Synth,
    Features,
    Preprocess,
}

/// Landmark file for `render`. Groups default to the layout for the point count.
#[derive(Deserialize)]
struct LandmarkFile {
    points: Vec<[f64; 2]>,
    #[serde(default)]
    groups: Option<IndexGroups>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_json_or<T: DeserializeOwned>(path: Option<&Path>, default: T) -> Result<T> {
    path.map(read_json).transpose().map(|c| c.unwrap_or(default))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn selected(manifest: &DatasetManifest, only: &[String]) -> Result<Vec<String>> {
    let all: Vec<String> = manifest.identities.iter().map(|e| e.name.clone()).collect();
    for id in only {
        if !all.contains(id) {
            bail!("identity {id:?} is not in the dataset");
        }
    }
    Ok(if only.is_empty() { all } else { only.to_vec() })
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Predictor,
    Reenactor,
}

fn train(args: &TrainArgs, stage: Stage) -> Result<()> {
    let cfg: TrainConfig = read_json(&args.config)?;
    cfg.validate()?;
    let (manifest, root) = DatasetManifest::load(&args.data)?;
    let out = RunOutput::new(&args.out)?;
    for id in selected(&manifest, &args.identity)? {
        let train = split_cache(&manifest, &root, Split::Train, &id)?;
        let val = split_cache(&manifest, &root, Split::Val, &id)?;
        let (pp, rp) = checkpoint_paths(&args.out, &id);
        let (history, path) = match stage {
            Stage::Predictor => {
                let (t, h) = train_predictor(&cfg, &train, Some(&val), &id, cfg.predictor_adversary, Some(&out))?;
                t.to_checkpoint()?.save(&pp)?;
                (h, pp)
            }
            Stage::Reenactor => {
                let (t, h) = train_reenactor(&cfg, &train, Some(&val), &id, Some(&out))?;
                t.to_checkpoint()?.save(&rp)?;
                (h, rp)
            }
        };
        tracing::info!(identity = %id, checkpoint = %path.display(), validation = ?history.last_validation(), "trained");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mfcc {
            input,
            frame,
            config,
            out,
        } => {
            let cfg = read_json_or(config.as_deref(), FeatureConfig::default())?;
            cfg.validate()?;
            let track = read_wav(&input)?;
            let f = extract_mfcc(&window_for_frame(&track, frame, &cfg)?, &cfg)?;
            array_file::save(&out, &[f.frames, f.coeffs], &f.values, DType::F64)?;
        }
        Command::Render {
            landmarks,
            out,
            resolution,
        } => {
            let file: LandmarkFile = read_json(&landmarks)?;
            let groups = match file.groups {
                Some(g) => g,
                None => IndexGroups::for_count(file.points.len())
                    .with_context(|| format!("no default groups for {} points; give \"groups\"", file.points.len()))?,
            };
            let set = LandmarkSet::new(file.points, groups)?;
            rasterize(&set, resolution, POINT_RADIUS)?.save_png(&out)?;
        }
        Command::SynthData { config, out } => {
            let cfg = read_json_or(config.as_deref(), SynthConfig::toy(7))?;
            let m = synth_dataset(&cfg, &out)?;
            tracing::info!(samples = m.samples.len(), dir = %out.display(), "dataset written");
        }
        Command::Preprocess {
            frames,
            annotations,
            audio,
            out,
            config,
        } => {
            let cfg = read_json_or(config.as_deref(), PreprocessConfig::default())?;
            let m = preprocess(&frames, &annotations, &audio, &out, &cfg)?;
            tracing::info!(samples = m.samples.len(), dir = %out.display(), "dataset written");
        }
        Command::TrainPredictor(args) => train(&args, Stage::Predictor)?,
        Command::TrainReenactor(args) => train(&args, Stage::Reenactor)?,
        Command::Eval {
            checkpoint,
            data,
            out,
            no_cross,
        } => {
            let (manifest, root) = DatasetManifest::load(&data)?;
            let models = selected(&manifest, &[])?
                .iter()
                .map(|id| IdentityModels::load_dir(id, &checkpoint))
                .collect::<apbface_core::Result<Vec<_>>>()?;
            let report = evaluate_pipeline(&models, &manifest, &root, !no_cross)?;
            write_json(&out, &report)?;
        }
        Command::Serve { config, port, host } => {
            let cfg = ServiceConfig::load(&config)?;
            let service = Arc::new(Service::from_config(&cfg)?);
            for (id, ready) in service.identities() {
                tracing::info!(identity = %id, ready, "identity");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(apbface_service::serve(service, SocketAddr::new(host, port)))?;
        }
        Command::PrintConfig {
            kind,
            seed,
            resolution,
            epochs,
        } => {
            let value = match kind {
                ConfigKind::TrainFull => serde_json::to_value(TrainConfig::full(seed))?,
                ConfigKind::TrainToy => serde_json::to_value(TrainConfig::toy(seed))?,
                ConfigKind::TrainTiny => serde_json::to_value(TrainConfig::tiny(seed, resolution, epochs))?,
                ConfigKind::Synth => serde_json::to_value(SynthConfig::toy(seed))?,
                ConfigKind::Features => serde_json::to_value(FeatureConfig::default())?,
                ConfigKind::Preprocess => serde_json::to_value(PreprocessConfig::default())?,
            };
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
