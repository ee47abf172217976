//! `facepad`: synthetic data, teacher training, distillation, evaluation,
//! Grad-CAM overlays and inference benchmarks.
//!
//! Exit codes: 0 success, 1 user error (bad config, missing files, unusable
//! data), 2 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use facepad_core::bench::{bench_model, BenchConfig};
use facepad_core::config::ExperimentConfig;
use facepad_core::experiment::{evaluate_model, load_checked, load_dataset, run_distill, run_train_teacher, write_evaluation};
use facepad_core::flow::build_engine;
use facepad_core::gradcam::{grad_cam, sample_from_image, write_overlays};
use facepad_core::image::Image;
use facepad_core::ingest::{generate_synthetic_dataset, load_split, SampleMode, Split};
use facepad_core::metrics::ThresholdPolicy;
use facepad_core::models::ModelKind;
use facepad_core::pipeline::prepare_sample;
use facepad_core::seed::stream_rng;
use facepad_core::{Error, Exec};

#[derive(Parser, Debug)]
#[command(name = "facepad", version, about = "Face presentation attack detection with flow-guided distillation")]
struct Cli {
    /// Experiment config (TOML). Defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config value, e.g. `--set train.max_epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Root under which run directories are created.
    #[arg(long, default_value = "runs", global = true)]
    runs_dir: PathBuf,

    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic spoof-video dataset.
    SynthData {
        /// Output directory; defaults to `dataset.manifest` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the RGB + flow teacher, once per configured seed.
    TrainTeacher,
    /// Distill the RGB-only student and evaluate both models on the test split.
    Distill {
        /// Teacher checkpoint to use for every seed instead of the run's own.
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Score a checkpoint on one split and write scores, ROC points and a report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// `dev-eer`, `test-eer` or `fixed:<threshold>`; defaults to the config's policy.
        #[arg(long)]
        threshold_policy: Option<ThresholdPolicy>,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write Grad-CAM overlays, one per input branch.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clip id from the dataset manifest.
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        clip: Option<String>,
        /// Still RGB image (students only).
        #[arg(long)]
        image: Option<PathBuf>,
        /// `stage<N>` or `last`.
        #[arg(long, default_value = "last")]
        layer: String,
        #[arg(long, default_value = "0.45")]
        alpha: f32,
        /// Output path; branch names are appended to the file stem.
        #[arg(long, default_value = "gradcam.png")]
        out: PathBuf,
    },
    /// Measure inference throughput, latency and peak memory.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        iters: usize,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let prep = cfg.preprocessing()?;
    match cli.command {
        Command::SynthData { out } => {
            let out = out.unwrap_or_else(|| cfg.dataset.manifest.clone());
            let m = generate_synthetic_dataset(&cfg.synth, &out, exec)?;
            println!("wrote {} clips to {}", m.clips.len(), out.display());
            for (split, c) in m.counts() {
                println!("{split}: {} bonafide, {} attack", c.bonafide, c.attack);
            }
        }
        Command::TrainTeacher => {
            for path in run_train_teacher(&cfg, &cli.runs_dir, exec)? {
                println!("{}", path.display());
            }
        }
        Command::Distill { teacher } => {
            let outcome = run_distill(&cfg, &cli.runs_dir, teacher.as_deref(), exec)?;
            for r in &outcome.reports {
                println!(
                    "{} {}: accuracy {:.4} hter {:.4} eer {:.4} auc {:.4}",
                    r.model, r.split, r.accuracy, r.hter, r.eer, r.auc_roc
                );
            }
            println!("{}", outcome.mean_report.display());
        }
        Command::Evaluate {
            checkpoint,
            split,
            threshold_policy,
            out,
        } => {
            let (model, _) = load_checked(&checkpoint, &prep)?;
            let model = model.as_dyn();
            let manifest = load_dataset(&cfg)?;
            let engine = match model.kind() {
                ModelKind::Teacher => Some(build_engine(&cfg.flow.engine_spec()?)?),
                ModelKind::Student => None,
            };
            let policy = threshold_policy.unwrap_or(cfg.eval.threshold_policy);
            let eval = evaluate_model(
                model,
                &manifest,
                split,
                policy,
                engine.as_deref(),
                &prep,
                cfg.train.batch_size_eval,
                exec,
            )?;
            let dir = out.unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
            write_evaluation(&dir, &eval)?;
            print!("{}", eval.report.to_text());
        }
        Command::Gradcam {
            checkpoint,
            clip,
            image,
            layer,
            alpha,
            out,
        } => {
            let (model, _) = load_checked(&checkpoint, &prep)?;
            let model = model.as_dyn();
            let sample = match (clip, image) {
                (_, Some(path)) => {
                    if model.kind() == ModelKind::Teacher {
                        return Err(Error::Config(
                            "a teacher needs a frame pair for its flow branch; pass --clip instead of --image".into(),
                        ));
                    }
                    let img = Image::load_png(&path)?;
                    sample_from_image(&img, prep.augment.side, &prep.norm, &path.display().to_string())?
                }
                (Some(id), None) => {
                    let manifest = load_dataset(&cfg)?;
                    let record = manifest
                        .clips
                        .iter()
                        .find(|c| c.clip_id == id)
                        .ok_or_else(|| Error::Config(format!("clip '{id}' is not in the manifest")))?;
                    let data = record.load()?;
                    let engine = match model.kind() {
                        ModelKind::Teacher => Some(build_engine(&cfg.flow.engine_spec()?)?),
                        ModelKind::Student => None,
                    };
                    prepare_sample(&data, SampleMode::Eval, engine.as_deref(), &prep, &mut stream_rng(&[0]))?
                }
                (None, None) => return Err(Error::Config("pass --clip or --image".into())),
            };
            let maps = grad_cam(model, &sample, &layer, &prep.norm)?;
            for path in write_overlays(&maps, &out, alpha)? {
                println!("{}", path.display());
            }
        }
        Command::Bench {
            checkpoint,
            batch_size,
            warmup,
            iters,
            split,
            json,
        } => {
            let (model, _) = load_checked(&checkpoint, &prep)?;
            let model = model.as_dyn();
            let manifest = load_dataset(&cfg)?;
            let clips = load_split(&manifest, split, exec)?;
            let engine = match model.kind() {
                ModelKind::Teacher => Some(build_engine(&cfg.flow.engine_spec()?)?),
                ModelKind::Student => None,
            };
            let bench_cfg = BenchConfig {
                batch_size,
                n_warmup: warmup,
                n_iter: iters,
            };
            let report = bench_model(model, &clips, engine.as_deref(), &prep, &bench_cfg, exec)?;
            print!("{}", report.to_text());
            if let Some(path) = json {
                let json = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

/// Errors that point at the caller's input exit with 1; broken internal
/// invariants exit with 2.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Contract(_) | Error::NonFinite { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
