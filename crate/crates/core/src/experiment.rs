//! Multi-seed experiment runner and its on-disk layout:
//!
//! ```text
//! <runs_dir>/<config_hash>/
//!     config.toml
//!     mean_report.json
//!     <seed>/
//!         config.toml
//!         teacher.ckpt  teacher_log.jsonl
//!         student.ckpt  student_log.jsonl
//!         scores_<model>_<split>.csv  roc_<model>_<split>.csv
//!         report_<model>_<split>.json  report_<model>_<split>.txt
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::distill::{distill_student, train_teacher, FitContext, TrainData, TrainingLog};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flow::{build_engine, FlowEngine};
use crate::ingest::{load_manifest, load_split, DatasetManifest, Split};
use crate::metrics::{sweep, write_roc, write_scores, EvalReport, ScoreSet, ThresholdPolicy};
use crate::models::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedModel, ModelKind, PadModel, StudentModel, TeacherModel};
use crate::pipeline::{score_clips, Preprocessing};

pub const CONFIG_FILE: &str = "config.toml";
pub const MEAN_REPORT_FILE: &str = "mean_report.json";

pub fn checkpoint_file(kind: ModelKind) -> String {
    format!("{kind}.ckpt")
}

pub fn log_file(kind: ModelKind) -> String {
    format!("{kind}_log.jsonl")
}

/// Directory of one configuration's runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(runs_dir: &Path, cfg: &ExperimentConfig) -> Self {
        Self {
            root: runs_dir.join(cfg.hash()),
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(seed.to_string())
    }

    /// Creates the directory tree and writes the resolved config at the top
    /// level and into every seed directory.
    pub fn prepare(&self, cfg: &ExperimentConfig) -> Result<()> {
        let text = cfg.to_toml();
        let mut dirs = vec![self.root.clone()];
        dirs.extend(cfg.seeds.iter().map(|&s| self.seed_dir(s)));
        for dir in dirs {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(CONFIG_FILE);
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    load_manifest(&cfg.dataset.manifest)
}

fn checkpoint_meta(cfg: &ExperimentConfig, prep: &Preprocessing, kind: ModelKind, log: &TrainingLog) -> CheckpointMeta {
    CheckpointMeta {
        kind,
        arch: cfg.model.clone(),
        side: prep.augment.side,
        norm: prep.norm,
        flow_normalization: cfg.flow.normalization.clone(),
        pipeline: cfg.flow.pipeline,
        class_index: CheckpointMeta::class_index_default(),
        epoch: Some(log.best_epoch),
        config: serde_json::to_value(cfg).expect("config serializes"),
    }
}

/// Loads a checkpoint and checks that its preprocessing matches `prep`.
pub fn load_checked(path: &Path, prep: &Preprocessing) -> Result<(LoadedModel, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(path)?;
    meta.check_preprocessing(prep.augment.side, &prep.norm)?;
    Ok((model, meta))
}

/// Trains one teacher per seed; returns the checkpoint paths.
pub fn run_train_teacher(cfg: &ExperimentConfig, runs_dir: &Path, exec: Exec) -> Result<Vec<PathBuf>> {
    let layout = RunLayout::new(runs_dir, cfg);
    let manifest = load_dataset(cfg)?;
    let data = TrainData::load(&manifest, exec)?;
    let prep = cfg.preprocessing()?;
    let engine = build_engine(&cfg.flow.engine_spec()?)?;
    layout.prepare(cfg)?;
    let ctx = FitContext {
        data: &data,
        engine: Some(engine.as_ref()),
        prep: &prep,
        exec,
    };
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let dir = layout.seed_dir(seed);
        log::info!("teacher seed {seed} -> {}", dir.display());
        let mut teacher = TeacherModel::new(&cfg.model, seed)?;
        let log = train_teacher(&mut teacher, &ctx, &cfg.train_for_seed(seed))?;
        log.write(&dir.join(log_file(ModelKind::Teacher)))?;
        let path = dir.join(checkpoint_file(ModelKind::Teacher));
        save_checkpoint(&path, &teacher, checkpoint_meta(cfg, &prep, ModelKind::Teacher, &log))?;
        out.push(path);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub split: String,
    pub threshold_policy: String,
    /// Model name → metric name → mean over seeds.
    pub means: BTreeMap<String, BTreeMap<String, f64>>,
}

const MEAN_FIELDS: [&str; 11] = [
    "accuracy", "auc_roc", "eer", "hter", "far", "frr", "youden", "apcer", "bpcer", "acer", "threshold",
];

impl MeanReport {
    pub fn from_reports(config_hash: &str, seeds: &[u64], reports: &[EvalReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Contract("mean report needs at least one report".into()))?;
        let mut grouped: BTreeMap<String, Vec<serde_json::Value>> = BTreeMap::new();
        for r in reports {
            grouped
                .entry(r.model.clone())
                .or_default()
                .push(serde_json::to_value(r).expect("report serializes"));
        }
        let means = grouped
            .into_iter()
            .map(|(model, vals)| {
                let m = MEAN_FIELDS
                    .iter()
                    .map(|&f| {
                        let sum: f64 = vals.iter().filter_map(|v| v[f].as_f64()).sum();
                        (f.to_string(), sum / vals.len() as f64)
                    })
                    .collect();
                (model, m)
            })
            .collect();
        Ok(Self {
            config_hash: config_hash.to_string(),
            seeds: seeds.to_vec(),
            split: first.split.clone(),
            threshold_policy: first.threshold_policy.clone(),
            means,
        })
    }
}

/// Scores and reports for one model on one split.
pub struct Evaluation {
    pub report: EvalReport,
    pub scores: ScoreSet,
}

/// Evaluates `model` on `split` of `manifest`. Teachers get `engine`;
/// students are scored with no flow engine and say so in the report. The
/// dev split is scored too when the policy needs it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    model: &dyn PadModel,
    manifest: &DatasetManifest,
    split: Split,
    policy: ThresholdPolicy,
    engine: Option<&dyn FlowEngine>,
    prep: &Preprocessing,
    batch: usize,
    exec: Exec,
) -> Result<Evaluation> {
    let engine = match model.kind() {
        ModelKind::Teacher => Some(engine.ok_or_else(|| Error::Config("evaluating a teacher requires a flow engine".into()))?),
        ModelKind::Student => None,
    };
    let clips = load_split(manifest, split, exec)?;
    let scores = score_clips(model, &clips, engine, prep, batch, exec)?;
    let dev = match (policy, split) {
        (ThresholdPolicy::DevEer, Split::Dev) => Some(scores.clone()),
        (ThresholdPolicy::DevEer, _) => {
            let dev_clips = load_split(manifest, Split::Dev, exec)?;
            Some(score_clips(model, &dev_clips, engine, prep, batch, exec)?)
        }
        _ => None,
    };
    let engine_name = engine.map_or("none".to_string(), |e| e.name().to_string());
    let report = EvalReport::compute(
        &scores,
        policy,
        dev.as_ref(),
        split.as_str(),
        &model.kind().to_string(),
        &engine_name,
    )?;
    Ok(Evaluation { report, scores })
}

/// Writes `scores_*.csv`, `roc_*.csv` and `report_*.{json,txt}` into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tag = format!("{}_{}", eval.report.model, eval.report.split);
    write_scores(&dir.join(format!("scores_{tag}.csv")), &eval.scores)?;
    write_roc(&dir.join(format!("roc_{tag}.csv")), &sweep(&eval.scores)?)?;
    eval.report.write(
        &dir.join(format!("report_{tag}.json")),
        &dir.join(format!("report_{tag}.txt")),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub seed_dirs: Vec<PathBuf>,
    pub reports: Vec<EvalReport>,
    pub mean_report: PathBuf,
}

/// Distills one student per seed, then evaluates teacher and student on
/// the test split. `teacher` overrides the per-seed teacher checkpoint.
pub fn run_distill(cfg: &ExperimentConfig, runs_dir: &Path, teacher: Option<&Path>, exec: Exec) -> Result<DistillOutcome> {
    let layout = RunLayout::new(runs_dir, cfg);
    let manifest = load_dataset(cfg)?;
    let data = TrainData::load(&manifest, exec)?;
    let prep = cfg.preprocessing()?;
    let engine = build_engine(&cfg.flow.engine_spec()?)?;
    layout.prepare(cfg)?;
    let ctx = FitContext {
        data: &data,
        engine: Some(engine.as_ref()),
        prep: &prep,
        exec,
    };
    let policy = cfg.eval.threshold_policy;
    let batch = cfg.train.batch_size_eval;
    let mut seed_dirs = Vec::new();
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let dir = layout.seed_dir(seed);
        let teacher_path = teacher.map_or_else(|| dir.join(checkpoint_file(ModelKind::Teacher)), Path::to_path_buf);
        let teacher = match load_checked(&teacher_path, &prep)?.0 {
            LoadedModel::Teacher(t) => t,
            LoadedModel::Student(_) => {
                return Err(Error::Config(format!("{} holds a student, not a teacher", teacher_path.display())));
            }
        };
        log::info!("student seed {seed} -> {}", dir.display());
        let mut student = StudentModel::new(&cfg.model, seed)?;
        let log = distill_student(&mut student, &teacher, &cfg.kd, &ctx, &cfg.train_for_seed(seed))?;
        log.write(&dir.join(log_file(ModelKind::Student)))?;
        save_checkpoint(
            &dir.join(checkpoint_file(ModelKind::Student)),
            &student,
            checkpoint_meta(cfg, &prep, ModelKind::Student, &log),
        )?;
        for model in [&teacher as &dyn PadModel, &student] {
            let eval = evaluate_model(model, &manifest, Split::Test, policy, Some(engine.as_ref()), &prep, batch, exec)?;
            write_evaluation(&dir, &eval)?;
            reports.push(eval.report);
        }
        seed_dirs.push(dir);
    }
    let mean = MeanReport::from_reports(&cfg.hash(), &cfg.seeds, &reports)?;
    let mean_path = layout.root.join(MEAN_REPORT_FILE);
    let json = serde_json::to_string_pretty(&mean).expect("mean report serializes");
    std::fs::write(&mean_path, json).map_err(|e| Error::io(&mean_path, e))?;
    Ok(DistillOutcome {
        seed_dirs,
        reports,
        mean_report: mean_path,
    })
}
