use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, kd_loss, KdConfig, LogitPair};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::flow::FlowEngine;
use crate::ingest::{load_split, ClipData, DatasetManifest, Label, SampleMode, Split};
use crate::metrics::{hter_at, ScoreSet, ThresholdPolicy};
use crate::models::{ModelKind, PadModel, StudentModel, TeacherModel};
use crate::nn::{Adam, AdamConfig};
use crate::pipeline::{prepare_eval, prepare_sample, score_samples, Preprocessing};
use crate::preprocess::SamplePair;
use crate::seed::stream_rng;

const SHUFFLE_STREAM: u64 = 0x5f;
const SAMPLE_STREAM: u64 = 0x5a;
const DROPOUT_STREAM: u64 = 0xd0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size_train: usize,
    pub batch_size_eval: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Set per run from the experiment's seed list.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size_train: 16,
            batch_size_eval: 256,
            max_epochs: 100,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("train.learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, v) in [
            ("batch_size_train", self.batch_size_train),
            ("batch_size_eval", self.batch_size_eval),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Decoded train and dev clips, kept in memory for the whole run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<ClipData>,
    pub dev: Vec<ClipData>,
}

impl TrainData {
    pub fn load(manifest: &DatasetManifest, exec: Exec) -> Result<Self> {
        let train = load_split(manifest, Split::Train, exec)?;
        let dev = load_split(manifest, Split::Dev, exec)?;
        if train.is_empty() {
            return Err(Error::Config("the manifest has no train clips".into()));
        }
        if dev.is_empty() {
            return Err(Error::Config(
                "the manifest has no dev clips; early stopping needs a dev split".into(),
            ));
        }
        Ok(Self { train, dev })
    }
}

pub struct FitContext<'a> {
    pub data: &'a TrainData,
    /// Required whenever a teacher is trained or queried.
    pub engine: Option<&'a dyn FlowEngine>,
    pub prep: &'a Preprocessing,
    pub exec: Exec,
}

/// Patience counted in epochs since the best one. Improvement is judged on
/// the dev metric (lower is better) with dev loss breaking exact ties.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None }
    }

    /// Records an epoch; returns true if it is the new best.
    pub fn observe(&mut self, epoch: usize, metric: f64, loss: f64) -> bool {
        let better = match self.best {
            None => true,
            Some((_, m, l)) => metric < m || (metric == m && loss < l),
        };
        if better {
            self.best = Some((epoch, metric, loss));
        }
        better
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|b| b.0)
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(b, _, _)| epoch >= b + self.patience)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// Argmax accuracy.
    pub accuracy: f64,
    /// Dev HTER at the dev EER threshold; absent for train records.
    pub hter: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub model: ModelKind,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    /// "hter" or, when dev lacks a class, "1-accuracy".
    pub dev_metric: String,
}

impl TrainingLog {
    pub fn record(&self, epoch: usize, split: &str) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == epoch && r.split == split)
    }

    /// One JSON object per line, then a closing summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "event": "stop",
            "model": self.model,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "early_stopped": self.early_stopped,
            "dev_metric": self.dev_metric,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

pub fn train_teacher(model: &mut TeacherModel, ctx: &FitContext<'_>, cfg: &TrainConfig) -> Result<TrainingLog> {
    let ce_only = KdConfig {
        temperature: 1.0,
        alpha: 0.0,
    };
    fit(model, None, &ce_only, ctx, cfg)
}

/// Trains `student` on RGB only against the frozen `teacher`.
pub fn distill_student(
    student: &mut StudentModel,
    teacher: &TeacherModel,
    kd: &KdConfig,
    ctx: &FitContext<'_>,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    fit(student, Some(teacher), kd, ctx, cfg)
}

/// Plain cross-entropy training of the student, with no teacher.
pub fn train_student_supervised(student: &mut StudentModel, ctx: &FitContext<'_>, cfg: &TrainConfig) -> Result<TrainingLog> {
    let ce_only = KdConfig {
        temperature: 1.0,
        alpha: 0.0,
    };
    fit(student, None, &ce_only, ctx, cfg)
}

struct DevOutcome {
    loss: f64,
    accuracy: f64,
    hter: Option<f64>,
}

fn argmax_correct(logits: [f32; 2], y: Label) -> bool {
    let pred = if logits[1] >= logits[0] { Label::Bonafide } else { Label::Attack };
    pred == y
}

fn evaluate_dev(model: &dyn PadModel, dev: &[SamplePair], cfg: &TrainConfig, exec: Exec) -> Result<DevOutcome> {
    let (set, logits): (ScoreSet, _) = score_samples(model, dev, cfg.batch_size_eval, exec)?;
    let n = dev.len() as f64;
    let loss = logits
        .iter()
        .zip(&set.labels)
        .map(|(l, &y)| cross_entropy([l[0] as f64, l[1] as f64], y))
        .sum::<f64>()
        / n;
    let correct = logits.iter().zip(&set.labels).filter(|(l, y)| argmax_correct(**l, **y)).count();
    let hter = match set.require_both_classes() {
        Ok(()) => Some(hter_at(&set, ThresholdPolicy::TestEer, None)?.hter),
        Err(_) => None,
    };
    Ok(DevOutcome {
        loss,
        accuracy: correct as f64 / n,
        hter,
    })
}

fn fit<M: PadModel>(
    model: &mut M,
    teacher: Option<&TeacherModel>,
    kd: &KdConfig,
    ctx: &FitContext<'_>,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    kd.validate()?;
    let needs_flow = model.kind() == ModelKind::Teacher || teacher.is_some();
    let engine = match (needs_flow, ctx.engine) {
        (true, None) => return Err(Error::Config("training with a teacher requires a flow engine".into())),
        (true, e) => e,
        (false, _) => None,
    };
    let exec = ctx.exec;
    let train = &ctx.data.train;
    let dev = prepare_eval(&ctx.data.dev, if model.kind() == ModelKind::Teacher { engine } else { None }, ctx.prep, exec)?;
    let n_params = model.network().params().len();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.learning_rate), n_params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_values = model.network().params().values().to_vec();
    let mut records = Vec::new();
    let mut dev_metric = "hter";
    let mut stopped_epoch = 0;
    let mut early_stopped = false;
    let start = Instant::now();
    let seed = cfg.seed;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(&[seed, SHUFFLE_STREAM, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);

        for (step, batch) in order.chunks(cfg.batch_size_train).enumerate() {
            let samples = exec.try_map(batch, |&i| {
                let mut rng = stream_rng(&[seed, SAMPLE_STREAM, epoch as u64, i as u64]);
                prepare_sample(&train[i], SampleMode::Train, engine, ctx.prep, &mut rng)
            })?;
            let side = samples[0].side;
            let net = model.network();
            let traces = exec.try_map_range(samples.len(), |k| {
                let mut rng = stream_rng(&[seed, DROPOUT_STREAM, epoch as u64, step as u64, k as u64]);
                net.forward_sample(&model.inputs(&samples[k]), side, Some(&mut rng))
            })?;
            let teacher_logits = match teacher {
                Some(t) if kd.alpha > 0.0 => {
                    let inputs: Vec<Vec<&[f32]>> = samples.iter().map(|s| t.inputs(s)).collect();
                    Some(t.network().logits(&inputs, side, exec)?)
                }
                _ => None,
            };
            let pairs: Vec<LogitPair> = traces
                .iter()
                .enumerate()
                .map(|(k, tr)| {
                    let s_s = tr.logits.map(f64::from);
                    LogitPair {
                        s_t: teacher_logits.as_ref().map_or(s_s, |tl| tl[k].map(f64::from)),
                        s_s,
                        y: samples[k].label,
                    }
                })
                .collect();
            let out = kd_loss(&pairs, kd)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("training loss at epoch {epoch}, step {step}"),
                });
            }
            loss_sum += out.loss * batch.len() as f64;
            correct += traces
                .iter()
                .zip(&samples)
                .filter(|(tr, s)| argmax_correct(tr.logits, s.label))
                .count();

            let per_sample = exec.map_range(traces.len(), |k| {
                let mut g = vec![0.0f32; n_params];
                let d = out.grad_s[k];
                net.backward_sample(&traces[k], [d[0] as f32, d[1] as f32], &mut g, None);
                g
            });
            let mut grads = vec![0.0f32; n_params];
            for g in &per_sample {
                grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            adam.step(model.network_mut().params_mut().values_mut(), &grads);
        }

        let elapsed = start.elapsed().as_secs_f64();
        let train_loss = loss_sum / train.len() as f64;
        records.push(EpochRecord {
            epoch,
            split: "train".into(),
            loss: train_loss,
            accuracy: correct as f64 / train.len() as f64,
            hter: None,
            wall_time_s: elapsed,
        });
        let d = evaluate_dev(model, &dev, cfg, exec)?;
        let metric = match d.hter {
            Some(h) => h,
            None => {
                dev_metric = "1-accuracy";
                1.0 - d.accuracy
            }
        };
        records.push(EpochRecord {
            epoch,
            split: "dev".into(),
            loss: d.loss,
            accuracy: d.accuracy,
            hter: d.hter,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        log::info!(
            "{} epoch {epoch}: train loss {train_loss:.4}, dev loss {:.4}, dev acc {:.4}, dev {dev_metric} {:.4}",
            model.kind(),
            d.loss,
            d.accuracy,
            metric
        );
        if stopper.observe(epoch, metric, d.loss) {
            best_values.copy_from_slice(model.network().params().values());
        }
        stopped_epoch = epoch;
        if stopper.should_stop(epoch) {
            early_stopped = true;
            break;
        }
    }

    model.network_mut().params_mut().values_mut().copy_from_slice(&best_values);
    Ok(TrainingLog {
        model: model.kind(),
        records,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        stopped_epoch,
        early_stopped,
        dev_metric: dev_metric.into(),
    })
}
