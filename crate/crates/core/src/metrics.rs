//! Biometric error metrics over bonafide scores.
//!
//! Bonafide is the positive class and a sample is accepted as bonafide when
//! `score >= threshold`. Hence FAR = FP / (FP + TN) counts accepted attacks
//! and FRR = FN / (FN + TP) counts rejected bonafide presentations, which
//! makes APCER and FAR (and BPCER and FRR) the same quantity.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Label;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
    pub clip_ids: Vec<String>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>, clip_ids: Vec<String>) -> Result<Self> {
        if scores.len() != labels.len() || scores.len() != clip_ids.len() {
            return Err(Error::Contract(format!(
                "score set has {} scores, {} labels and {} clip ids",
                scores.len(),
                labels.len(),
                clip_ids.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                stage: format!("score of clip '{}'", clip_ids[i]),
            });
        }
        Ok(Self {
            scores,
            labels,
            clip_ids,
        })
    }

    /// Anonymous clip ids `0..n`.
    pub fn unnamed(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::new(scores, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_bonafide(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Label::Bonafide).count()
    }

    pub fn n_attack(&self) -> usize {
        self.len() - self.n_bonafide()
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let (b, a) = (self.n_bonafide(), self.n_attack());
        if b == 0 || a == 0 {
            return Err(Error::MetricUndefined(format!(
                "need both classes, got {b} bonafide and {a} attack samples"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Attacks accepted; NaN without attacks.
    pub fn far(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// Bonafide rejected; NaN without bonafide samples.
    pub fn frr(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

pub fn confusion_at(set: &ScoreSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s >= threshold, l) {
            (true, Label::Bonafide) => c.tp += 1,
            (true, Label::Attack) => c.fp += 1,
            (false, Label::Bonafide) => c.fn_ += 1,
            (false, Label::Attack) => c.tn += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

impl RocPoint {
    pub fn tpr(&self) -> f64 {
        1.0 - self.frr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// One point per candidate threshold, ascending from −∞ to +∞.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub youden: f64,
    pub youden_threshold: f64,
}

/// Interpolates between two thresholds, falling back to the finite one
/// when the other is a sentinel.
fn lerp_threshold(a: f64, b: f64, w: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => a + w * (b - a),
        (true, false) => a,
        (false, true) => b,
        (false, false) => 0.5,
    }
}

pub fn sweep(set: &ScoreSet) -> Result<RocCurve> {
    set.require_both_classes()?;
    let n_b = set.n_bonafide();
    let n_a = set.n_attack();
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&i, &j| set.scores[i].total_cmp(&set.scores[j]));

    // Walking thresholds upward: everything below the current threshold is
    // rejected.
    let mut points = Vec::with_capacity(set.len() + 2);
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        far: 1.0,
        frr: 0.0,
    });
    let (mut rejected_b, mut rejected_a) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = set.scores[order[i]];
        points.push(RocPoint {
            threshold: s,
            far: (n_a - rejected_a) as f64 / n_a as f64,
            frr: rejected_b as f64 / n_b as f64,
        });
        while i < order.len() && set.scores[order[i]] == s {
            match set.labels[order[i]] {
                Label::Bonafide => rejected_b += 1,
                Label::Attack => rejected_a += 1,
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });

    let auc = points
        .windows(2)
        .map(|w| (w[0].far - w[1].far) * (w[0].tpr() + w[1].tpr()) / 2.0)
        .sum();

    let d = |p: &RocPoint| p.far - p.frr;
    let k = points.iter().position(|p| d(p) <= 0.0).expect("the +inf sentinel has FAR - FRR = -1");
    let (eer, eer_threshold) = if d(&points[k]) == 0.0 {
        let mut b = k;
        while b + 1 < points.len() && d(&points[b + 1]) == 0.0 {
            b += 1;
        }
        (points[k].far, lerp_threshold(points[k - 1].threshold, points[b].threshold, 0.5))
    } else {
        let (p, q) = (points[k - 1], points[k]);
        let w = d(&p) / (d(&p) - d(&q));
        (p.far + w * (q.far - p.far), lerp_threshold(p.threshold, q.threshold, w))
    };

    let (youden, youden_threshold) = points
        .iter()
        .map(|p| (1.0 - p.far - p.frr, p.threshold))
        .fold((f64::NEG_INFINITY, 0.0), |best, cur| if cur.0 > best.0 { cur } else { best });

    Ok(RocCurve {
        points,
        auc,
        eer,
        eer_threshold,
        youden,
        youden_threshold,
    })
}

/// How the operating threshold for HTER/APCER/BPCER is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ThresholdPolicy {
    /// EER threshold of the development split.
    DevEer,
    Fixed(f64),
    /// EER threshold of the evaluated split itself (optimistic).
    TestEer,
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::DevEer => f.write_str("dev-eer"),
            ThresholdPolicy::TestEer => f.write_str("test-eer"),
            ThresholdPolicy::Fixed(t) => write!(f, "fixed:{t}"),
        }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev-eer" => Ok(Self::DevEer),
            "test-eer" => Ok(Self::TestEer),
            _ => match s.strip_prefix("fixed:").map(str::parse::<f64>) {
                Some(Ok(t)) if t.is_finite() => Ok(Self::Fixed(t)),
                _ => Err(Error::Config(format!(
                    "threshold policy '{s}' is not one of dev-eer, test-eer, fixed:<value>"
                ))),
            },
        }
    }
}

impl TryFrom<String> for ThresholdPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ThresholdPolicy> for String {
    fn from(p: ThresholdPolicy) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub hter: f64,
}

pub fn resolve_threshold(set: &ScoreSet, policy: ThresholdPolicy, dev: Option<&ScoreSet>) -> Result<f64> {
    match policy {
        ThresholdPolicy::Fixed(t) => Ok(t),
        ThresholdPolicy::TestEer => Ok(sweep(set)?.eer_threshold),
        ThresholdPolicy::DevEer => {
            let dev = dev.ok_or_else(|| Error::Config("threshold policy dev-eer needs development scores".into()))?;
            Ok(sweep(dev)?.eer_threshold)
        }
    }
}

pub fn hter_at(set: &ScoreSet, policy: ThresholdPolicy, dev: Option<&ScoreSet>) -> Result<OperatingPoint> {
    set.require_both_classes()?;
    let threshold = resolve_threshold(set, policy, dev)?;
    let c = confusion_at(set, threshold);
    let (far, frr) = (c.far(), c.frr());
    Ok(OperatingPoint {
        threshold,
        far,
        frr,
        hter: (far + frr) / 2.0,
    })
}

pub fn apcer_bpcer(set: &ScoreSet, threshold: f64) -> Result<(f64, f64)> {
    set.require_both_classes()?;
    let c = confusion_at(set, threshold);
    Ok((c.far(), c.frr()))
}

pub fn acer(apcer: f64, bpcer: f64) -> f64 {
    (apcer + bpcer) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub model: String,
    /// Flow engine constructed for this evaluation, or "none".
    pub engine: String,
    pub n_samples: usize,
    pub n_bonafide: usize,
    pub n_attack: usize,
    pub threshold_policy: String,
    pub threshold: f64,
    pub accuracy: f64,
    pub auc_roc: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub hter: f64,
    pub far: f64,
    pub frr: f64,
    pub youden: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
}

impl EvalReport {
    pub fn compute(
        set: &ScoreSet,
        policy: ThresholdPolicy,
        dev: Option<&ScoreSet>,
        split: &str,
        model: &str,
        engine: &str,
    ) -> Result<Self> {
        let roc = sweep(set)?;
        let op = hter_at(set, policy, dev)?;
        let (apcer, bpcer) = apcer_bpcer(set, op.threshold)?;
        Ok(Self {
            split: split.into(),
            model: model.into(),
            engine: engine.into(),
            n_samples: set.len(),
            n_bonafide: set.n_bonafide(),
            n_attack: set.n_attack(),
            threshold_policy: policy.to_string(),
            threshold: op.threshold,
            accuracy: confusion_at(set, op.threshold).accuracy(),
            auc_roc: roc.auc,
            eer: roc.eer,
            eer_threshold: roc.eer_threshold,
            hter: op.hter,
            far: op.far,
            frr: op.frr,
            youden: roc.youden,
            apcer,
            bpcer,
            acer: acer(apcer, bpcer),
        })
    }

    pub fn to_text(&self) -> String {
        let json = serde_json::to_value(self).expect("report serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = json {
            for (k, v) in map {
                match v {
                    serde_json::Value::String(s) => out.push_str(&format!("{k}: {s}\n")),
                    other => out.push_str(&format!("{k}: {other}\n")),
                }
            }
        }
        out
    }

    pub fn write(&self, json_path: &Path, text_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(text_path, self.to_text()).map_err(|e| Error::io(text_path, e))
    }
}

/// `x` rounded to nine significant digits, without exponent notation.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn write_scores(path: &Path, set: &ScoreSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Format(format!("writing {}: {e}", path.display()));
    w.write_record(["clip_id", "label", "score"]).map_err(io)?;
    for ((id, l), s) in set.clip_ids.iter().zip(&set.labels).zip(&set.scores) {
        w.write_record([id.as_str(), &l.index().to_string(), &format_significant(*s, 9)])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (mut ids, mut labels, mut scores) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let bad = || Error::Format(format!("{} row {}: expected clip_id,label,score", path.display(), line + 2));
        if rec.len() != 3 {
            return Err(bad());
        }
        ids.push(rec[0].to_string());
        labels.push(Label::from_index(rec[1].parse().map_err(|_| bad())?)?);
        scores.push(rec[2].parse().map_err(|_| bad())?);
    }
    ScoreSet::new(scores, labels, ids)
}

pub fn write_roc(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(f, "threshold,far,frr,tpr").map_err(io)?;
    for p in &roc.points {
        writeln!(f, "{},{},{},{}", p.threshold, p.far, p.frr, p.tpr()).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Attack as A, Bonafide as B};

    fn set(scores: &[f64], labels: &[Label]) -> ScoreSet {
        ScoreSet::unnamed(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn confusion_by_hand() {
        let s = set(&[0.9, 0.2, 0.6], &[B, A, A]);
        assert_eq!(confusion_at(&s, 0.5), Confusion { tp: 1, tn: 1, fp: 1, fn_: 0 });
        let all = confusion_at(&s, 0.0);
        assert_eq!((all.fn_, all.tn), (0, 0));
        let none = confusion_at(&s, 1.0 + 1e-9);
        assert_eq!((none.tp, none.fp), (0, 0));
    }

    #[test]
    fn separated_scores() {
        let s = set(&[0.1, 0.2, 0.8, 0.9], &[A, A, B, B]);
        let r = sweep(&s).unwrap();
        assert_eq!((r.auc, r.eer, r.youden), (1.0, 0.0, 1.0));
        assert!(r.eer_threshold > 0.2 && r.eer_threshold <= 0.8);
        let op = hter_at(&s, ThresholdPolicy::TestEer, None).unwrap();
        assert_eq!(op.hter, 0.0);
    }

    #[test]
    fn eer_interpolates_between_thresholds() {
        // one attack above one bonafide: FAR and FRR cross mid-step
        let s = set(&[0.1, 0.4, 0.6, 0.9], &[A, B, A, B]);
        let r = sweep(&s).unwrap();
        assert!((r.eer - 0.5).abs() < 1e-12);
        assert_eq!(r.auc, 0.75);
    }

    #[test]
    fn dev_threshold_applied_to_test() {
        let dev = set(&[0.4, 0.45, 0.55, 0.6], &[A, A, B, B]);
        assert_eq!(sweep(&dev).unwrap().eer_threshold, 0.5);
        let mut scores = vec![0.1; 10];
        scores[0] = 0.7;
        scores.extend([0.9; 10]);
        let labels: Vec<Label> = [vec![A; 10], vec![B; 10]].concat();
        let test = set(&scores, &labels);
        let op = hter_at(&test, ThresholdPolicy::DevEer, Some(&dev)).unwrap();
        assert_eq!((op.far, op.frr), (0.1, 0.0));
        assert!((op.hter - 0.05).abs() < 1e-15);
        assert!(matches!(
            hter_at(&test, ThresholdPolicy::DevEer, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_class_is_undefined() {
        let s = set(&[0.1, 0.2], &[A, A]);
        assert!(matches!(sweep(&s), Err(Error::MetricUndefined(_))));
        assert!(matches!(apcer_bpcer(&s, 0.5), Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn policy_strings() {
        for p in ["dev-eer", "test-eer", "fixed:0.25"] {
            assert_eq!(p.parse::<ThresholdPolicy>().unwrap().to_string(), p);
        }
        assert!("fixed:x".parse::<ThresholdPolicy>().is_err());
    }

    #[test]
    fn report_identities() {
        let s = set(&[0.1, 0.3, 0.35, 0.7, 0.8, 0.2], &[A, A, B, B, B, A]);
        let r = EvalReport::compute(&s, ThresholdPolicy::Fixed(0.32), None, "test", "student", "none").unwrap();
        assert_eq!(r.hter, (r.far + r.frr) / 2.0);
        assert_eq!(r.acer, (r.apcer + r.bpcer) / 2.0);
        assert_eq!((r.apcer, r.bpcer), (r.far, r.frr));
        assert!(r.to_text().contains("engine: none"));
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.123456789123, 9), "0.123456789");
        assert_eq!(format_significant(1.0, 9), "1.00000000");
        assert_eq!(format_significant(0.000123456789123, 9), "0.000123456789");
    }

    #[test]
    fn score_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let s = ScoreSet::new(vec![0.25, 0.5], vec![A, B], vec!["x".into(), "y".into()]).unwrap();
        write_scores(&p, &s).unwrap();
        assert_eq!(read_scores(&p).unwrap(), s);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("clip_id,label,score\nx,0,0.250000000\n"), "{text}");
    }
}
