use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Label;

/// Teacher logits, student logits and the ground truth for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitPair {
    pub s_t: [f64; 2],
    pub s_s: [f64; 2],
    pub y: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    pub temperature: f64,
    pub alpha: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            temperature: 3.0,
            alpha: 0.7,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("kd.temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("kd.alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

fn log_softmax(z: [f64; 2], t: f64) -> [f64; 2] {
    let a = [z[0] / t, z[1] / t];
    let m = a[0].max(a[1]);
    let lse = m + ((a[0] - m).exp() + (a[1] - m).exp()).ln();
    [a[0] - lse, a[1] - lse]
}

pub fn cross_entropy(logits: [f64; 2], y: Label) -> f64 {
    -log_softmax(logits, 1.0)[y.index()]
}

/// Batch-averaged loss with its gradient with respect to each student
/// logit pair. Teacher logits are constants.
#[derive(Debug, Clone, PartialEq)]
pub struct KdOutput {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub grad_s: Vec<[f64; 2]>,
}

/// `(1−α)·CE(y, s_S) + α·T²·KL(softmax(s_T/T) ‖ softmax(s_S/T))`, averaged
/// over the batch. The teacher distribution is the reference of the KL.
pub fn kd_loss(pairs: &[LogitPair], cfg: &KdConfig) -> Result<KdOutput> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Contract("kd_loss on an empty batch".into()));
    }
    if let Some(i) = pairs
        .iter()
        .position(|p| !(p.s_t.iter().chain(&p.s_s).all(|v| v.is_finite())))
    {
        return Err(Error::NonFinite {
            stage: format!("logits entering kd_loss (sample {i})"),
        });
    }
    let (t, a) = (cfg.temperature, cfg.alpha);
    let n = pairs.len() as f64;
    let (mut ce_sum, mut kl_sum) = (0.0, 0.0);
    let mut grad_s = Vec::with_capacity(pairs.len());
    for p in pairs {
        let y = p.y.index();
        let ls = log_softmax(p.s_s, 1.0);
        let ce = -ls[y];
        let mut g = [0.0; 2];
        for c in 0..2 {
            g[c] = (1.0 - a) * (ls[c].exp() - (c == y) as u8 as f64);
        }
        let mut kl = 0.0;
        if a > 0.0 {
            let lt = log_softmax(p.s_t, t);
            let lst = log_softmax(p.s_s, t);
            kl = (0..2).map(|c| lt[c].exp() * (lt[c] - lst[c])).sum::<f64>().max(0.0);
            for c in 0..2 {
                g[c] += a * t * (lst[c].exp() - lt[c].exp());
            }
        }
        ce_sum += ce;
        kl_sum += kl;
        grad_s.push([g[0] / n, g[1] / n]);
    }
    let (ce, kl) = (ce_sum / n, kl_sum / n);
    Ok(KdOutput {
        loss: (1.0 - a) * ce + a * t * t * kl,
        ce,
        kl,
        grad_s,
    })
}
