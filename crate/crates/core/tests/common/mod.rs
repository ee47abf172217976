//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use facepad_core::ingest::Label;
use facepad_core::metrics::ScoreSet;

pub fn score_set(scores: &[f64], labels: &[u8]) -> ScoreSet {
    let labels = labels
        .iter()
        .map(|&l| if l == 1 { Label::Bonafide } else { Label::Attack })
        .collect();
    ScoreSet::unnamed(scores.to_vec(), labels).unwrap()
}

/// Probability that a random bonafide outscores a random attack, ties
/// counted half.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

pub fn rates_at(scores: &[f64], labels: &[u8], tau: f64) -> (f64, f64) {
    let (mut fp, mut neg, mut fn_, mut pos) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 1 {
            pos += 1.0;
            if s < tau {
                fn_ += 1.0;
            }
        } else {
            neg += 1.0;
            if s >= tau {
                fp += 1.0;
            }
        }
    }
    (fp / neg, fn_ / pos)
}

/// Evaluates every one of the 2·m+1 threshold intervals (m unique scores),
/// then returns the FAR at each place the FAR = FRR line is crossed.
pub fn brute_force_eer(scores: &[f64], labels: &[u8]) -> Vec<f64> {
    let mut u = scores.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut taus = vec![u[0] - 1.0];
    for (i, &x) in u.iter().enumerate() {
        taus.push(x);
        taus.push(u.get(i + 1).map_or(x + 1.0, |&y| (x + y) / 2.0));
    }
    let pts: Vec<(f64, f64)> = taus.iter().map(|&t| rates_at(scores, labels, t)).collect();
    let mut out = Vec::new();
    for w in pts.windows(2) {
        let (d0, d1) = (w[0].0 - w[0].1, w[1].0 - w[1].1);
        if d0 == 0.0 {
            out.push(w[0].0);
        } else if d0 > 0.0 && d1 < 0.0 {
            let t = d0 / (d0 - d1);
            out.push(w[0].0 + t * (w[1].0 - w[0].0));
        }
    }
    out
}

/// RGB → HSV, hue in degrees.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h, if max == 0.0 { 0.0 } else { d / max }, max)
}

/// HSV → RGB via the k-offset formulation.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h / 60.0).rem_euclid(6.0);
        v - v * s * k.min(4.0 - k).clamp(0.0, 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}
