//! HSV colorwheel encoding of flow: direction → hue, magnitude → saturation,
//! value fixed at 1, so zero motion is white.

use serde::{Deserialize, Serialize};

use super::FlowField;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlowNormalization {
    /// Saturation = magnitude / largest magnitude in the field.
    PerImageMax,
    /// Saturation = magnitude / cap, clipped at 1.
    FixedCap(f32),
}

impl std::str::FromStr for FlowNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "per-image-max" {
            return Ok(FlowNormalization::PerImageMax);
        }
        if let Some(c) = s.strip_prefix("fixed-cap:") {
            let cap: f32 = c
                .parse()
                .map_err(|_| Error::Config(format!("bad fixed cap '{c}'")))?;
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(Error::Config("fixed cap must be positive".into()));
            }
            return Ok(FlowNormalization::FixedCap(cap));
        }
        Err(Error::Config(format!(
            "unknown flow normalization '{s}' (expected per-image-max or fixed-cap:<c>)"
        )))
    }
}

impl std::fmt::Display for FlowNormalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowNormalization::PerImageMax => f.write_str("per-image-max"),
            FlowNormalization::FixedCap(c) => write!(f, "fixed-cap:{c}"),
        }
    }
}

/// Standard HSV → RGB with hue in degrees.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let c = val * sat;
    let h = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// Hue of a flow vector in [0°, 360°).
pub fn flow_hue(u: f64, v: f64) -> f64 {
    let h = v.atan2(u).to_degrees();
    let h = if h < 0.0 { h + 360.0 } else { h };
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Encodes `flow` as an H×W×3 image in [0,1].
///
/// Vectors are first divided by the largest absolute component, so scaling
/// the whole field by a power of two leaves every intermediate value, and
/// therefore the output, bit-identical under per-image-max normalization.
pub fn colorwheel_encode(flow: &FlowField, norm: FlowNormalization) -> Image {
    let (h, w) = flow.dims();
    let mut out = Image::new(h, w, 3);
    let component_max = flow
        .u()
        .iter()
        .chain(flow.v())
        .fold(0.0f32, |m, x| m.max(x.abs())) as f64;
    if component_max == 0.0 {
        out.data_mut().fill(1.0);
        return out;
    }
    let unit: Vec<(f64, f64)> = flow
        .u()
        .iter()
        .zip(flow.v())
        .map(|(&u, &v)| (u as f64 / component_max, v as f64 / component_max))
        .collect();
    let divisor = match norm {
        FlowNormalization::PerImageMax => unit.iter().map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max),
        FlowNormalization::FixedCap(c) => c as f64 / component_max,
    };
    for (px, &(a, b)) in out.data_mut().chunks_exact_mut(3).zip(&unit) {
        let sat = (a.hypot(b) / divisor).clamp(0.0, 1.0);
        let rgb = hsv_to_rgb(flow_hue(a, b), sat, 1.0);
        for (o, c) in px.iter_mut().zip(rgb) {
            *o = c as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_flow_is_white() {
        for norm in [FlowNormalization::PerImageMax, FlowNormalization::FixedCap(3.0)] {
            let img = colorwheel_encode(&FlowField::zeros(4, 5), norm);
            assert!(img.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn rightward_flow_is_pure_red() {
        let img = colorwheel_encode(&FlowField::uniform(3, 3, 1.0, 0.0), FlowNormalization::PerImageMax);
        for px in img.data().chunks_exact(3) {
            assert_eq!(px, [1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn primary_hues() {
        let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(hsv_to_rgb(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]));
        assert!(close(hsv_to_rgb(240.0, 1.0, 1.0), [0.0, 0.0, 1.0]));
        assert!(close(hsv_to_rgb(60.0, 0.5, 1.0), [1.0, 1.0, 0.5]));
        assert!(close(hsv_to_rgb(360.0, 1.0, 1.0), [1.0, 0.0, 0.0]));
    }

    #[test]
    fn fixed_cap_clips_saturation() {
        let f = FlowField::new(1, 2, vec![1.0, 10.0], vec![0.0, 0.0]).unwrap();
        let img = colorwheel_encode(&f, FlowNormalization::FixedCap(2.0));
        // magnitude 1 at cap 2 → saturation 0.5 → (1, 0.5, 0.5)
        assert_eq!(&img.data()[0..3], &[1.0, 0.5, 0.5]);
        assert_eq!(&img.data()[3..6], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalization_parses() {
        assert_eq!("per-image-max".parse::<FlowNormalization>().unwrap(), FlowNormalization::PerImageMax);
        assert_eq!(
            "fixed-cap:4.5".parse::<FlowNormalization>().unwrap(),
            FlowNormalization::FixedCap(4.5)
        );
        assert!("fixed-cap:-1".parse::<FlowNormalization>().is_err());
        assert!("log".parse::<FlowNormalization>().is_err());
    }
}
