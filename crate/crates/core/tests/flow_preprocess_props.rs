//! Flow adaptation, colour encoding and synchronized augmentation checked
//! against test-side oracles.

use facepad_core::flow::{colorwheel_encode, restore_flow, AdaptRecord, FlowField, FlowNormalization};
use facepad_core::image::Image;
use facepad_core::ingest::SampleMode;
use facepad_core::preprocess::{apply_to_image, sync_augment, sync_augment_encoded, AugmentConfig, PipelineOrder, SyncAugParams};
use proptest::prelude::*;
use rand::SeedableRng;

mod common;
use common::{hsv_to_rgb, rgb_to_hsv};

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn uniform_flow_restores_exactly() {
    let rec = AdaptRecord {
        original: (160, 160),
        transposed: false,
        engine: (320, 320),
        scaled_to_byte_range: true,
    };
    let out = restore_flow(&FlowField::uniform(320, 320, 32.0, -8.0), &rec).unwrap();
    assert_eq!(out.dims(), (160, 160));
    assert!(out.u().iter().all(|&u| u == 16.0));
    assert!(out.v().iter().all(|&v| v == -4.0));

    // Portrait input went through the engine transposed.
    let rec = AdaptRecord {
        original: (200, 120),
        transposed: true,
        engine: (128, 224),
        scaled_to_byte_range: true,
    };
    let out = restore_flow(&FlowField::uniform(128, 224, 5.6, 3.2), &rec).unwrap();
    assert_eq!(out.dims(), (200, 120));
    let (eu, ev) = (3.2 * 120.0 / 128.0, 5.6 * 200.0 / 224.0);
    for (&u, &v) in out.u().iter().zip(out.v()) {
        assert!((u as f64 - eu).abs() < 1e-5 && (v as f64 - ev).abs() < 1e-5, "({u}, {v})");
    }
}

fn field() -> impl Strategy<Value = FlowField> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        (prop::collection::vec(-40.0f32..40.0, h * w), prop::collection::vec(-40.0f32..40.0, h * w))
            .prop_map(move |(u, v)| FlowField::new(h, w, u, v).unwrap())
    })
}

fn max_abs_diff(a: &Image, b: &Image) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

proptest! {
    #[test]
    fn power_of_two_scaling_is_bit_exact(f in field(), k in -6i32..=6) {
        let s = 2.0f32.powi(k);
        let scaled = f.map_vectors(|u, v| (u * s, v * s));
        let norm = FlowNormalization::PerImageMax;
        prop_assert_eq!(colorwheel_encode(&f, norm), colorwheel_encode(&scaled, norm));
    }

    #[test]
    fn arbitrary_scaling_agrees_closely(f in field(), s in 0.01f32..100.0) {
        let scaled = f.map_vectors(|u, v| (u * s, v * s));
        let norm = FlowNormalization::PerImageMax;
        let d = max_abs_diff(&colorwheel_encode(&f, norm), &colorwheel_encode(&scaled, norm));
        prop_assert!(d <= 1e-6, "max difference {}", d);
    }

    #[test]
    fn rotation_shifts_hue(f in field(), theta in 0.0f64..360.0) {
        let (c, s) = (theta.to_radians().cos(), theta.to_radians().sin());
        let rotated = f.map_vectors(|u, v| {
            let (u, v) = (u as f64, v as f64);
            ((u * c - v * s) as f32, (u * s + v * c) as f32)
        });
        let norm = FlowNormalization::PerImageMax;
        let base = colorwheel_encode(&f, norm);
        let got = colorwheel_encode(&rotated, norm);
        for (p, q) in base.data().chunks_exact(3).zip(got.data().chunks_exact(3)) {
            let (h, sat, val) = rgb_to_hsv([p[0] as f64, p[1] as f64, p[2] as f64]);
            let want = hsv_to_rgb(h + theta, sat, val);
            for k in 0..3 {
                prop_assert!((q[k] as f64 - want[k]).abs() < 1e-5, "{:?} vs {:?}", q, want);
            }
        }
    }

    #[test]
    fn duplicated_input_stays_pixel_identical(seed: u64, h in 8usize..40, w in 8usize..40, side in 4usize..24) {
        let img = Image::from_fn(h, w, 3, |y, x, c| ((y * 31 + x * 17 + c * 5) % 23) as f32 / 22.0);
        let cfg = AugmentConfig { side, max_rotation_deg: 30.0, scale_range: (0.7, 1.3), ..AugmentConfig::default() };
        let out = sync_augment_encoded(&img, &img, SampleMode::Train, &mut rng(seed), &cfg).unwrap();
        prop_assert_eq!(out.rgb, out.flow_img);
    }
}

#[test]
fn zero_flow_encodes_white() {
    for norm in [FlowNormalization::PerImageMax, FlowNormalization::FixedCap(2.5)] {
        let img = colorwheel_encode(&FlowField::zeros(7, 9), norm);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn eval_path_is_deterministic_and_idempotent() {
    let img = Image::from_fn(48, 64, 3, |y, x, c| ((y * 13 + x * 7 + c) % 19) as f32 / 18.0);
    let flow = FlowField::from_fn(48, 64, |y, x| (x as f32 * 0.1 - 3.0, y as f32 * 0.05));
    for order in [PipelineOrder::RawFlow, PipelineOrder::Encoded] {
        let cfg = AugmentConfig {
            side: 32,
            order,
            ..AugmentConfig::default()
        };
        let a = sync_augment(&img, &flow, SampleMode::Eval, &mut rng(1), &cfg).unwrap();
        let b = sync_augment(&img, &flow, SampleMode::Eval, &mut rng(2), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rgb.dims(), (32, 32));

        let p = SyncAugParams::deterministic(32, 32, 32);
        assert_eq!(apply_to_image(&a.rgb, &p), a.rgb);
        assert_eq!(apply_to_image(&a.flow_img, &p), a.flow_img);
    }
}
