#![allow(clippy::field_reassign_with_default)]

use super::*;
use crate::gram::normalized_determinant;
use crate::inference::{iou, step, Source};
use crate::space::{batch_cross_correlate, cross_correlate};
use image::Rgb;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Flat gray canvas with a random blocky texture pasted at `(x, y)`.
fn scene(w: u32, h: u32, tex: &RgbImage, x: i64, y: i64) -> RgbImage {
    let mut img = RgbImage::from_pixel(w, h, Rgb([128, 128, 128]));
    for ty in 0..tex.height() {
        for tx in 0..tex.width() {
            let (px, py) = (x + tx as i64, y + ty as i64);
            if px >= 0 && py >= 0 && (px as u32) < w && (py as u32) < h {
                img.put_pixel(px as u32, py as u32, *tex.get_pixel(tx, ty));
            }
        }
    }
    img
}

fn texture(side: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = side.div_ceil(4) as usize;
    let vals: Vec<u8> = (0..blocks * blocks).map(|_| rng.gen_range(0..=255)).collect();
    RgbImage::from_fn(side, side, |x, y| {
        let v = vals[(y / 4) as usize * blocks + (x / 4) as usize];
        Rgb([v, v.wrapping_add(40), 255 - v])
    })
}

fn ncc() -> Encoder {
    Encoder::Ncc(NccEncoder::new(4).unwrap())
}

fn geometry(wi: f64) -> SearchGeometry {
    SearchGeometry {
        center: (100.0, 80.0),
        previous_size: (20.0, 30.0),
        scales: vec![0.96, 1.0, 1.04],
        cell_px: 4.0,
        window_influence: wi,
        scale_penalty: 0.97,
    }
}

fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

#[test]
fn config_validation() {
    TrackerConfig::default().validate().unwrap();
    TrackerConfig::baseline().validate().unwrap();
    let mut c = TrackerConfig::default();
    c.search.scales = vec![0.9, 1.1];
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = TrackerConfig::default();
    c.encoder.template_size = 160;
    assert!(c.validate().is_err());
    let mut c = TrackerConfig::default();
    c.search.context_factor = 3.0;
    assert!(c.validate().is_err());
    let mut c = TrackerConfig::default();
    c.th_iou = 1.5;
    assert!(c.validate().is_err());
    let mut c = TrackerConfig::default();
    c.dilation = 0;
    assert!(c.validate().is_err());
}

#[test]
fn config_json_round_trip() {
    let c = TrackerConfig::default();
    let text = serde_json::to_string(&c).unwrap();
    assert!(text.contains("\"mode\":\"dynamic\""));
    assert_eq!(serde_json::from_str::<TrackerConfig>(&text).unwrap(), c);
}

#[test]
fn locate_peak_examples() {
    let g = geometry(0.2);
    let mut v = vec![0.0; 25];
    v[12] = 1.0;
    let (b, _) = locate_peak(&ActivationMap::new(5, 5, v).unwrap(), 1.0, &g).unwrap();
    assert_eq!((b.x, b.y, b.w, b.h), (90.0, 65.0, 20.0, 30.0));

    let mut v = vec![0.0; 25];
    v[13] = 1.0;
    let (b, _) = locate_peak(&ActivationMap::new(5, 5, v).unwrap(), 1.0, &g).unwrap();
    assert_eq!(b.center(), (104.0, 80.0));

    // Equal raw peaks at scales 0.96 and 1.0: the penalty decides.
    let mut v = vec![0.0; 25];
    v[12] = 0.9;
    let m = ActivationMap::new(5, 5, v).unwrap();
    let (_, small) = locate_peak(&m, 0.96, &g).unwrap();
    let (_, unit) = locate_peak(&m, 1.0, &g).unwrap();
    assert!((small - 0.97 * unit).abs() < 1e-12);
    let maps = [m.clone().with_ids(0, 0), m.with_ids(0, 1)];
    let (b, _) = crate::inference::best_prediction(&maps, &g).unwrap();
    assert_eq!((b.w, b.h), (20.0, 30.0));
}

#[test]
fn scaled_peak_geometry() {
    let g = geometry(0.0);
    let b = g.box_at(1.04, 2, 4, 5, 5).unwrap();
    assert!((b.w - 20.8).abs() < 1e-12 && (b.h - 31.2).abs() < 1e-12);
    assert!((b.center().0 - (100.0 + 2.0 * 4.0 * 1.04)).abs() < 1e-12);
    assert!(g.scale_of(3).is_err());
}

#[test]
fn translation_recovery() {
    let tex = texture(32, 7);
    let cfg = TrackerConfig::default();
    let enc = ncc();
    let frame0 = Frame::new(0, scene(200, 200, &tex, 84, 84));
    let state = track_init(&frame0, bb(84.0, 84.0, 32.0, 32.0), cfg.clone(), &enc).unwrap();
    let (kernels, energy) = state.matching_kernels(std::iter::once(&state.ltm.base().feature)).unwrap();
    assert!(energy.is_some());
    for (dx, dy) in [(0i64, 0i64), (8, -4), (-12, 16), (20, 20), (-24, 4)] {
        let frame = Frame::new(1, scene(200, 200, &tex, 84 + dx, 84 + dy));
        let region = BoundingBox::from_center(100.0, 100.0, 80.0, 80.0).unwrap();
        let search = enc.encode_region(&frame, &region, 1.0, 160).unwrap();
        let map = batch_cross_correlate(&kernels, &search).unwrap().remove(0);
        let g = SearchGeometry {
            center: (100.0, 100.0),
            previous_size: (32.0, 32.0),
            scales: vec![1.0],
            cell_px: 4.0 * 80.0 / 160.0,
            window_influence: 0.0,
            scale_penalty: 1.0,
        };
        let (b, _) = locate_peak(&map, 1.0, &g).unwrap();
        let (cx, cy) = b.center();
        assert!((cx - (100.0 + dx as f64)).abs() <= g.cell_px, "dx {dx}: got {cx}");
        assert!((cy - (100.0 + dy as f64)).abs() <= g.cell_px, "dy {dy}: got {cy}");
    }
}

#[test]
fn init_examples() {
    let tex = texture(40, 3);
    let frame = Frame::new(0, scene(160, 120, &tex, 30, 20));
    let s = track_init(&frame, bb(30.0, 20.0, 40.0, 40.0), TrackerConfig::default(), &ncc()).unwrap();
    assert_eq!((s.ltm.len(), s.stm.len(), s.frame_index), (1, 1, 0));
    assert_eq!(s.ltm.current_det(), 1.0);
    assert_eq!(normalized_determinant(s.ltm.gram()).unwrap(), 1.0);
    assert!((s.ltm.base().feature.norm() - 1.0).abs() < 1e-12);
    assert_eq!(s.ltm.base().feature.shape(), (1, 16, 16));

    let flat = Frame::new(0, RgbImage::from_pixel(100, 100, Rgb([10, 200, 30])));
    let err = track_init(&flat, bb(20.0, 20.0, 30.0, 30.0), TrackerConfig::default(), &ncc());
    assert!(matches!(err, Err(Error::Degenerate(_))));

    let partial = track_init(&frame, bb(-10.0, -10.0, 40.0, 40.0), TrackerConfig::default(), &ncc());
    assert!(partial.is_ok());

    let outside = track_init(&frame, bb(500.0, 10.0, 10.0, 10.0), TrackerConfig::default(), &ncc());
    assert!(matches!(outside, Err(Error::Parameter(_))));
}

#[test]
fn stride_mismatch_is_config_error() {
    let tex = texture(40, 3);
    let frame = Frame::new(0, scene(160, 120, &tex, 30, 20));
    let enc = Encoder::Ncc(NccEncoder::new(8).unwrap());
    let r = track_init(&frame, bb(30.0, 20.0, 40.0, 40.0), TrackerConfig::default(), &enc);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn identical_frame_keeps_box() {
    let tex = texture(36, 11);
    let frame = Frame::new(0, scene(200, 160, &tex, 70, 50));
    let init = bb(70.0, 50.0, 36.0, 36.0);
    let enc = ncc();
    let mut s = track_init(&frame, init, TrackerConfig::default(), &enc).unwrap();
    for i in 1..=25 {
        let p = step(&mut s, &Frame::new(i, frame.image.clone()), &enc).unwrap();
        assert!(p.bbox.center_distance(&init) < 1.0, "frame {i}: {:?}", p.bbox);
        assert!(iou(&p.bbox, &init) > 0.99);
        assert!(!matches!(p.decision, Some(Decision::Replaced(_))));
    }
}

#[test]
fn dilation_gate_leaves_memory_alone() {
    let tex = texture(36, 5);
    let enc = ncc();
    let f0 = Frame::new(0, scene(200, 160, &tex, 70, 50));
    let mut s = track_init(&f0, bb(70.0, 50.0, 36.0, 36.0), TrackerConfig::default(), &enc).unwrap();
    for i in 1..10 {
        let (ltm, stm) = (s.ltm.clone(), s.stm.clone());
        let p = step(&mut s, &Frame::new(i, scene(200, 160, &tex, 70 + i as i64, 50)), &enc).unwrap();
        assert!(p.decision.is_none() && p.candidate_id.is_none());
        assert_eq!(s.ltm, ltm);
        if !p.stm_reinit {
            assert_eq!(s.stm, stm);
        }
    }
    let p = step(&mut s, &Frame::new(10, scene(200, 160, &tex, 80, 50)), &enc).unwrap();
    assert!(p.decision.is_some());
}

#[test]
fn follows_linear_motion() {
    let tex = texture(20, 21);
    let enc = ncc();
    let start = 40.0;
    let frame = |i: usize| Frame::new(i, scene(260, 120, &tex, start as i64 + 5 * i as i64, 50));
    let mut s = track_init(&frame(0), bb(start, 50.0, 20.0, 20.0), TrackerConfig::default(), &enc).unwrap();
    let mut prev = s.previous_box.center().0;
    for i in 1..30 {
        let p = step(&mut s, &frame(i), &enc).unwrap();
        let cx = p.bbox.center().0;
        assert!(((cx - prev) - 5.0).abs() <= 1.0, "frame {i}: moved {}", cx - prev);
        assert!((cx - (start + 10.0 + 5.0 * i as f64)).abs() <= 1.0);
        prev = cx;
    }
}

#[test]
fn step_is_deterministic() {
    let tex = texture(30, 9);
    let enc = ncc();
    let frames: Vec<Frame> = (0..15)
        .map(|i| Frame::new(i, scene(180, 140, &tex, 50 + 3 * i as i64, 40 + (i as i64 % 4))))
        .collect();
    let run = || {
        let mut s = track_init(&frames[0], bb(50.0, 40.0, 30.0, 30.0), TrackerConfig::default(), &enc).unwrap();
        frames[1..].iter().map(|f| step(&mut s, f, &enc).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn no_stm_always_uses_long_term() {
    let tex = texture(30, 13);
    let enc = ncc();
    let mut cfg = TrackerConfig::default();
    cfg.use_stm = false;
    let f0 = Frame::new(0, scene(180, 140, &tex, 50, 40));
    let mut s = track_init(&f0, bb(50.0, 40.0, 30.0, 30.0), cfg, &enc).unwrap();
    for i in 1..12 {
        let p = step(&mut s, &Frame::new(i, scene(180, 140, &tex, 50 + 2 * i as i64, 40)), &enc).unwrap();
        assert_eq!(p.source, Source::Long);
        assert_eq!(p.gamma_after, 0.0);
    }
}

#[test]
fn clamp_keeps_box_in_image() {
    let tex = texture(30, 1);
    let f0 = Frame::new(0, scene(100, 80, &tex, 10, 10));
    let s = track_init(&f0, bb(10.0, 10.0, 30.0, 30.0), TrackerConfig::default(), &ncc()).unwrap();
    let c = s.clamp_box(BoundingBox { x: 150.0, y: -90.0, w: 500.0, h: 1.0 });
    assert_eq!((c.w, c.h), (100.0, 4.0));
    assert_eq!(c.center(), (100.0, 0.0));
    let inside = bb(20.0, 20.0, 10.0, 10.0);
    assert_eq!(s.clamp_box(inside), inside);
}

#[test]
fn crops_are_saved_for_memory_updates() {
    let dir = tempfile::tempdir().unwrap();
    let tex = texture(30, 17);
    let enc = ncc();
    let f0 = Frame::new(0, scene(180, 140, &tex, 50, 40));
    let options = InitOptions { memory: None, crop_dir: Some(dir.path().join("crops")) };
    let mut cfg = TrackerConfig::default();
    cfg.dilation = 2;
    cfg.use_bound = false;
    let mut s = track_init_with(&f0, bb(50.0, 40.0, 30.0, 30.0), cfg, &enc, options).unwrap();
    let base_crop = s.ltm.base().crop_path.clone().unwrap();
    assert!(base_crop.is_file());
    let img = image::open(&base_crop).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
    for i in 1..8 {
        let img = scene(180, 140, &texture(30, 100 + i as u64), 50, 40);
        step(&mut s, &Frame::new(i, img), &enc).unwrap();
    }
    assert!(s.ltm.len() > 1);
    for t in s.ltm.slots() {
        assert!(t.crop_path.as_ref().unwrap().is_file());
    }
}

#[test]
fn windowed_scores_match_cosine_oracle() {
    let tex = texture(32, 23);
    let enc = ncc();
    let f0 = Frame::new(0, scene(200, 200, &tex, 84, 84));
    let s = track_init(&f0, bb(84.0, 84.0, 32.0, 32.0), TrackerConfig::default(), &enc).unwrap();
    let f = &s.ltm.base().feature;
    let (kernels, energy) = s.matching_kernels(std::iter::once(f)).unwrap();
    let region = BoundingBox::from_center(100.0, 100.0, 80.0, 80.0).unwrap();
    let search = enc.encode_region(&f0, &region, 1.0, 160).unwrap();
    let raw = cross_correlate(&kernels[0], &search).unwrap();
    let sq = FeatureTensor::new(1, 40, 40, search.data().iter().map(|v| v * v).collect()).unwrap();
    let e = cross_correlate(&energy.unwrap(), &sq).unwrap();
    // Cosine between the stored template and the masked window at (12, 12).
    let mut window = Vec::new();
    for y in 0..16 {
        for x in 0..16 {
            window.push(search.at(0, 12 + y, 12 + x) * s.mask().at(y, x));
        }
    }
    let wn: f64 = window.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = window.iter().zip(f.data()).map(|(a, b)| a * b).sum();
    let score = raw.at(12, 12) / e.at(12, 12).sqrt();
    assert!((score - dot / wn).abs() < 1e-9);
    assert!(score > 0.99);
}
