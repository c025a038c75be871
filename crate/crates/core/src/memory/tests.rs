use super::*;
use crate::gram::determinant;
use crate::space::l2_normalize;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bbox() -> BoundingBox {
    BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap()
}

fn tpl(id: u64, data: &[f64]) -> Template {
    Template::new(id, id as usize, FeatureTensor::from_vec(data.to_vec()).unwrap(), bbox())
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> FeatureTensor {
    let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    l2_normalize(&FeatureTensor::from_vec(raw).unwrap()).unwrap()
}

/// A vector whose similarity to e_1 is exactly `s` (unit norm, 3-D).
fn at_similarity(s: f64) -> Vec<f64> {
    vec![s, (1.0 - s * s).sqrt(), 0.0]
}

const S2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[test]
fn init_examples() {
    let mem = LongTermMemory::new(tpl(0, &[0.6, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 8).unwrap();
    assert_eq!(mem.len(), 1);
    assert_eq!(mem.current_det(), 1.0);
    assert_eq!(mem.gram().entries(), &[1.0]);

    let mut single = LongTermMemory::new(tpl(0, &[1.0, 0.0]), 1).unwrap();
    assert!(single.is_full());
    assert_eq!(
        single.consider(tpl(1, &[0.0, 1.0]), None, 0.0).unwrap(),
        Decision::RejectedNoGain
    );

    assert!(matches!(
        LongTermMemory::new(tpl(0, &[0.0, 0.0]), 2),
        Err(Error::Degenerate(_))
    ));
    assert!(matches!(
        LongTermMemory::new(tpl(0, &[1.0, 0.0]), 0),
        Err(Error::Parameter(_))
    ));
    assert!(matches!(
        LongTermMemory::new(tpl(0, &[1.0, 0.0]), 3),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn lower_bound_examples() {
    let mut mem = LongTermMemory::new(tpl(0, &[1.0, 0.0, 0.0]), 3).unwrap();
    let cand = tpl(1, &at_similarity(0.25));
    let stat = LowerBoundConfig::new(BoundMode::Static, 0.3).unwrap();
    assert!(!lower_bound_check(&mem, &cand, &stat, 0.0).unwrap());
    let dynamic = LowerBoundConfig::new(BoundMode::Dynamic, 0.3).unwrap();
    assert!(lower_bound_check(&mem, &cand, &dynamic, 0.1).unwrap());

    // Second slot chosen so the candidate scores 0.35 against the base and
    // 0.28 against it.
    let x = (1.0f64 - 0.35 * 0.35).sqrt();
    let c = [0.35, x, 0.0];
    let second = [0.0, 0.28 / x, (1.0 - (0.28 / x).powi(2)).sqrt()];
    mem.consider(tpl(2, &second), None, 0.0).unwrap();
    let cand = tpl(3, &c);
    let sims: Vec<f64> = mem
        .slots()
        .iter()
        .map(|t| inner_product(&cand.feature, &t.feature).unwrap())
        .collect();
    assert_abs_diff_eq!(sims[0], 0.35, epsilon = 1e-12);
    assert_abs_diff_eq!(sims[1], 0.28, epsilon = 1e-12);
    let ens = LowerBoundConfig::new(BoundMode::Ensemble, 0.3).unwrap();
    assert!(!lower_bound_check(&mem, &cand, &ens, 0.0).unwrap());
    assert!(lower_bound_check(&mem, &cand, &stat, 0.0).unwrap());
}

#[test]
fn bound_rejection_leaves_memory_untouched() {
    let mut mem = LongTermMemory::new(tpl(0, &[1.0, 0.0, 0.0]), 3).unwrap();
    let before = mem.clone();
    let cfg = LowerBoundConfig::new(BoundMode::Static, 0.5).unwrap();
    let d = mem.consider(tpl(1, &[0.0, 1.0, 0.0]), Some(&cfg), 0.0).unwrap();
    assert_eq!(d, Decision::RejectedBound);
    assert_eq!(mem, before);
}

#[test]
fn append_then_replace_examples() {
    let mut mem = LongTermMemory::new(tpl(0, &[1.0, 0.0, 0.0]), 3).unwrap();
    assert_eq!(mem.consider(tpl(1, &[0.0, 1.0, 0.0]), None, 0.0).unwrap(), Decision::Appended);
    assert_eq!(mem.consider(tpl(2, &[0.0, 0.0, 1.0]), None, 0.0).unwrap(), Decision::Appended);
    assert_abs_diff_eq!(mem.current_det(), 1.0, epsilon = 1e-12);
    // Duplicate of a stored template cannot add volume.
    assert_eq!(
        mem.consider(tpl(3, &[0.0, 1.0, 0.0]), None, 0.0).unwrap(),
        Decision::RejectedNoGain
    );

    let mut mem = LongTermMemory::new(tpl(0, &[1.0, 0.0, 0.0]), 3).unwrap();
    mem.consider(tpl(1, &[0.0, 1.0, 0.0]), None, 0.0).unwrap();
    mem.consider(tpl(2, &[S2, S2, 0.0]), None, 0.0).unwrap();
    assert_abs_diff_eq!(mem.current_det(), 0.0, epsilon = 1e-12);
    let e3 = FeatureTensor::from_vec(vec![0.0, 0.0, 1.0]).unwrap();
    // Exhaustive oracle over the two replaceable slots.
    let dets: Vec<f64> = (1..3)
        .map(|slot| {
            let mut feats = mem.features();
            feats[slot] = e3.clone();
            determinant(&build_gram(&feats).unwrap())
        })
        .collect();
    assert_abs_diff_eq!(dets[0], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(dets[1], 1.0, epsilon = 1e-12);
    let d = mem.consider(tpl(3, &[0.0, 0.0, 1.0]), None, 0.0).unwrap();
    assert_eq!(d, Decision::Replaced(2));
    assert_abs_diff_eq!(mem.current_det(), 1.0, epsilon = 1e-12);
    assert_eq!(mem.base().id, 0);
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut mem = LongTermMemory::new(tpl(0, &[1.0, 0.0, 0.0]), 3).unwrap();
    assert!(matches!(
        mem.consider(tpl(1, &[1.0, 0.0]), None, 0.0),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn replacement_matches_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..500 {
        let d = rng.gen_range(3..=8);
        let k = rng.gen_range(2..=5usize.min(d));
        let slots: Vec<Template> = (0..k).map(|i| Template::new(i as u64, i, unit(&mut rng, d), bbox())).collect();
        let mut mem = LongTermMemory::from_slots(slots, k).unwrap();
        let cand = unit(&mut rng, d);
        let mut best: Option<(usize, f64)> = None;
        for slot in 1..k {
            let mut feats = mem.features();
            feats[slot] = cand.clone();
            let det = determinant(&build_gram(&feats).unwrap());
            if best.is_none_or(|(_, b)| det > b) {
                best = Some((slot, det));
            }
        }
        let (slot, det) = best.unwrap();
        let before = mem.current_det();
        let decision = mem.consider(Template::new(99, 99, cand, bbox()), None, 0.0).unwrap();
        if det > before * (1.0 + DEFAULT_GAIN_EPSILON) {
            assert_eq!(decision, Decision::Replaced(slot));
        } else {
            assert_eq!(decision, Decision::RejectedNoGain);
        }
    }
}

#[test]
fn stm_fifo() {
    let mut stm = ShortTermMemory::new(3, GammaVariant::AsWritten).unwrap();
    stm.push(tpl(1, &[1.0, 0.0])).unwrap();
    assert_eq!(stm.len(), 1);
    for id in 2..=4 {
        stm.push(tpl(id, &[1.0, 0.0])).unwrap();
    }
    let ids: Vec<u64> = stm.templates().map(|t| t.id).collect();
    assert_eq!(ids, vec![2, 3, 4]);
    assert_eq!(stm.gram().unwrap().n(), 3);
}

#[test]
fn stm_reinitialize() {
    let mut stm = ShortTermMemory::new(4, GammaVariant::AsWritten).unwrap();
    for id in 0..4 {
        stm.push(tpl(id, &[1.0, id as f64])).unwrap();
    }
    stm.reinitialize(tpl(9, &[0.0, 1.0])).unwrap();
    assert_eq!(stm.len(), 1);
    assert_eq!(stm.templates().next().unwrap().id, 9);
    assert_eq!(stm.diversity(), 0.0);
    stm.reinitialize(tpl(9, &[0.0, 1.0])).unwrap();
    assert_eq!(stm.len(), 1);
}

#[test]
fn gamma_examples() {
    let mut stm = ShortTermMemory::new(4, GammaVariant::AsWritten).unwrap();
    assert_eq!(stm.diversity(), 0.0);
    stm.push(tpl(0, &[1.0, 0.0, 0.0])).unwrap();
    assert_eq!(stm.diversity(), 0.0);
    stm.push(tpl(1, &[0.0, 1.0, 0.0])).unwrap();
    stm.push(tpl(2, &[0.0, 0.0, 1.0])).unwrap();
    assert_eq!(stm.diversity(), 1.0);

    let mut dup = ShortTermMemory::new(4, GammaVariant::AsWritten).unwrap();
    dup.push(tpl(0, &[0.0, 2.0])).unwrap();
    dup.push(tpl(1, &[0.0, 2.0])).unwrap();
    assert_abs_diff_eq!(dup.diversity(), 2.0 / 3.0, epsilon = 1e-12);

    let g = GramMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!(diversity(&g, GammaVariant::PairNormalized), 0.0);
    let neg = GramMatrix::from_rows(&[vec![-1.0, -1.0], vec![-1.0, -1.0]]).unwrap();
    assert_eq!(diversity(&neg, GammaVariant::AsWritten), 0.0);
}

#[test]
fn dilation_gate() {
    assert!(should_consider(0, 10).unwrap());
    assert!(should_consider(10, 10).unwrap());
    assert!(!should_consider(7, 10).unwrap());
    assert!(matches!(should_consider(3, 0), Err(Error::Parameter(_))));
}

#[test]
fn snapshot_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let base = Template::new(0, 0, unit(&mut rng, 16), bbox());
    let mut mem = LongTermMemory::new(base, 4).unwrap();
    for i in 1..8 {
        let mut t = Template::new(i, i as usize * 10, unit(&mut rng, 16), bbox());
        t.crop_path = Some(format!("crops/{i}.png").into());
        mem.consider(t, None, 0.0).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    save_snapshot(&mem, dir.path()).unwrap();
    let back = load_snapshot(dir.path()).unwrap();
    assert_eq!(back, mem);
    assert_eq!(back.current_det().to_bits(), mem.current_det().to_bits());
}

#[test]
fn snapshot_rejects_tampered_det() {
    let mem = LongTermMemory::new(tpl(0, &[1.0, 0.0]), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_snapshot(&mem, dir.path()).unwrap();
    let path = dir.path().join(snapshot::MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"normalized_det\": 1.0", "\"normalized_det\": 0.5")).unwrap();
    assert!(matches!(load_snapshot(dir.path()), Err(Error::Format(_))));
}

fn features_strategy(d: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ltm_invariants_hold(
        raw in features_strategy(6, 24),
        cap in 1usize..=5,
        mode in prop_oneof![Just(BoundMode::Static), Just(BoundMode::Dynamic), Just(BoundMode::Ensemble)],
        ell in 0.05f64..0.9,
        gamma in 0.0f64..1.0,
    ) {
        let feats: Vec<FeatureTensor> = raw
            .into_iter()
            .filter_map(|v| l2_normalize(&FeatureTensor::from_vec(v).unwrap()).ok())
            .collect();
        prop_assume!(feats.len() > 2);
        let cfg = LowerBoundConfig::new(mode, ell).unwrap();
        let mut mem = LongTermMemory::new(Template::new(0, 0, feats[0].clone(), bbox()), cap).unwrap();
        let mut last_cap_det = mem.capacity_det();
        for (i, f) in feats.iter().enumerate().skip(1) {
            let before = mem.current_det();
            let d = mem.consider(Template::new(i as u64, i, f.clone(), bbox()), Some(&cfg), gamma).unwrap();
            prop_assert!(mem.len() <= cap);
            prop_assert_eq!(mem.base().id, 0);
            prop_assert!(mem.capacity_det() >= last_cap_det);
            last_cap_det = mem.capacity_det();
            match d {
                Decision::Replaced(slot) => {
                    prop_assert!(slot >= 1);
                    prop_assert!(mem.current_det() > before * (1.0 + DEFAULT_GAIN_EPSILON));
                }
                Decision::RejectedBound | Decision::RejectedNoGain => {
                    prop_assert_eq!(mem.current_det(), before);
                }
                Decision::Appended => {}
            }
            let rebuilt = normalized_determinant(&build_gram(&mem.features()).unwrap()).unwrap();
            prop_assert!((mem.current_det() - rebuilt).abs() <= 1e-9);
        }
    }

    #[test]
    fn ensemble_is_stricter_than_static(raw in features_strategy(5, 4), ell in 0.01f64..1.0) {
        let feats: Vec<FeatureTensor> = raw
            .into_iter()
            .filter_map(|v| l2_normalize(&FeatureTensor::from_vec(v).unwrap()).ok())
            .collect();
        prop_assume!(feats.len() == 4);
        let slots: Vec<Template> = feats[..3].iter().enumerate()
            .map(|(i, f)| Template::new(i as u64, i, f.clone(), bbox())).collect();
        let mem = LongTermMemory::from_slots(slots, 3).unwrap();
        let cand = Template::new(9, 9, feats[3].clone(), bbox());
        let ens = LowerBoundConfig::new(BoundMode::Ensemble, ell).unwrap();
        let stat = LowerBoundConfig::new(BoundMode::Static, ell).unwrap();
        if lower_bound_check(&mem, &cand, &ens, 0.0).unwrap() {
            prop_assert!(lower_bound_check(&mem, &cand, &stat, 0.0).unwrap());
        }
    }

    #[test]
    fn gamma_properties(raw in features_strategy(4, 5), scale in 0.01f64..100.0) {
        let feats: Vec<FeatureTensor> = raw
            .into_iter()
            .map(|v| FeatureTensor::from_vec(v).unwrap())
            .collect();
        let g = build_gram(&feats).unwrap();
        for variant in [GammaVariant::AsWritten, GammaVariant::PairNormalized] {
            let gamma = diversity(&g, variant);
            prop_assert!((0.0..=1.0).contains(&gamma));
            let scaled = diversity(&g.scaled(scale), variant);
            prop_assert!((gamma - scaled).abs() < 1e-12);
        }
    }

    #[test]
    fn stm_never_exceeds_capacity(cap in 1usize..6, pushes in 0usize..20) {
        let mut stm = ShortTermMemory::new(cap, GammaVariant::AsWritten).unwrap();
        for id in 0..pushes {
            stm.push(tpl(id as u64, &[1.0, id as f64])).unwrap();
            prop_assert!(stm.len() <= cap);
        }
        let ids: Vec<u64> = stm.templates().map(|t| t.id).collect();
        let expected: Vec<u64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as u64).collect();
        prop_assert_eq!(ids, expected);
    }
}
