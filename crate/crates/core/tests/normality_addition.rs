use std::sync::Arc;

use nand_core::detectors::{ProjectionSpec, ZeroShotDetector};
use nand_core::eval::{build_scenario, run_before_after, EvalReport};
use nand_core::nand::{add_normality_with, NandConfig};
use nand_core::prompt::{encode_feature, generate_phrases, PromptAssets, TextRole};
use nand_core::synthetic::{two_group_fixture, TwoGroupFixture};
use nand_core::{Detector, NormalitySpec};

const OUT: (usize, usize) = (32, 32);

fn detectors(fx: &TwoGroupFixture) -> (Arc<dyn Detector>, Arc<dyn Detector>) {
    let assets = PromptAssets::default();
    let f_nor = encode_feature(&fx.encoder, &assets.normal_prompts(&fx.class).unwrap(), TextRole::Normal).unwrap();
    let f_abn = encode_feature(&fx.encoder, &assets.abnormal_prompts(&fx.class).unwrap(), TextRole::Abnormal).unwrap();
    let zs: Arc<dyn Detector> = Arc::new(ZeroShotDetector::new(f_nor, f_abn, ProjectionSpec::identity(), OUT));
    let spec = generate_phrases(NormalitySpec::new(&fx.class, &fx.target), None).unwrap();
    let cfg = NandConfig {
        out_size: OUT,
        ..NandConfig::default()
    };
    let sup = add_normality_with(zs.clone(), &spec, &fx.encoder, ProjectionSpec::identity(), &cfg).unwrap();
    (zs, Arc::new(sup))
}

fn run(seed: u64) -> (TwoGroupFixture, EvalReport) {
    let fx = two_group_fixture(seed, "/unused").unwrap();
    let (zs, sup) = detectors(&fx);
    let scenario = build_scenario(&fx.index, &fx.class, &fx.target).unwrap();
    let report = run_before_after(zs.as_ref(), sup.as_ref(), &scenario, &fx.encoder).unwrap();
    (fx, report)
}

fn mean_ratio(r: &EvalReport, anomaly_type: &str) -> f64 {
    let v: Vec<f64> = r
        .scores
        .iter()
        .filter(|s| s.image_id.split('/').nth(2) == Some(anomaly_type))
        .map(|s| s.after / s.before)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn planted_normality_lifts_auroc() {
    let (_, r) = run(42);
    assert!(r.delta > 0.3, "{} -> {}", r.auroc_before, r.auroc_after);
    assert_eq!(r.delta, r.auroc_after - r.auroc_before);
}

#[test]
fn planted_images_drop_more_than_others() {
    let (fx, r) = run(42);
    let target = mean_ratio(&r, &fx.target);
    let other = mean_ratio(&r, &fx.other);
    let good = mean_ratio(&r, "good");
    assert!(target < other && target < good, "{target} {other} {good}");
    // every suppression entry is at least σ(−2), the floor of a two-way
    // softmax over cosines
    let floor = 1.0 / (1.0 + 2f64.exp());
    for s in &r.scores {
        assert!(s.after <= (1.0 - floor) * s.before + 1e-12, "{s:?}");
    }
}

#[test]
fn deterministic_for_a_seed() {
    let (_, a) = run(42);
    let (_, b) = run(42);
    assert_eq!(a, b);
    let (_, c) = run(43);
    assert_ne!(a.scores, c.scores);
}

#[test]
fn prompt_composition_matches_golden() {
    let golden = include_str!("golden/normal_prompts_metal_nut.txt");
    let set = PromptAssets::default().normal_prompts("metal_nut").unwrap();
    let expect: Vec<&str> = golden.lines().collect();
    assert_eq!(set.rendered(), expect.as_slice());
}
