use proptest::prelude::*;

use nand_core::detectors::{zs_anomaly_map, ProjectionSpec};
use nand_core::embedding::{decode_embedding_file, encode_embedding_file, SimilarityHead};
use nand_core::eval::{aggregate_report, auroc, build_scenario, EvalReport, COMBINED, GOOD};
use nand_core::prompt::aggregate_text_feature;
use nand_core::synthetic::{synthetic_index, SyntheticClass};
use nand_core::{apply_suppression, cosine_similarity, AnomalyMap, Embedding, PatchGrid, PatchGridSet, SuppressionMap, TextFeature, TextRole};

fn vec_f32(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn feature(v: Vec<f32>, role: TextRole) -> TextFeature {
    TextFeature {
        vector: Embedding::new(v).unwrap(),
        source_prompt_count: 1,
        role,
    }
}

fn map_pair() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(0.0f64..3.0, h * w),
            prop::collection::vec(0.0f64..=1.0, h * w),
        )
    })
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_follows_permutation(
        feats in prop::collection::vec(vec_f32(5), 2..6),
        g in vec_f32(5),
        rot in 0usize..6,
    ) {
        let p = SimilarityHead::new(&feats).unwrap().probabilities(&g).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let r = rot % feats.len();
        let mut rotated = feats.clone();
        rotated.rotate_left(r);
        let q = SimilarityHead::new(&rotated).unwrap().probabilities(&g).unwrap();
        for i in 0..feats.len() {
            prop_assert!((q[i] - p[(i + r) % feats.len()]).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_is_scale_invariant(a in vec_f32(7), b in vec_f32(7), c in 0.1f32..10.0) {
        let scaled: Vec<f32> = a.iter().map(|x| x * c).collect();
        let base = cosine_similarity(&a, &b).unwrap();
        prop_assert!((cosine_similarity(&scaled, &b).unwrap() - base).abs() < 1e-5);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn naeb_roundtrip(
        id in "[a-z0-9/_.]{0,20}",
        dims in prop::collection::vec((1usize..4, 1usize..4, 1usize..5), 1..4),
        global in prop::option::of(vec_f32(3)),
        seed in any::<u32>(),
    ) {
        let layers: Vec<PatchGrid> = dims
            .iter()
            .enumerate()
            .map(|(l, &(h, w, d))| {
                let data = (0..h * w * d).map(|i| ((i as u32 ^ seed ^ l as u32) % 97) as f32 / 7.0 - 5.0).collect();
                PatchGrid::new(h, w, d, data).unwrap()
            })
            .collect();
        let set = PatchGridSet::new(id, layers, global.map(|g| Embedding::new(g).unwrap())).unwrap();
        let bytes = encode_embedding_file(&set).unwrap();
        let back = decode_embedding_file(&bytes).unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(encode_embedding_file(&back).unwrap(), bytes);
    }

    #[test]
    fn aggregation_ignores_prompt_order(mut vs in prop::collection::vec(vec_f32(4), 1..8), rot in 0usize..8) {
        let es: Vec<Embedding> = vs.iter().map(|v| Embedding::new(v.clone()).unwrap()).collect();
        let a = aggregate_text_feature(&es, TextRole::Normal).unwrap();
        let r = rot % vs.len();
        vs.rotate_left(r);
        let es: Vec<Embedding> = vs.iter().map(|v| Embedding::new(v.clone()).unwrap()).collect();
        let b = aggregate_text_feature(&es, TextRole::Normal).unwrap();
        prop_assert_eq!(a.source_prompt_count, b.source_prompt_count);
        for (x, y) in a.vector.as_slice().iter().zip(b.vector.as_slice()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_shot_entry_rises_with_abnormal_affinity(
        cos_n in -0.5f64..0.5,
        lo in -0.8f64..0.8,
        gap in 0.01f64..0.3,
    ) {
        // f_abn = e1, f_nor = e2; patch = (cos_a, cos_n, rest) on the unit sphere
        let hi = lo + gap;
        prop_assume!(hi * hi + cos_n * cos_n < 1.0);
        let patch = |a: f64| vec![a as f32, cos_n as f32, (1.0 - a * a - cos_n * cos_n).sqrt() as f32];
        let f_abn = feature(vec![1.0, 0.0, 0.0], TextRole::Abnormal);
        let f_nor = feature(vec![0.0, 1.0, 0.0], TextRole::Normal);
        let score = |a: f64| {
            let set = PatchGridSet::new("p", vec![PatchGrid::new(1, 1, 3, patch(a)).unwrap()], None).unwrap();
            zs_anomaly_map(&set, &f_nor, &f_abn, &ProjectionSpec::identity(), (1, 1)).unwrap().scores()[0]
        };
        prop_assert!(score(hi) > score(lo));
    }

    #[test]
    fn suppression_never_raises_and_stacks((h, w, a, s) in map_pair(), s2 in prop::collection::vec(0.0f64..=1.0, 25)) {
        let a = AnomalyMap::new(h, w, a, "t").unwrap();
        let sup = SuppressionMap::new(h, w, s.clone(), None).unwrap();
        let out = apply_suppression(&a, &sup).unwrap();
        for (i, (&x, &y)) in a.scores().iter().zip(out.scores()).enumerate() {
            prop_assert!(y <= x && y >= 0.0);
            prop_assert!((y - x * (1.0 - s[i])).abs() < 1e-12);
        }
        let sup2 = SuppressionMap::new(h, w, s2[..h * w].to_vec(), None).unwrap();
        let twice = apply_suppression(&out, &sup2).unwrap();
        let once = apply_suppression(&a, &sup.combine(&sup2).unwrap()).unwrap();
        for (x, y) in twice.scores().iter().zip(once.scores()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn auroc_invariances(
        raw in prop::collection::vec((0u8..10, 0u8..2), 2..60),
        c in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let mut labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
        let base = auroc(&scores, &labels).unwrap();
        let moved: Vec<f64> = scores.iter().map(|s| c * s + shift).collect();
        prop_assert_eq!(auroc(&moved, &labels).unwrap(), base);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((auroc(&scores, &flipped).unwrap() - (1.0 - base)).abs() < 1e-12);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&negated, &labels).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn scenarios_partition_the_test_split(
        good in 1usize..4,
        per_type in 1usize..4,
        combined in 0usize..3,
        pick in 0usize..3,
    ) {
        let class = SyntheticClass::new("k", &[("a", &["a1", "a2"]), ("b", &["b1"]), ("c", &["c1"])])
            .with_counts(1, good, per_type)
            .with_combined(combined);
        let idx = synthetic_index("/none", &[class]);
        let group = ["a", "b", "c"][pick];
        let s = build_scenario(&idx, "k", group).unwrap();
        let entry = idx.class("k").unwrap();
        prop_assert_eq!(s.items.len() + s.excluded.len(), entry.test.len());
        prop_assert!(s.excluded.iter().all(|i| i.anomaly_type == COMBINED));
        let members = &entry.group(group).unwrap().types;
        for it in &s.items {
            let normal = it.image.anomaly_type == GOOD || members.contains(&it.image.anomaly_type);
            prop_assert_eq!(it.label, u8::from(!normal));
        }
        prop_assert_eq!(s.count(0), good + members.len() * per_type);
    }

    #[test]
    fn aggregate_ignores_report_order(
        rows in prop::collection::vec((0usize..3, 0.0f64..1.0, 0.0f64..1.0), 1..10),
        rot in 0usize..10,
    ) {
        let mut reps: Vec<EvalReport> = rows
            .iter()
            .enumerate()
            .map(|(i, &(c, b, a))| EvalReport::new(format!("c{c}"), format!("g{i}"), b, a, vec![]))
            .collect();
        let s1 = aggregate_report(&reps).unwrap();
        let r = rot % reps.len();
        reps.rotate_left(r);
        let s2 = aggregate_report(&reps).unwrap();
        prop_assert!((s1.before - s2.before).abs() < 1e-12);
        prop_assert!((s1.after - s2.after).abs() < 1e-12);
        prop_assert_eq!(s1.classes.len(), s2.classes.len());
    }
}
