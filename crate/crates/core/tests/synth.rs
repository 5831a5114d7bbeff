//! Brute-force checks of the scene generator and the relation oracle over
//! many generated samples.

use std::f64::consts::TAU;

use mvt_core::geometry::view_angles;
use mvt_core::synth::{
    build_dataset, category_color, generate_sample, generate_scene, relation_oracle, rotate_scene, scene_rng,
    DatasetConfig, Relation, RelationQuery, Resolution, SceneConfig, SplitStats,
};
use proptest::prelude::*;

fn query_for(sample: &mvt_core::synth::Sample, angle: f64, margin: f64) -> RelationQuery {
    let u = &sample.utterance;
    RelationQuery {
        relation: u.relation,
        anchor: u.anchor_index,
        category: Some(sample.scene.objects[u.target_index].category),
        speaker_angle: angle,
        margin,
    }
}

#[test]
fn oracle_rederives_every_target_and_view_independent_targets_ignore_the_speaker() {
    let config = DatasetConfig::default();
    let margin = config.utterance.ambiguity_margin;
    let (mut dep, mut indep) = (0, 0);
    for id in 0..1000u64 {
        let sample = generate_sample(&config, 17, id).unwrap();
        let u = &sample.utterance;
        assert_eq!(u.view_dependent, u.relation.is_view_dependent());
        let q = query_for(&sample, u.speaker_angle, margin);
        assert_eq!(relation_oracle(&sample.scene, &q).unwrap(), Resolution::Unique(u.target_index), "scene {id}");
        if u.view_dependent {
            dep += 1;
        } else {
            indep += 1;
            for k in 0..8 {
                let q = query_for(&sample, TAU * k as f64 / 8.0, margin);
                assert_eq!(relation_oracle(&sample.scene, &q).unwrap(), Resolution::Unique(u.target_index));
            }
        }
        let distractors = sample.scene.category_count(sample.scene.objects[u.target_index].category) - 1;
        assert_eq!(u.distractor_count, distractors);
        assert_eq!(sample.tags.hard, distractors > 2);
    }
    assert!(dep > 100 && indep > 100, "{dep} view-dependent, {indep} view-independent");
}

#[test]
fn speaker_angles_cluster_around_the_four_base_views() {
    let config = DatasetConfig::default();
    let base = view_angles(4).unwrap();
    for id in 0..300u64 {
        let a = generate_sample(&config, 5, id).unwrap().utterance.speaker_angle;
        let off = base
            .angles()
            .iter()
            .map(|b| {
                let d = (a - b).rem_euclid(TAU);
                d.min(TAU - d)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(off < config.utterance.speaker_jitter + 1e-12);
    }
}

#[test]
fn thousand_scenes_have_no_overlapping_boxes() {
    let config = SceneConfig::default();
    for id in 0..1000u64 {
        let scene = generate_scene(&mut scene_rng(3, id), id, &config).unwrap();
        assert!(scene.boxes_disjoint(), "scene {id}");
        assert!((config.min_objects..=config.max_objects).contains(&scene.len()));
        for o in &scene.objects {
            assert_eq!(o.points.len(), config.points_per_object);
            assert!(o.points.iter().all(|p| o.contains([p[3], p[4], p[5]], 1e-12)));
        }
    }
}

#[test]
fn point_colors_stay_near_the_category_signature() {
    let config = SceneConfig::default();
    for id in 0..50u64 {
        let scene = generate_scene(&mut scene_rng(8, id), id, &config).unwrap();
        for o in &scene.objects {
            let palette = category_color(o.category, config.num_categories);
            assert_eq!(o.color, palette);
            let n = o.points.len() as f64;
            for c in 0..3 {
                let mean = o.points.iter().map(|p| p[c]).sum::<f64>() / n;
                // Mean of 128 draws with sigma 0.05 (clamping only shrinks the spread).
                assert!((mean - palette[c]).abs() < 0.03, "category {} channel {c}", o.category);
                assert!(o.points.iter().all(|p| (p[c] - palette[c]).abs() < 6.0 * config.color_noise + 1e-12));
            }
        }
    }
}

#[test]
fn split_statistics_match_a_recount() {
    let config = DatasetConfig {
        train_size: 120,
        eval_size: 40,
        ..DatasetConfig::default()
    };
    let d = build_dataset(&config, 9).unwrap();
    let stats = SplitStats::count(&d.eval);
    let hard = d.eval.iter().filter(|s| s.utterance.distractor_count > 2).count();
    let dep = d.eval.iter().filter(|s| s.utterance.relation.is_view_dependent()).count();
    assert_eq!((stats.total, stats.hard, stats.easy), (40, hard, 40 - hard));
    assert_eq!((stats.view_dep, stats.view_indep), (dep, 40 - dep));
    let train_ids: std::collections::BTreeSet<_> = d.train.iter().map(|s| s.scene.id).collect();
    assert!(d.eval.iter().all(|s| !train_ids.contains(&s.scene.id)));
    assert_eq!(build_dataset(&config, 9).unwrap(), d);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A left-of target seen from the opposite side is the right-of target.
    #[test]
    fn half_turn_swaps_left_and_right(seed in any::<u64>()) {
        let config = SceneConfig { repeat_prob: 0.9, ..SceneConfig::default() };
        let scene = generate_scene(&mut scene_rng(seed, 0), 0, &config).unwrap();
        for anchor in 0..scene.len() {
            for category in 0..config.num_categories {
                let q = |relation, angle| RelationQuery {
                    relation,
                    anchor: Some(anchor),
                    category: Some(category),
                    speaker_angle: angle,
                    margin: 0.15,
                };
                let left_back = relation_oracle(&scene, &q(Relation::LeftOf, std::f64::consts::PI)).unwrap();
                let right_front = relation_oracle(&scene, &q(Relation::RightOf, 0.0)).unwrap();
                prop_assert_eq!(left_back, right_front);
            }
        }
    }

    /// Rotating the scene and the speaker together leaves every resolution unchanged.
    #[test]
    fn oracle_is_frame_independent(seed in any::<u64>(), theta in 0.0f64..TAU, speaker in 0.0f64..TAU) {
        let config = DatasetConfig::default();
        let sample = generate_sample(&config, seed, 0).unwrap();
        let rotated = rotate_scene(&sample.scene, theta);
        let u = &sample.utterance;
        let q = query_for(&sample, speaker, 0.15);
        let qr = RelationQuery { speaker_angle: speaker - theta, ..q };
        // Skip draws that sit within rounding of the margin.
        let a = relation_oracle(&sample.scene, &q).unwrap();
        let b = relation_oracle(&rotated, &qr).unwrap();
        let near_tie = relation_oracle(&sample.scene, &RelationQuery { margin: 0.15 - 1e-9, ..q }).unwrap()
            != relation_oracle(&sample.scene, &RelationQuery { margin: 0.15 + 1e-9, ..q }).unwrap();
        prop_assume!(!near_tie);
        prop_assert_eq!(a, b, "relation {:?}", u.relation);
    }
}
