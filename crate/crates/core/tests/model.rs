//! Finite-difference checks of the model components and the structural
//! properties of the multi-view forward pass.

mod common;

use common::{check_params, model, scene, small_config, tiny_config, tokens};
use mvt_core::geometry::ViewSet;
use mvt_core::model::{aggregate, compute_losses, object_class_logits, AggregationFn, AggregationStage};
use mvt_core::object_encoder::{box_rows, encode_scene, point_features};
use mvt_core::optim::{AdamConfig, AdamState};
use mvt_core::synth::{rotate_scene, Scene};
use mvt_core::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

const COMPONENT_TOL: f64 = 1e-4;
const END_TO_END_TOL: f64 = 1e-3;
const WORDS: [&str; 3] = ["chair", "left", "table"];

fn eval_scores(m: &mvt_core::model::MvtModel, s: &Scene, words: &[&str], views: &ViewSet) -> (Tensor, Tensor) {
    let g = Graph::eval();
    let p = m.store.bind_frozen(&g);
    let c = m.category_features(&p).unwrap();
    let out = m.forward_views(&p, s, &tokens(m, words), c, views).unwrap();
    (out.scores.value(), out.aggregated.value())
}

#[test]
fn end_to_end_loss_gradient_tiny() {
    // M = 2 objects, k1 = 3 words, d = 8, N = 2 views.
    for stage in AggregationStage::ALL {
        let mut config = tiny_config(2);
        config.stage = stage;
        let m = model(config, 3);
        let s = scene(11, 2, 4, 4);
        let toks = tokens(&m, &WORDS);
        let cats: Vec<usize> = s.objects.iter().map(|o| o.category).collect();
        let report = check_params(&m, |_| true, |p| {
            let c = m.category_features(p)?;
            let out = m.forward(p, &s, &toks, c)?;
            Ok(compute_losses(&out, 1, cats[1], &cats, 0.5)?.total)
        });
        assert!(report.max_rel_err <= END_TO_END_TOL, "{stage:?}: {report:?}");
        assert!(report.checked > 1000);
    }
}

#[test]
fn point_encoder_gradient() {
    let m = model(tiny_config(1), 5);
    let s = scene(2, 2, 5, 4);
    let pts = point_features(&s.objects[0]).unwrap();
    let report = check_params(&m, |n| n.starts_with("points."), |p| {
        let x = m.points.encode_points(p, p.graph().constant(pts.clone()))?;
        let w = p.graph().constant(Tensor::new(vec![1, 8], (0..8).map(|i| i as f64 - 3.5).collect())?);
        Ok(x.mul(w)?.sum())
    });
    assert!(report.max_rel_err <= COMPONENT_TOL, "{report:?}");
}

#[test]
fn positional_encoding_gradient() {
    let m = model(tiny_config(1), 6);
    let rows = box_rows(&[[0.5, -1.0, 0.2], [1.5, 0.3, 0.4]], &[1.2, 0.7]);
    let report = check_params(&m, |n| n.starts_with("position."), |p| {
        let pe = m.position.encode(p, p.graph().constant(rows.clone()))?;
        Ok(pe.mul(pe.scale(0.3).gelu())?.sum())
    });
    assert!(report.max_rel_err <= COMPONENT_TOL, "{report:?}");
}

#[test]
fn fusion_and_head_gradients() {
    let m = model(tiny_config(1), 7);
    let s = scene(3, 2, 4, 4);
    let toks = tokens(&m, &WORDS[..2]);
    let report = check_params(&m, |n| n.starts_with("decoder.") || n.starts_with("grounding_head."), |p| {
        let lang = m.language.encode(p, &toks, 0.0)?;
        let objects = encode_scene(&m.points, &m.position, p, &s, &ViewSet::equal_angle(1)?, m.config.box_size)?;
        let fused = m.fuse(p, objects.per_view[0], &lang)?;
        m.grounding_scores(p, fused)?.cross_entropy(0)
    });
    assert!(report.max_rel_err <= COMPONENT_TOL, "{report:?}");
}

#[test]
fn language_and_text_classifier_gradients() {
    let m = model(tiny_config(1), 8);
    let toks = tokens(&m, &["chair"]);
    let report = check_params(&m, |n| n.starts_with("language.") || n.starts_with("text_classifier."), |p| {
        let lang = m.language.encode(p, &toks, 0.0)?;
        m.text_classifier.logits(p, lang.sentence)?.cross_entropy(2)
    });
    assert!(report.max_rel_err <= COMPONENT_TOL, "{report:?}");
}

#[test]
fn object_classification_gradient() {
    let m = model(tiny_config(1), 9);
    let s = scene(4, 2, 4, 4);
    let report = check_params(&m, |n| n.starts_with("points.") || n.starts_with("language."), |p| {
        let c = m.category_features(p)?;
        let objects = encode_scene(&m.points, &m.position, p, &s, &ViewSet::equal_angle(1)?, m.config.box_size)?;
        let logits = object_class_logits(objects.shared, c)?;
        logits.narrow(0, 1, 1)?.reshape(&[4])?.cross_entropy(3)
    });
    assert!(report.max_rel_err <= COMPONENT_TOL, "{report:?}");
}

#[test]
fn point_encoder_ignores_order_and_duplicates() {
    let m = model(small_config(1), 1);
    let s = scene(5, 3, 32, 20);
    let obj = &s.objects[0];
    let mut shuffled = obj.clone();
    shuffled.points.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let mut doubled = obj.clone();
    doubled.points.extend(obj.points.clone());
    let encode = |o: &mvt_core::synth::ObjectInstance| {
        let g = Graph::eval();
        let p = m.store.bind_frozen(&g);
        m.points.encode_points(&p, g.constant(point_features(o).unwrap())).unwrap().value()
    };
    let base = encode(obj);
    assert_eq!(encode(&shuffled), base);
    assert_eq!(encode(&doubled), base);
}

#[test]
fn empty_point_set_is_rejected() {
    let mut s = scene(5, 2, 8, 20);
    s.objects[0].points.clear();
    assert!(point_features(&s.objects[0]).is_err());
}

#[test]
fn positional_encoding_depends_on_view() {
    let m = model(small_config(4), 2);
    let s = scene(6, 4, 8, 20);
    let g = Graph::eval();
    let p = m.store.bind_frozen(&g);
    let f = encode_scene(&m.points, &m.position, &p, &s, &ViewSet::equal_angle(4).unwrap(), m.config.box_size).unwrap();
    let pe: Vec<Tensor> = f.positional.iter().map(|v| v.value()).collect();
    for j in 1..4 {
        assert!(pe[0].max_abs_diff(&pe[j]) > 1e-6, "view {j} encodes the same positions");
    }
    // Equal center and size give equal encodings.
    let rows = box_rows(&[[0.3, 0.4, 0.1], [0.3, 0.4, 0.1]], &[1.0, 1.0]);
    let same = m.position.encode(&p, g.constant(rows)).unwrap().value();
    assert_eq!(same.row(0), same.row(1));
    // Per-view object features differ exactly by their positional terms.
    let o: Vec<Tensor> = f.per_view.iter().map(|v| v.value()).collect();
    for j in 1..4 {
        let lhs: Vec<f64> = o[j].data().iter().zip(o[0].data()).map(|(a, b)| a - b).collect();
        let rhs: Vec<f64> = pe[j].data().iter().zip(pe[0].data()).map(|(a, b)| a - b).collect();
        let diff = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}

#[test]
fn shared_features_are_computed_once_per_object() {
    let m = model(small_config(1), 3);
    let s = scene(7, 5, 16, 20);
    let mut reference = None;
    for n in [1, 2, 4, 8] {
        let g = Graph::eval();
        let p = m.store.bind_frozen(&g);
        let f = encode_scene(&m.points, &m.position, &p, &s, &ViewSet::equal_angle(n).unwrap(), m.config.box_size).unwrap();
        assert_eq!(f.point_encoder_calls, s.len());
        assert_eq!(f.per_view.len(), n);
        let shared = f.shared.value();
        match &reference {
            None => reference = Some(shared),
            Some(r) => assert_eq!(&shared, r),
        }
    }
}

#[test]
fn view_slice_matches_single_view_encoding() {
    let m = model(small_config(1), 4);
    let s = scene(8, 4, 16, 20);
    let g = Graph::eval();
    let p = m.store.bind_frozen(&g);
    let four = encode_scene(&m.points, &m.position, &p, &s, &ViewSet::equal_angle(4).unwrap(), m.config.box_size).unwrap();
    let one = encode_scene(&m.points, &m.position, &p, &s, &ViewSet::equal_angle(1).unwrap(), m.config.box_size).unwrap();
    assert_eq!(four.per_view[0].value(), one.per_view[0].value());
}

#[test]
fn single_view_model_equals_baseline_pipeline() {
    for stage in AggregationStage::ALL {
        for seed in 0..10u64 {
            let mut config = small_config(1);
            config.stage = stage;
            let m = model(config, seed);
            let s = scene(100 + seed, 3 + (seed % 5) as usize, 16, 20);
            let toks = tokens(&m, &["the", "lamp", "that", "is", "nearest", "to", "the", "desk"]);
            let g = Graph::eval();
            let p = m.store.bind_frozen(&g);
            let c = m.category_features(&p).unwrap();
            let a = m.forward(&p, &s, &toks, c).unwrap();
            let b = m.forward_single_view(&p, &s, &toks, c).unwrap();
            assert_eq!(a.scores.value(), b.scores.value());
            assert_eq!(a.aggregated.value(), b.aggregated.value());
            assert_eq!(a.object_logits.value(), b.object_logits.value());
            assert_eq!(a.text_logits.value(), b.text_logits.value());
        }
    }
}

#[test]
fn rotating_by_a_view_step_leaves_outputs_unchanged() {
    for aggregation in [AggregationFn::Avg, AggregationFn::Max] {
        for n in [2, 4, 8] {
            let mut config = small_config(n);
            config.aggregation = aggregation;
            let m = model(config, n as u64);
            let views = ViewSet::equal_angle(n).unwrap();
            for seed in 0..3u64 {
                let s = scene(seed * 31 + n as u64, 6, 16, 20);
                let (scores, g0) = eval_scores(&m, &s, &["the", "chair", "that", "is", "left", "of", "the", "bed"], &views);
                for k in 1..n {
                    let rotated = rotate_scene(&s, TAU * k as f64 / n as f64);
                    let (rs, rg) = eval_scores(&m, &rotated, &["the", "chair", "that", "is", "left", "of", "the", "bed"], &views);
                    assert!(scores.max_abs_diff(&rs) < 1e-6, "{aggregation:?} N={n} k={k}");
                    assert!(g0.max_abs_diff(&rg) < 1e-6);
                }
            }
        }
    }
}

#[test]
fn off_grid_rotation_changes_scores() {
    let m = model(small_config(4), 12);
    let views = ViewSet::equal_angle(4).unwrap();
    let s = scene(13, 6, 16, 20);
    let (a, _) = eval_scores(&m, &s, &WORDS, &views);
    let (b, _) = eval_scores(&m, &rotate_scene(&s, std::f64::consts::FRAC_PI_3), &WORDS, &views);
    assert!(a.max_abs_diff(&b) > 1e-9);
}

#[test]
fn permuting_objects_permutes_scores() {
    for stage in AggregationStage::ALL {
        let mut config = small_config(4);
        config.stage = stage;
        let m = model(config, 21);
        let views = ViewSet::equal_angle(4).unwrap();
        let s = scene(22, 7, 16, 20);
        let mut perm: Vec<usize> = (0..s.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let mut permuted = s.clone();
        permuted.objects = perm.iter().map(|&i| s.objects[i].clone()).collect();
        let (a, _) = eval_scores(&m, &s, &WORDS, &views);
        let (b, _) = eval_scores(&m, &permuted, &WORDS, &views);
        for (new, &old) in perm.iter().enumerate() {
            assert!((b.data()[new] - a.data()[old]).abs() < 1e-12, "{stage:?}");
        }
    }
}

#[test]
fn aggregation_ignores_view_order() {
    let g = Graph::eval();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let views: Vec<_> = (0..5)
        .map(|_| g.constant(mvt_core::gradcheck::random_tensor(&mut rng, &[3, 4])))
        .collect();
    let reversed: Vec<_> = views.iter().rev().copied().collect();
    let a = aggregate(&views, AggregationFn::Avg).unwrap().value();
    let b = aggregate(&reversed, AggregationFn::Avg).unwrap().value();
    assert!(a.max_abs_diff(&b) <= 1e-12);
    let a = aggregate(&views, AggregationFn::Max).unwrap().value();
    let b = aggregate(&reversed, AggregationFn::Max).unwrap().value();
    assert_eq!(a, b);
}

#[test]
fn object_logits_follow_inner_products() {
    let g = Graph::eval();
    let c = g.constant(Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.6, 0.8, 0.0]]).unwrap());
    let x = g.constant(Tensor::from_rows(&[&[0.0, 0.0, 0.0], &[0.6, 0.8, 0.0]]).unwrap());
    let p = object_class_logits(x, c).unwrap().value();
    assert!(p.row(0).iter().all(|&v| v == 0.0));
    let row = p.row(1);
    let best = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    assert_eq!(best, 3);
    let bad = g.constant(Tensor::zeros(&[2, 5]));
    assert!(object_class_logits(bad, c).is_err());
}

#[test]
fn zeroed_heads_give_flat_logits() {
    let mut m = model(small_config(1), 30);
    let head: Vec<_> = m.store.ids().filter(|&id| m.store.meta(id).name.starts_with("grounding_head.")).collect();
    let text: Vec<_> = m.store.ids().filter(|&id| m.store.meta(id).name.starts_with("text_classifier.")).collect();
    for id in head.into_iter().chain(text) {
        m.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let s = scene(31, 5, 16, 20);
    let g = Graph::eval();
    let p = m.store.bind_frozen(&g);
    let c = m.category_features(&p).unwrap();
    let out = m.forward(&p, &s, &tokens(&m, &WORDS), c).unwrap();
    assert!(out.scores.value().data().iter().all(|&v| v == 0.0));
    assert!(out.text_logits.value().data().iter().all(|&v| v == 0.0));
    let ce = out.text_logits.cross_entropy(7).unwrap().item();
    assert!((ce - 20f64.ln()).abs() < 1e-12);
    assert!((ce - 2.9957).abs() < 1e-4);
}

#[test]
fn duplicate_objects_get_equal_scores() {
    let m = model(small_config(2), 32);
    let mut s = scene(33, 4, 16, 20);
    s.objects[3] = s.objects[1].clone();
    let (scores, _) = eval_scores(&m, &s, &WORDS, &ViewSet::equal_angle(2).unwrap());
    assert!((scores.data()[1] - scores.data()[3]).abs() < 1e-12);
}

#[test]
fn language_encoding_is_deterministic_and_order_sensitive() {
    let m = model(small_config(1), 40);
    let encode = |words: &[&str]| {
        let g = Graph::eval();
        let p = m.store.bind_frozen(&g);
        m.language.encode(&p, &tokens(&m, words), m.config.dropout).unwrap().sentence.value()
    };
    let base = encode(&["the", "chair", "left", "of", "the", "table"]);
    assert_eq!(base, encode(&["the", "chair", "left", "of", "the", "table"]));
    assert!(base.max_abs_diff(&encode(&["the", "table", "left", "of", "the", "chair"])) > 1e-9);
    let words = ["the", "chair", "left", "of", "the", "table"];
    for i in 0..words.len() {
        let mut flipped = words;
        flipped[i] = "sofa";
        if flipped == words {
            continue;
        }
        assert!(base.max_abs_diff(&encode(&flipped)) > 1e-9, "token {i} ignored");
    }
}

#[test]
fn language_rejects_bad_lengths() {
    let m = model(small_config(1), 41);
    let g = Graph::eval();
    let p = m.store.bind_frozen(&g);
    assert!(m.language.encode(&p, &[0], 0.0).is_err());
    assert!(m.language.encode(&p, &[2; 25], 0.0).is_err());
}

#[test]
fn category_features_track_encoder_updates() {
    let mut m = model(small_config(1), 42);
    let labels = ["chair", "table", "chair"];
    let g = Graph::eval();
    let p = m.store.bind(&g);
    let c = m.language.encode_categories(&p, &m.vocab, &labels, 0.0).unwrap();
    let before = c.value();
    assert_eq!(before.shape(), &[3, 16]);
    assert_eq!(before.row(0), before.row(2));
    let loss = c.narrow(0, 0, 1).unwrap().mul(c.narrow(0, 1, 1).unwrap()).unwrap().sum();
    let grads = p.gradients(&g.backward(loss).unwrap());
    drop(p);
    let mut adam = AdamState::new(AdamConfig::default(), m.store.values());
    let rates = vec![1e-3; grads.len()];
    adam.step(m.store.values_mut(), &grads, &rates).unwrap();
    let g = Graph::eval();
    let p = m.store.bind_frozen(&g);
    let after = m.language.encode_categories(&p, &m.vocab, &labels, 0.0).unwrap().value();
    assert!(before.max_abs_diff(&after) > 1e-9);
}

#[test]
fn single_object_scene_is_finite() {
    let m = model(small_config(4), 50);
    let mut s = scene(51, 2, 16, 20);
    s.objects.truncate(1);
    let (scores, _) = eval_scores(&m, &s, &WORDS, &ViewSet::equal_angle(4).unwrap());
    assert_eq!(scores.shape(), &[1]);
    assert!(scores.data()[0].is_finite());
}

#[test]
fn zero_alpha_leaves_only_the_grounding_loss() {
    let m = model(small_config(2), 60);
    let s = scene(61, 5, 16, 20);
    let g = Graph::eval();
    let p = m.store.bind_frozen(&g);
    let c = m.category_features(&p).unwrap();
    let out = m.forward(&p, &s, &tokens(&m, &WORDS), c).unwrap();
    let cats: Vec<usize> = s.objects.iter().map(|o| o.category).collect();
    let l = compute_losses(&out, 2, cats[2], &cats, 0.0).unwrap();
    assert_eq!(l.total.item(), l.reference.item());
    let l = compute_losses(&out, 2, cats[2], &cats, 0.5).unwrap();
    let expected = mvt_core::model::combine_losses(l.reference.item(), l.text.item(), l.object.item(), 0.5);
    assert_eq!(l.total.item(), expected);
    assert!(compute_losses(&out, 9, 0, &cats, 0.5).is_err());
    assert!(compute_losses(&out, 0, 20, &cats, 0.5).is_err());
}
