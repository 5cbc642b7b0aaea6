use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repgn::attention::AttentionParams;
use repgn::gcpool::{gcpool, GcPoolConfig};
use repgn::io::{generate_scene, SceneSpec};
use repgn::repgn::NormMode;
use repgn::{build_graph, repgn_forward, repgn_forward_no_gcpool, BoundingBox, RepGnConfig};

fn boxes(raw: &[[f64; 4]]) -> Vec<BoundingBox> {
    raw.iter().map(|&b| BoundingBox::from_pixels(b, 40.0, 40.0).unwrap()).collect()
}

/// Two triangles of mutually overlapping boxes, bridged by one weak overlap.
fn bridged_triangle_boxes() -> Vec<BoundingBox> {
    boxes(&[
        [0.0, 10.0, 10.0, 20.0],
        [1.0, 10.0, 11.0, 20.0],
        [3.0, 10.0, 13.0, 20.0],
        [9.0, 10.0, 19.0, 20.0],
        [11.0, 10.0, 21.0, 20.0],
        [12.0, 10.0, 22.0, 20.0],
    ])
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn random_features(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, d), |_| rng.random_range(-2.0..2.0))
}

fn moments(a: &Array2<f64>) -> (f64, f64) {
    let n = a.len() as f64;
    let mean = a.sum() / n;
    (mean, a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

#[test]
fn bridged_triangles_give_two_parts() {
    let b = bridged_triangle_boxes();
    let cfg = RepGnConfig { iou_thr: 0.2, min_size: 2, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_features(&mut rng, 6, 4);
    let g = build_graph(&b, x.clone(), cfg.iou_thr).unwrap();
    assert_eq!(g.edges().len(), 7);

    let out = repgn_forward(&b, x.view(), &cfg.init_layers(4), &cfg).unwrap();
    assert_eq!(out.features.dim(), (6, 4));
    let pool = out.diagnostics.pool.unwrap();
    assert_eq!(pool.parts, 2);
    assert_eq!(out.diagnostics.coarse_nodes, 2);
    let labels = out.diagnostics.labeling.unwrap().labels;
    assert_eq!(labels, vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)]);
}

#[test]
fn single_proposal_with_closed_gate_is_identity() {
    let b = boxes(&[[2.0, 2.0, 9.0, 7.0]]);
    let x = array![[0.3, -1.2, 4.0]];
    let cfg = RepGnConfig { lambda: 0.0, ..Default::default() };
    let out = repgn_forward(&b, x.view(), &cfg.init_layers(3), &cfg).unwrap();
    assert!(max_abs_diff(&out.features, &x) <= 1e-9);
}

#[test]
fn empty_input_gives_empty_output() {
    let cfg = RepGnConfig::default();
    let x = Array2::<f64>::zeros((0, 5));
    let out = repgn_forward(&[], x.view(), &cfg.init_layers(5), &cfg).unwrap();
    assert_eq!(out.features.dim(), (0, 5));
}

#[test]
fn without_coarse_nodes_pooling_changes_nothing() {
    // Edgeless scene: every component is filtered, so no coarse node exists.
    let b = boxes(&[[0.0, 0.0, 5.0, 5.0], [10.0, 10.0, 15.0, 15.0], [20.0, 0.0, 25.0, 5.0]]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_features(&mut rng, 3, 4);
    let cfg = RepGnConfig::default();
    let layers = cfg.init_layers(4);
    let full = repgn_forward(&b, x.view(), &layers, &cfg).unwrap();
    let plain = repgn_forward_no_gcpool(&b, x.view(), &layers, &cfg).unwrap();
    assert_eq!(full.diagnostics.coarse_nodes, 0);
    assert_eq!(full.features, plain.features);

    // Attention on an edgeless graph is the identity, so only normalization acts.
    let (mo, vo) = moments(&plain.features);
    let (mv, vv) = moments(&x);
    assert!((mo - mv).abs() < 1e-9);
    assert!((vo / vv - 1.0).abs() < 1e-6);
}

#[test]
fn dense_attention_differs_from_masked() {
    let b = boxes(&[[0.0, 0.0, 5.0, 5.0], [10.0, 10.0, 15.0, 15.0], [20.0, 0.0, 25.0, 5.0]]);
    let x = array![[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]];
    let masked = RepGnConfig::default();
    let dense = RepGnConfig { dense_attention: true, ..Default::default() };
    let layers = masked.init_layers(2);
    let a = repgn_forward_no_gcpool(&b, x.view(), &layers, &masked).unwrap();
    let d = repgn_forward_no_gcpool(&b, x.view(), &layers, &dense).unwrap();
    assert!(max_abs_diff(&a.features, &d.features) > 1e-6);
}

#[test]
fn mismatched_params_are_rejected() {
    let b = bridged_triangle_boxes();
    let cfg = RepGnConfig::default();
    let x = Array2::<f64>::ones((6, 3));
    let wrong = cfg.init_layers(4);
    assert!(repgn_forward(&b, x.view(), &wrong, &cfg).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let widening = vec![AttentionParams::init(&mut rng, 3, 2, None)];
    assert!(repgn_forward(&b, x.view(), &widening, &cfg).is_err());
    assert!(repgn_forward(&b[..5], x.view(), &cfg.init_layers(3), &cfg).is_err());
}

#[test]
fn literal_mode_runs_end_to_end() {
    let doc =
        generate_scene(&SceneSpec { clusters: 2, per_cluster: 5, seed: 3, dim: 4, ..Default::default() }).unwrap();
    let p = doc.validate().unwrap();
    let cfg = RepGnConfig { norm_mode: NormMode::Literal, ..Default::default() };
    let out = repgn_forward(&p.boxes, p.features.view(), &cfg.init_layers(4), &cfg).unwrap();
    assert_eq!(out.features.dim(), (10, 4));
    assert!(out.features.iter().all(|v| v.is_finite()));
}

#[test]
fn gcpool_parts_refine_components() {
    for seed in 0..20 {
        let doc =
            generate_scene(&SceneSpec { clusters: 4, per_cluster: 6, seed, jitter: 0.3, dim: 3, ..Default::default() })
                .unwrap();
        let p = doc.validate().unwrap();
        let g = build_graph(&p.boxes, p.features.clone(), 0.3).unwrap();
        let comps = repgn::connected_components(&g);
        let out = gcpool(&g, &GcPoolConfig::default()).unwrap();
        let mut covered = 0;
        for (k, node) in out.coarse.iter().enumerate() {
            assert_eq!(node.source_part, k);
            assert!(node.member_ids.len() >= GcPoolConfig::default().min_size);
            let comp = comps.labels[node.member_ids[0] as usize];
            assert!(node.member_ids.iter().all(|&id| comps.labels[id as usize] == comp));
            assert!(node.member_ids.iter().all(|&id| out.labeling.labels[id as usize] == Some(k)));
            covered += node.member_ids.len();
        }
        assert_eq!(covered, out.labeling.labels.iter().filter(|l| l.is_some()).count());
        // Parts are numbered in order of their smallest member.
        let firsts: Vec<u64> = out.coarse.iter().map(|c| c.member_ids[0]).collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]));
    }
}

fn scene_strategy() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 1usize..5, 1usize..7, 0.0f64..3.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_invariants((seed, clusters, per, lambda) in scene_strategy()) {
        let doc = generate_scene(&SceneSpec { clusters, per_cluster: per, seed, dim: 6, jitter: 0.2, ..Default::default() }).unwrap();
        let p = doc.validate().unwrap();
        let m = clusters * per;
        let cfg = RepGnConfig { lambda, seed, head_count: 2, ..Default::default() };
        let layers = cfg.init_layers(6);
        let out = repgn_forward(&p.boxes, p.features.view(), &layers, &cfg).unwrap();
        prop_assert_eq!(out.features.nrows(), m);

        let (mo, vo) = moments(&out.features);
        let (mv, vv) = moments(&p.features);
        prop_assert!((mo - mv).abs() < 1e-9);
        prop_assert!((vo / vv - 1.0).abs() < 1e-6);

        let gated = RepGnConfig { lambda: 0.0, ..cfg.clone() };
        let out = repgn_forward(&p.boxes, p.features.view(), &layers, &gated).unwrap();
        prop_assert!(max_abs_diff(&out.features, &p.features) <= 1e-9);

        let again = repgn_forward(&p.boxes, p.features.view(), &layers, &gated).unwrap();
        prop_assert_eq!(out.features, again.features);
    }
}
