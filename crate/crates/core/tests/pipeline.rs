//! End-to-end checks over the built-in scenes: preset geometry guarantees,
//! and the full generate -> featurize -> train -> evaluate loop in memory.

use mmloc_core::channel::{channel_response, path_to_mpc, ChannelConfig, Mpc};
use mmloc_core::eval::{empirical_cdf, localization_errors};
use mmloc_core::features::{
    assemble_features, denormalize_labels, normalize_labels, FeatureMode,
};
use mmloc_core::neuralnet::{train, Activation, BatchMode, MlpModel, TrainConfig};
use mmloc_core::scene::{build_grid, is_los, trace_paths, Scene};

#[test]
fn every_preset_validates() {
    for name in Scene::preset_names() {
        let scene = Scene::preset(name).unwrap();
        scene.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(Scene::preset("no-such-scene").is_none());
}

#[test]
fn preset_visibility_and_path_floor() {
    // The node-parameter pipeline needs three components per user, so every
    // preset must deliver at least three paths at the configured bounce
    // order; the los-* scenes must be fully visible, the nlos ones fully
    // shadowed.
    let cases = [
        ("los-grid", 990, true),
        ("nlos-grid", 540, false),
        ("los-grid-28", 990, true),
        ("nlos-grid-28", 540, false),
        ("los-small", 200, true),
        ("response-grid", 185, true),
    ];
    for (name, user_count, expect_los) in cases {
        let scene = Scene::preset(name).unwrap();
        let bs = scene.base_stations[0];
        let grid = build_grid(&scene);
        assert_eq!(grid.len(), user_count, "{name} user count");
        for (id, ue) in grid {
            assert_eq!(
                is_los(&scene, bs, ue).unwrap(),
                expect_los,
                "{name} user {id} visibility"
            );
            let paths = trace_paths(&scene, bs, ue).unwrap();
            assert!(
                paths.len() >= 3,
                "{name} user {id} has only {} paths",
                paths.len()
            );
            if expect_los {
                assert_eq!(paths[0].bounce_count, 0, "{name} direct path first");
            } else {
                assert!(paths.iter().all(|p| p.bounce_count >= 1));
            }
        }
    }
}

#[test]
fn traced_paths_survive_revalidation() {
    // Re-check the returned paths against the declared invariants: length
    // consistency, bounce accounting, interior vertices on obstacle edges.
    let scene = Scene::preset("nlos-grid").unwrap();
    let bs = scene.base_stations[0];
    for (_, ue) in build_grid(&scene).into_iter().step_by(37) {
        for path in trace_paths(&scene, bs, ue).unwrap() {
            let length: f64 = path
                .vertices
                .windows(2)
                .map(|w| w[0].distance(&w[1]))
                .sum();
            assert!((length - path.length_m).abs() <= 1e-9 * path.length_m.max(1.0));
            assert_eq!(path.bounce_count, path.vertices.len() - 2);
            for v in &path.vertices[1..path.vertices.len() - 1] {
                let on_edge = scene.obstacles.iter().any(|o| {
                    o.edges().any(|(a, b)| {
                        mmloc_core::geometry::point_segment_distance(*v, a, b) < 1e-7
                    })
                });
                assert!(on_edge, "reflection vertex off every edge");
            }
        }
    }
}

#[test]
fn in_memory_pipeline_learns_the_small_grid() {
    let scene = Scene::preset("los-small").unwrap();
    let bs = scene.base_stations[0];
    let grid = build_grid(&scene);
    let mut per_user: Vec<Vec<Mpc>> = Vec::new();
    let mut points = Vec::new();
    for (_, ue) in &grid {
        let paths = trace_paths(&scene, bs, *ue).unwrap();
        per_user.push(
            paths
                .iter()
                .map(|p| path_to_mpc(p, &scene).unwrap())
                .collect(),
        );
        points.push(*ue);
    }
    let fs = assemble_features(&per_user, None, FeatureMode::AoaRssToa, 3).unwrap();
    assert_eq!(fs.matrix.cols(), 9);
    assert!(fs.padded_users.is_empty());
    let labels = normalize_labels(&points).unwrap();

    let model = MlpModel::two_hidden(9, 30, 30, Activation::Tansig, 3).unwrap();
    let config = TrainConfig {
        learning_rate: 0.2,
        max_epochs: 400,
        batch_mode: BatchMode::MiniBatch(16),
        seed: 3,
        ..TrainConfig::default()
    };
    let (trained, history) = train(model, &fs.matrix, &labels.matrix, &config).unwrap();
    assert!(history.last().unwrap() <= history.first().unwrap());

    let pred = trained.forward(&fs.matrix).unwrap();
    let pred_points = denormalize_labels(&pred, &labels.norm_params).unwrap();
    let errors = localization_errors(&pred_points, &points).unwrap();
    let result = empirical_cdf(&errors).unwrap();
    assert!(
        result.p90_m < 1.0,
        "expected sub-meter P90 on the small grid, got {}",
        result.p90_m
    );
}

#[test]
fn response_synthesis_covers_a_whole_preset() {
    let scene = Scene::preset("response-grid").unwrap();
    let cfg = ChannelConfig::from_scene(&scene);
    assert_eq!((cfg.num_subcarriers, cfg.num_antennas), (64, 10));
    let bs = scene.base_stations[0];
    for (_, ue) in build_grid(&scene).into_iter().step_by(19) {
        let paths = trace_paths(&scene, bs, ue).unwrap();
        let mpcs: Vec<Mpc> = paths
            .iter()
            .map(|p| path_to_mpc(p, &scene).unwrap())
            .collect();
        let resp = channel_response(&mpcs, &cfg).unwrap();
        assert_eq!(resp.abs_flat().len(), 640);
    }
}
