use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftwatch_core::scenario::{
    obstacle_side, read_episode, split_proper_calibration, write_episode, SceneConfig, ShiftKind,
};

fn lit_pixels(scene: &SceneConfig, distance: f64, scale: f64) -> usize {
    let frame = scene.render_frame(distance, 0.0, scale, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    frame.image.data().iter().filter(|&&v| v == 1.0).count()
}

#[test]
fn label_mean_is_centered() {
    let scene = SceneConfig::default();
    let frames = scene.generate_dataset(10_000, &mut ChaCha8Rng::seed_from_u64(41)).unwrap();
    let mean = frames.iter().map(|f| f.distance).sum::<f64>() / frames.len() as f64;
    assert!((mean - 25.0).abs() < 0.5, "{mean}");
}

#[test]
fn excluded_band_is_never_sampled() {
    let scene = ShiftKind::target().training_scene(&SceneConfig::default());
    let frames = scene.generate_dataset(5000, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    assert!(frames.iter().all(|f| !(f.distance > 15.0 && f.distance < 45.0)));
    assert!(frames.iter().any(|f| f.distance < 15.0));
    assert!(frames.iter().any(|f| f.distance > 45.0));
}

#[test]
fn full_range_target_episode_crosses_the_band() {
    let scene = SceneConfig::default();
    let episode = scene
        .generate_episode(&ShiftKind::target(), 50.0, 10.0, &mut ChaCha8Rng::seed_from_u64(43))
        .unwrap();
    assert!(episode.frames.iter().any(|f| f.distance > 15.0 && f.distance < 45.0));
}

#[test]
fn obstacle_sizes_at_the_range_ends() {
    assert_eq!(obstacle_side(0.0, 1.0), 24);
    assert_eq!(obstacle_side(50.0, 1.0), 2);
    let scene = SceneConfig::default();
    assert_eq!(lit_pixels(&scene, 0.0, 1.0), 24 * 24);
    assert_eq!(lit_pixels(&scene, 50.0, 1.0), 4);
}

#[test]
fn double_scale_lights_more_pixels() {
    let scene = SceneConfig::default();
    for d in [0.5, 5.0, 10.0, 25.0, 40.0, 50.0] {
        assert!(lit_pixels(&scene, d, 2.0) > lit_pixels(&scene, d, 1.0), "distance {d}");
    }
}

#[test]
fn episode_lengths_and_spacing() {
    let scene = SceneConfig::default();
    let episode = scene
        .generate_episode(&ShiftKind::Nominal, 5.0, 10.0, &mut ChaCha8Rng::seed_from_u64(44))
        .unwrap();
    assert_eq!(episode.frames.len(), 10);
    for pair in episode.frames.windows(2) {
        assert!((pair[0].distance - pair[1].distance - 0.5).abs() < 1e-12);
    }
    assert!(episode.frames.last().unwrap().distance > 0.0);
}

#[test]
fn covariate_episodes_are_noisy() {
    // Background pixels are black without noise; with sigma >= 0.3 many become bright.
    let scene = SceneConfig::default();
    let episode = scene
        .generate_episode(&ShiftKind::covariate(), 40.0, 10.0, &mut ChaCha8Rng::seed_from_u64(45))
        .unwrap();
    for frame in &episode.frames {
        let bright = frame.image.data().iter().filter(|&&v| v > 0.2).count();
        assert!(bright > 100, "{bright}");
    }
}

#[test]
fn generation_is_reproducible() {
    let scene = SceneConfig::default();
    let run = |seed| {
        scene
            .generate_episode(&ShiftKind::label_concept(), 30.0, 7.0, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    };
    assert_eq!(run(46), run(46));
    assert_ne!(run(46), run(47));
}

#[test]
fn episode_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.json");
    let scene = SceneConfig::default();
    let episode = scene
        .generate_episode(&ShiftKind::covariate(), 12.0, 9.0, &mut ChaCha8Rng::seed_from_u64(47))
        .unwrap();
    write_episode(&path, &episode).unwrap();
    assert!(dir.path().join("ep.csv").exists());
    assert_eq!(read_episode(&path).unwrap(), episode);
}

#[test]
fn split_is_disjoint_and_order_preserving() {
    let (proper, calibration) = split_proper_calibration((0..10).collect::<Vec<_>>(), 8).unwrap();
    assert_eq!(proper, (0..8).collect::<Vec<_>>());
    assert_eq!(calibration, vec![8, 9]);
    assert!(split_proper_calibration(vec![1, 2], 2).is_err());
    assert!(split_proper_calibration(vec![1, 2], 0).is_err());
}

proptest! {
    #[test]
    fn lit_area_is_monotone(d1 in 0.0f64..50.0, d2 in 0.0f64..50.0, scale in 0.5f64..3.0) {
        let scene = SceneConfig::default();
        let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(lit_pixels(&scene, near, scale) >= lit_pixels(&scene, far, scale));
        prop_assert!(lit_pixels(&scene, near, scale * 1.5) >= lit_pixels(&scene, near, scale));
    }

    #[test]
    fn frames_respect_ranges(seed in 0u64..1000, distance in 0.0f64..=50.0, noise in 0.0f64..=100.0) {
        let scene = SceneConfig::default();
        let frame = scene.render_frame(distance, noise, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(frame.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(frame.image.shape(), &[32, 32, 1]);
        prop_assert_eq!(frame.distance, distance);
    }
}
