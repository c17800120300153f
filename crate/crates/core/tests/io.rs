use proptest::prelude::*;

use handfit::energy::{BinaryMask, EnergyWeights};
use handfit::fitting::{fit_sequence, OptimizerConfig};
use handfit::hand_model::{HandModel, Handedness};
use handfit::io::{
    load_annotations, load_ground_truth, load_session, read_mask_pgm, save_annotations, save_ground_truth, save_session, write_mask_pgm,
    IoError, PipelineConfig,
};
use handfit::synth::{generate_session, SynthConfig};

fn strip_triangulation(mut s: handfit::session::Session) -> handfit::session::Session {
    for f in &mut s.frames {
        for obs in f.hands.values_mut() {
            obs.joints3d_triangulated = None;
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn session_and_ground_truth_round_trip(seed in 0u64..10_000, views in 1usize..4, noise in 0.0f64..3.0, dropout in 0.0f64..0.3) {
        let hand = if seed % 2 == 0 { Handedness::Right } else { Handedness::Left };
        let config = SynthConfig { frames: 2, views, seed, joint_noise_px: noise, cloud_noise_m: 0.002, cloud_points: 200, dropout_rate: dropout, handedness: hand, ..Default::default() };
        let (session, gt) = generate_session(&config, &HandModel::builtin(hand)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_session(dir.path(), &session).unwrap();
        save_ground_truth(&dir.path().join("gt.json"), &gt).unwrap();
        prop_assert_eq!(strip_triangulation(load_session(dir.path()).unwrap()), strip_triangulation(session));
        prop_assert_eq!(load_ground_truth(&dir.path().join("gt.json")).unwrap(), gt);
    }

    #[test]
    fn config_round_trips(j2d in 0.0f64..1.0, mesh in 0.0f64..1.0, seed in any::<u64>(), steps in 2usize..500) {
        let cfg = PipelineConfig { lambda_j2d: j2d, lambda_mesh: mesh, seed, pck_steps: steps, view_weights: Some(vec![0.25, 0.75]), ..Default::default() };
        prop_assert_eq!(PipelineConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}

#[test]
fn annotations_round_trip_bitwise_with_null_frames() {
    let model = HandModel::builtin(Handedness::Right);
    let config = SynthConfig { frames: 3, seed: 4, joint_noise_px: 1.0, ..Default::default() };
    let (mut session, _) = generate_session(&config, &model).unwrap();
    session.frames[1].hands.clear();
    let ann = fit_sequence(&session, &[model], &EnergyWeights::default(), None, &OptimizerConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.json");
    save_annotations(&path, &ann).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("null"), "absent frame must be an explicit null");
    let file = load_annotations(&path).unwrap();
    let rec = &file.hands[&Handedness::Right];
    assert_eq!(rec.frames.len(), 3);
    assert!(rec.frames[1].is_none());
    let track = ann.hand(Handedness::Right).unwrap();
    for t in [0, 2] {
        let (a, b) = (track.frames[t].as_ref().unwrap(), rec.frames[t].as_ref().unwrap());
        assert_eq!(b.pose().unwrap().to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.pose.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(b.shape().unwrap(), a.shape);
        assert_eq!(b.joints().unwrap(), a.joints);
        assert_eq!(b.objective.to_bits(), a.objective.to_bits());
    }
}

#[test]
fn mask_of_the_wrong_size_names_the_view() {
    let model = HandModel::builtin(Handedness::Right);
    let (session, _) = generate_session(&SynthConfig { frames: 1, ..Default::default() }, &model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_session(dir.path(), &session).unwrap();
    let bad = dir.path().join("frames/000000/view1.mask.pgm");
    std::fs::write(&bad, write_mask_pgm(&BinaryMask::new(100, 100))).unwrap();
    match load_session(dir.path()) {
        Err(IoError::Validation { file, message, .. }) => {
            assert_eq!(file, bad);
            assert!(message.contains("100x100"), "{message}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn missing_cameras_file_is_a_layout_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("frames/000000")).unwrap();
    assert!(matches!(load_session(dir.path()), Err(IoError::Layout(_))));
}

#[test]
fn non_contiguous_frames_are_rejected() {
    let model = HandModel::builtin(Handedness::Right);
    let (session, _) = generate_session(&SynthConfig { frames: 3, ..Default::default() }, &model).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_session(dir.path(), &session).unwrap();
    std::fs::rename(dir.path().join("frames/000001"), dir.path().join("frames/000007")).unwrap();
    assert!(matches!(load_session(dir.path()), Err(IoError::Validation { .. })));
}

#[test]
fn unwritable_annotation_path_is_an_io_error() {
    let model = HandModel::builtin(Handedness::Right);
    let (session, _) = generate_session(&SynthConfig { frames: 1, ..Default::default() }, &model).unwrap();
    let ann = fit_sequence(&session, &[model], &EnergyWeights::default(), None, &OptimizerConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("no/such/dir/ann.json");
    assert!(matches!(save_annotations(&path, &ann), Err(IoError::Io { .. })));
}

#[test]
fn pgm_round_trip_preserves_every_pixel() {
    let mask = BinaryMask::from_fn(13, 7, |x, y| (x * 3 + y) % 5 == 0);
    assert_eq!(read_mask_pgm(&write_mask_pgm(&mask)).unwrap(), mask);
}
