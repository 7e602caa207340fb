mod common;

use std::fs;
use std::process::Command;

use common::*;
use nalgebra::Point3;
use voxelcap::voxelgrid::read_ply;
use voxelcap::POSE_DOF;
use voxelcap_cli::pipeline::{cloud_path, occupancy_path};
use voxelcap_cli::{cmd_synth, run_bench, run_reconstruct, run_track, CliError, EXIT_CONFIG};

#[test]
fn synth_writes_a_minimal_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &sphere_script(2, 1));
    assert!(data.join("rig.txt").is_file());
    assert!(data.join("frames/cam1_f0.ppm").is_file());
    assert!(data.join("truth/sil_cam0_f0.pgm").is_file());
    assert!(data.join("background/cam0_b2.ppm").is_file());
}

#[test]
fn synth_names_the_missing_field() {
    let dir = tempfile::tempdir().unwrap();
    let script = sphere_script(2, 1).replace("\"frames\": 1,", "");
    let path = write(&dir.path().join("script.json"), &script);
    let err = cmd_synth(&path, &dir.path().join("data"), None).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("frames"), "{err}");
    assert_eq!(err.exit_code(), EXIT_CONFIG);
}

#[test]
fn sphere_surface_lies_on_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &sphere_script(16, 1));
    let spacing = 30.0;
    let cfg = load(dir.path(), &sphere_config(spacing));
    let report = run_reconstruct(&cfg).unwrap();
    assert_eq!(report.frames, 1);
    assert!(occupancy_path(&cfg.output, 0).is_file());
    assert!(cfg.output.join("reconstruct_timing.json").is_file());
    let cloud = read_ply(&cloud_path(&cfg.output, 0)).unwrap();
    assert_eq!(cloud.len(), report.voxels[0]);
    assert!(cloud.len() > 100);
    let c = Point3::from(SPHERE_CENTER);
    let worst = cloud
        .voxels
        .iter()
        .map(|v| ((v.center - c).norm() - SPHERE_RADIUS).abs())
        .fold(0.0f64, f64::max);
    assert!(worst <= spacing, "worst deviation {worst} mm");
    assert!(cloud.voxels.iter().all(|v| v.color.is_some()));
}

#[test]
fn zero_frame_dataset_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &body_script(1));
    fs::remove_dir_all(data.join("frames")).unwrap();
    let cfg = load(dir.path(), &body_config(""));
    let r = run_reconstruct(&cfg).unwrap();
    assert_eq!((r.frames, r.voxels.len()), (0, 0));
    assert!(!cloud_path(&cfg.output, 0).exists());
    let t = run_track(&cfg, true).unwrap();
    assert!(t.frames.is_empty());
    assert_eq!(fs::read_to_string(cfg.output.join("poses.csv")).unwrap(), "");
}

#[test]
fn missing_calibration_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &body_script(1));
    fs::remove_file(data.join("rig.txt")).unwrap();
    let config = write(&dir.path().join("config.json"), &body_config(""));
    let out = Command::new(env!("CARGO_BIN_EXE_voxelcap"))
        .arg("reconstruct")
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("calibration"), "{stderr}");
}

#[test]
fn track_without_clouds_suggests_a_fix() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &body_script(1));
    let cfg = load(dir.path(), &body_config(""));
    let err = run_track(&cfg, false).unwrap_err();
    assert!(err.to_string().contains("--pipe"), "{err}");
}

#[test]
fn zero_diffusion_returns_the_initial_pose() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &body_script(1));
    let mut start = vec![0.0; POSE_DOF];
    start[2] = 900.0;
    start[12] = 0.2;
    let mut json: serde_json::Value = serde_json::from_str(&body_config("")).unwrap();
    json["initial_pose"] = serde_json::json!({ "pose": start });
    json["schedule"]["sigma_base"] = serde_json::json!(vec![0.0; POSE_DOF]);
    let cfg = load(dir.path(), &json.to_string());
    let r = run_track(&cfg, true).unwrap();
    assert_eq!(r.poses.len(), 1);
    for (a, b) in r.poses[0].as_slice().iter().zip(&start) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn same_seed_gives_identical_poses() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &body_script(2));
    let mut cfg = load(dir.path(), &body_config(""));
    let run = |cfg: &voxelcap_cli::PipelineConfig| {
        run_track(cfg, true).unwrap();
        fs::read(cfg.output.join("poses.csv")).unwrap()
    };
    let first = run(&cfg);
    let again = run(&cfg);
    cfg.parallel.workers = 3;
    cfg.output = dir.path().join("out3");
    assert_eq!(first, again);
    assert_eq!(first, run(&cfg));
    cfg.schedule.seed += 1;
    assert_ne!(first, run(&cfg));
}

#[test]
fn bench_with_one_worker_reports_unit_speedup() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &body_script(1));
    let cfg = load(dir.path(), &body_config(""));
    let report = run_bench(&cfg, &[1]).unwrap();
    assert_eq!(report.entries.len(), 1);
    let e = &report.entries[0];
    assert!(e.speedup.values().all(|&s| s == 1.0));
    for stage in ["total", "fusion", "filter", "reprojection", "silhouette"] {
        assert!(e.mean.contains_key(stage), "missing {stage}");
        assert_eq!(e.samples[stage].len(), report.runs);
    }
    let json: serde_json::Value = serde_json::to_value(&report).unwrap();
    for key in ["runs", "frames", "entries"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    for key in ["workers", "effective_workers", "samples", "mean", "speedup"] {
        assert!(json["entries"][0].get(key).is_some(), "missing {key}");
    }
    assert!(!cfg.output.join("bench_scratch").exists());
}
