use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qrbsa_core::data::{read_volume, sparse_section, write_volume, OrientationVolume};
use qrbsa_core::metrics::MetricReport;
use qrbsa_core::quat::Quat;
use qrbsa_core::train::EpochRecord;
use tempfile::TempDir;

fn qrbsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrbsa")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qrbsa(args);
    assert!(
        out.status.success(),
        "qrbsa {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, dims: &str, grains: &str, seed: &str) -> PathBuf {
    let path = dir.join(name);
    ok(&["synth", "--dims", dims, "--grains", grains, "--seed", seed, "--out", s(&path)]);
    path
}

fn tiny_config(dir: &Path, data: &Path, channels: usize, epochs: usize) -> PathBuf {
    let cfg = serde_json::json!({
        "network": {"feature_channels": channels, "n_qrsa_blocks": 1, "heads": 1},
        "lr": 2e-3,
        "epochs": epochs,
        "scale": 2,
        "schedule": {"sizes": [8], "epoch_boundaries": []},
        "split": null,
        "data": data,
        "checkpoint_dir": dir.join("ckpt"),
        "eval_interval": 5,
    });
    let path = dir.join(format!("run_{channels}.json"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn read_log(path: &Path) -> Vec<EpochRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_is_deterministic_and_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), "a.qvol", "8,12,10", "5", "7");
    let b = synth(dir.path(), "b.qvol", "8,12,10", "5", "7");
    let c = synth(dir.path(), "c.qvol", "8,12,10", "5", "8");
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn one_grain_is_a_constant_volume() {
    let dir = TempDir::new().unwrap();
    let vol = read_volume(synth(dir.path(), "one.qvol", "4,5,6", "1", "3")).unwrap();
    let first = vol.get_raw(0, 0, 0);
    assert!(vol.data().chunks_exact(4).all(|q| q == first));
}

#[test]
fn infer_shapes_suffixes_and_unit_output() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "vol.qvol", "16,16,16", "4", "1");
    let cfg = tiny_config(dir.path(), &data, 8, 1);
    ok(&["train", "--config", s(&cfg)]);
    let ckpt = dir.path().join("ckpt/last.qckpt");

    // identity orientations everywhere, 8 planes deep
    let lr = OrientationVolume::constant([8, 16, 12], Quat::new(1.0, 0.0, 0.0, 0.0)).unwrap();
    let lr_path = dir.path().join("lr.qvol");
    write_volume(&lr, &lr_path).unwrap();
    let out = dir.path().join("sr.qvol");
    ok(&["infer", "--checkpoint", s(&ckpt), "--in", s(&lr_path), "--out", s(&out)]);
    for suffix in ["xnormal", "ynormal"] {
        let path = dir.path().join(format!("sr_{suffix}.qvol"));
        let sr = read_volume(&path).expect("both normals written");
        assert_eq!(sr.dims(), [16, 16, 12]);
        for q in sr.data().chunks_exact(4) {
            let q = Quat::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
            assert!((q.norm() - 1.0).abs() < 1e-5);
            assert_eq!(q.hemisphere(), q);
        }
        let ipf = dir.path().join(format!("sr_{suffix}_ipf/plane_00015.png"));
        assert!(ipf.exists(), "{ipf:?}");
    }
    assert!(!out.exists());

    let single = dir.path().join("x.qvol");
    ok(&["infer", "--checkpoint", s(&ckpt), "--in", s(&lr_path), "--normal", "x", "--out", s(&single), "--no-png"]);
    assert_eq!(read_volume(&single).unwrap().dims(), [16, 16, 12]);

    let refused = qrbsa(&["infer", "--checkpoint", s(&ckpt), "--in", s(&lr_path), "--out", s(&single), "--scale", "4"]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("scale"));
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let dir = TempDir::new().unwrap();
    let truth = synth(dir.path(), "t.qvol", "6,16,16", "5", "2");
    let report = dir.path().join("r.json");
    ok(&["eval", "--pred", s(&truth), "--truth", s(&truth), "--report", s(&report)]);
    let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.psnr_db, 100.0);
    assert_eq!(r.ssim, 1.0);
    assert_eq!(r.mean_misorientation_deg, 0.0);
    assert_eq!(r.per_plane.len(), 6);
    assert!(dir.path().join("r_diff/plane_00005.png").exists());
}

#[test]
fn nearest_plane_baseline_is_finite() {
    let dir = TempDir::new().unwrap();
    let truth = synth(dir.path(), "t.qvol", "16,16,16", "6", "4");
    let lr = dir.path().join("lr.qvol");
    ok(&["section", "--in", s(&truth), "--stride", "2", "--out", s(&lr)]);
    assert_eq!(read_volume(&lr).unwrap(), sparse_section(&read_volume(&truth).unwrap(), 2).unwrap());
    let report = dir.path().join("base.json");
    ok(&["eval", "--baseline", "nearest-plane", "--lr", s(&lr), "--truth", s(&truth), "--report", s(&report), "--no-png"]);
    let r: MetricReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r.psnr_db.is_finite() && r.ssim.is_finite() && r.mean_misorientation_deg.is_finite());
    assert!(r.mean_misorientation_deg > 0.0);
    // retained planes are exact
    assert_eq!(r.per_plane[0].psnr_db, 100.0);
}

#[test]
fn eval_refuses_mismatched_dims() {
    let dir = TempDir::new().unwrap();
    let a = synth(dir.path(), "a.qvol", "4,16,16", "3", "1");
    let b = synth(dir.path(), "b.qvol", "4,16,12", "3", "1");
    let out = qrbsa(&["eval", "--pred", s(&a), "--truth", s(&b), "--report", s(&dir.path().join("r.json"))]);
    assert!(!out.status.success());
}

#[test]
fn tiny_training_run_lowers_the_smoothed_loss() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "vol.qvol", "16,16,16", "4", "5");
    let cfg = tiny_config(dir.path(), &data, 32, 50);
    let stdout = ok(&["train", "--config", s(&cfg)]);
    assert!(stdout.contains("best validation misorientation"));
    let log = read_log(&dir.path().join("ckpt/train_log.jsonl"));
    assert_eq!(log.len(), 50);
    assert!(log.iter().enumerate().all(|(i, r)| r.epoch == i && r.patch_size == 8));
    let means: Vec<f64> = log.chunks(10).map(|c| c.iter().map(|r| r.loss).sum::<f64>() / 10.0).collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "smoothed loss {means:?}");
    for name in ["best.qckpt", "last.qckpt"] {
        assert!(dir.path().join("ckpt").join(name).exists());
    }
}

#[test]
fn resume_appends_the_same_epochs_as_an_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "vol.qvol", "16,16,16", "4", "6");
    let cfg = tiny_config(dir.path(), &data, 8, 10);

    let whole = dir.path().join("whole");
    ok(&["--verify", "train", "--config", s(&cfg), "--checkpoint-dir", s(&whole)]);

    let split = dir.path().join("split");
    ok(&["--verify", "train", "--config", s(&cfg), "--checkpoint-dir", s(&split), "--epochs", "5"]);
    let ckpt = split.join("last.qckpt");
    ok(&["--verify", "train", "--config", s(&cfg), "--checkpoint-dir", s(&split), "--resume", s(&ckpt)]);

    let a = std::fs::read_to_string(whole.join("train_log.jsonl")).unwrap();
    let b = std::fs::read_to_string(split.join("train_log.jsonl")).unwrap();
    // the first half was evaluated as the run's last epoch, so compare losses
    let loss = |t: &str| t.lines().map(|l| serde_json::from_str::<EpochRecord>(l).unwrap().loss).collect::<Vec<_>>();
    assert_eq!(loss(&a), loss(&b));
}

#[test]
fn resume_with_another_network_is_refused() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), "vol.qvol", "16,16,16", "4", "6");
    let small = tiny_config(dir.path(), &data, 8, 1);
    ok(&["train", "--config", s(&small)]);
    let ckpt = dir.path().join("ckpt/last.qckpt");
    let wide = tiny_config(dir.path(), &data, 16, 2);
    let out = qrbsa(&["train", "--config", s(&wide), "--resume", s(&ckpt)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("feature_channels"), "{err}");
}

#[test]
fn config_prints_presets() {
    let json = ok(&["config", "--preset", "desk"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["scale"], 2);
    assert_eq!(v["network"]["feature_channels"], 32);
    assert!(!qrbsa(&["config", "--preset", "nope"]).status.success());
}
