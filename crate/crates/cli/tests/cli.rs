//! Command-level tests driving the `dehaze` binary end to end on tiny
//! datasets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dehaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dehaze"))
        .args(args)
        .env("DEHAZE_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_fails_with(out: &Output, needle: &str, what: &str) {
    assert!(!out.status.success(), "{what} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let error_lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(
        error_lines.len(),
        1,
        "{what}: expected one machine-parsable error line, got: {stderr}"
    );
    assert!(
        error_lines[0].contains(needle),
        "{what}: error line `{}` does not mention `{needle}`",
        error_lines[0]
    );
}

/// Tiny dataset + short training so command tests stay fast.
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.txt");
    let base = "seed = 9\n\
                width = 32\n\
                height = 32\n\
                train_scenes = 4\n\
                val_scenes = 2\n\
                samples_per_scene = 2\n\
                steps_dehaze = 12\n\
                val_cadence = 6\n\
                checkpoint_cadence = 6\n\
                removal_blocks = 2\n\
                removal_layers_per_block = 2\n\
                removal_filters = 8\n";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// The single run directory created under `out`.
fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected one run dir under {}", out.display());
    dirs.pop().unwrap()
}

#[test]
fn synth_writes_a_valid_deterministic_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", out_a.to_str().unwrap()]), "synth a");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", out_b.to_str().unwrap()]), "synth b");

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&out_a.join("manifest.json"))).unwrap();
    let samples = manifest["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 4 * 2 + 2 * 2);
    let train_count = samples.iter().filter(|s| s["split"] == "train").count();
    assert_eq!(train_count, 8);

    // identical seeds give identical bytes, manifest and images alike
    assert_eq!(read(&out_a.join("manifest.json")), read(&out_b.join("manifest.json")));
    for s in samples.iter().take(3) {
        let rel = s["hazy"].as_str().unwrap();
        assert_eq!(read(&out_a.join(rel)), read(&out_b.join(rel)), "{rel}");
    }
}

#[test]
fn synth_rejects_unknown_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.txt");
    std::fs::write(&config, "seeed = 9\nstepz = 4\n").unwrap();
    let out = dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert_fails_with(&out, "seeed", "synth with bad keys");
    assert_fails_with(&out, "stepz", "synth with bad keys");
}

#[test]
fn synth_fails_on_unwritable_out() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let blocker = tmp.path().join("blocker");
    std::fs::write(&blocker, b"file").unwrap();
    let out_dir = blocker.join("nested");
    let out = dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn train_missing_manifest_is_a_single_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let out = dehaze(&[
        "train", "--mode", "dehaze",
        "--config", config.to_str().unwrap(),
        "--data", tmp.path().join("nope/manifest.json").to_str().unwrap(),
        "--out", tmp.path().join("runs").to_str().unwrap(),
    ]);
    assert_fails_with(&out, "manifest", "train without manifest");
}

#[test]
fn refine_mode_requires_a_dehaze_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]), "synth");
    let out = dehaze(&[
        "train", "--mode", "refine",
        "--config", config.to_str().unwrap(),
        "--data", data.join("manifest.json").to_str().unwrap(),
        "--out", tmp.path().join("runs").to_str().unwrap(),
    ]);
    assert_fails_with(&out, "--resume", "refine without resume");
}

#[test]
fn manifest_validation_detects_missing_files() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]), "synth");
    // remove one referenced file
    std::fs::remove_file(data.join("train/scene0000_s00_hazy.png")).unwrap();
    let out = dehaze(&[
        "train", "--mode", "dehaze",
        "--config", config.to_str().unwrap(),
        "--data", data.join("manifest.json").to_str().unwrap(),
        "--out", tmp.path().join("runs").to_str().unwrap(),
    ]);
    assert_fails_with(&out, "scene0000_s00_hazy.png", "train with missing file");
}

#[test]
fn train_eval_flow_is_deterministic_and_reports_are_recomputable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]), "synth");
    let manifest = data.join("manifest.json");

    let runs_a = tmp.path().join("runs_a");
    let runs_b = tmp.path().join("runs_b");
    for runs in [&runs_a, &runs_b] {
        assert_ok(&dehaze(&[
            "train", "--mode", "dehaze",
            "--config", config.to_str().unwrap(),
            "--data", manifest.to_str().unwrap(),
            "--out", runs.to_str().unwrap(),
        ]), "train");
    }
    let dir_a = run_dir(&runs_a);
    let dir_b = run_dir(&runs_b);
    assert_eq!(read(&dir_a.join("train.log")), read(&dir_b.join("train.log")));
    assert_eq!(
        read(&dir_a.join("checkpoint_final.ckpt")),
        read(&dir_b.join("checkpoint_final.ckpt"))
    );
    assert!(dir_a.join("run_info.txt").exists());

    let report_a = tmp.path().join("report_a.csv");
    let report_b = tmp.path().join("report_b.csv");
    for (report, dir) in [(&report_a, &dir_a), (&report_b, &dir_b)] {
        assert_ok(&dehaze(&[
            "eval",
            "--ckpt", dir.join("checkpoint_final.ckpt").to_str().unwrap(),
            "--data", manifest.to_str().unwrap(),
            "--split", "val",
            "--out", report.to_str().unwrap(),
        ]), "eval");
    }
    assert_eq!(read(&report_a), read(&report_b));
    assert!(report_a.with_extension("txt").exists());

    let text = String::from_utf8(read(&report_a)).unwrap();
    for method in ["identity", "oracle", "dehazed"] {
        assert!(
            text.contains(&format!("# method={method}")),
            "report missing {method} section"
        );
    }
    // averages recomputable from rows
    let mut rows: Vec<f64> = Vec::new();
    let mut average = None;
    for line in text.lines() {
        let mut parts = line.split(',');
        let (Some(method), Some(id), Some(mse)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        if method != "dehazed" {
            continue;
        }
        if id == "average" {
            average = Some(mse.parse::<f64>().unwrap());
        } else if id != "id" {
            rows.push(mse.parse::<f64>().unwrap());
        }
    }
    let avg = average.expect("average row present");
    let recomputed = rows.iter().sum::<f64>() / rows.len() as f64;
    assert!((avg - recomputed).abs() < 1e-9, "{avg} vs {recomputed}");
}

#[test]
fn resume_continues_step_numbering_in_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let config16 = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]), "synth");
    let manifest = data.join("manifest.json");

    let runs_a = tmp.path().join("runs_a");
    assert_ok(&dehaze(&[
        "train", "--mode", "dehaze",
        "--config", config.to_str().unwrap(),
        "--data", manifest.to_str().unwrap(),
        "--out", runs_a.to_str().unwrap(),
    ]), "first train");
    let ckpt = run_dir(&runs_a).join("checkpoint_final.ckpt");

    // same config with a larger total budget, resumed from the checkpoint
    std::fs::write(
        &config16,
        std::fs::read_to_string(&config).unwrap().replace("steps_dehaze = 12", "steps_dehaze = 20"),
    )
    .unwrap();
    let runs_b = tmp.path().join("runs_b");
    assert_ok(&dehaze(&[
        "train", "--mode", "dehaze",
        "--config", config16.to_str().unwrap(),
        "--data", manifest.to_str().unwrap(),
        "--out", runs_b.to_str().unwrap(),
        "--resume", ckpt.to_str().unwrap(),
    ]), "resumed train");
    let log = String::from_utf8(read(&run_dir(&runs_b).join("train.log"))).unwrap();
    let first = log.lines().next().unwrap();
    assert!(first.contains("step=12"), "resumed log starts at step 12: {first}");
    assert!(log.lines().last().unwrap().contains("step=19"));
}

#[test]
fn run_writes_transmission_dehazed_and_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]), "synth");
    let runs = tmp.path().join("runs");
    assert_ok(&dehaze(&[
        "train", "--mode", "dehaze",
        "--config", config.to_str().unwrap(),
        "--data", data.join("manifest.json").to_str().unwrap(),
        "--out", runs.to_str().unwrap(),
    ]), "train");
    let ckpt = run_dir(&runs).join("checkpoint_final.ckpt");

    let input = data.join("val/scene0004_s00_hazy.png");
    let out_a = tmp.path().join("out_a");
    let out_b = tmp.path().join("out_b");
    for out in [&out_a, &out_b] {
        assert_ok(&dehaze(&[
            "run",
            "--ckpt", ckpt.to_str().unwrap(),
            "--stage", "dehaze",
            "--in", input.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ]), "run");
    }
    let t_path = out_a.join("scene0004_s00_hazy_transmission.png");
    let d_path = out_a.join("scene0004_s00_hazy_dehazed.png");
    assert!(t_path.exists() && d_path.exists());
    // grayscale single-channel transmission
    let t_img = image::open(&t_path).unwrap();
    assert_eq!(t_img.color().channel_count(), 1);
    assert_eq!(read(&t_path), read(&out_b.join("scene0004_s00_hazy_transmission.png")));
    assert_eq!(read(&d_path), read(&out_b.join("scene0004_s00_hazy_dehazed.png")));
}

#[test]
fn run_accepts_ppm_and_arbitrary_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let data = tmp.path().join("data");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]), "synth");
    let runs = tmp.path().join("runs");
    assert_ok(&dehaze(&[
        "train", "--mode", "dehaze",
        "--config", config.to_str().unwrap(),
        "--data", data.join("manifest.json").to_str().unwrap(),
        "--out", runs.to_str().unwrap(),
    ]), "train");
    let ckpt = run_dir(&runs).join("checkpoint_final.ckpt");

    // a binary PPM and an odd-sized (310x230) PNG; dehazing is fully
    // convolutional so both must be accepted
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let ppm = tmp.path().join("input.ppm");
    let mut small = image::RgbImage::new(24, 20);
    for p in small.pixels_mut() {
        *p = image::Rgb([rng.random(), rng.random(), rng.random()]);
    }
    small.save(&ppm).unwrap();
    let png = tmp.path().join("paper_size.png");
    let mut big = image::RgbImage::new(310, 230);
    for p in big.pixels_mut() {
        *p = image::Rgb([rng.random(), rng.random(), rng.random()]);
    }
    big.save(&png).unwrap();

    let out = tmp.path().join("out");
    assert_ok(&dehaze(&[
        "run",
        "--ckpt", ckpt.to_str().unwrap(),
        "--stage", "dehaze",
        "--in", ppm.to_str().unwrap(), png.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]), "run on ppm + 310x230");
    assert!(out.join("input_dehazed.png").exists());
    assert!(out.join("paper_size_dehazed.png").exists());
}

#[test]
fn refinement_trains_via_cli_and_runs_standalone() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(
        tmp.path(),
        "refine_phase1_steps = 4\nrefine_phase2_steps = 2\nbatch_size_refine = 2\n\
         generator_layers = 5\ngenerator_filters = 8\ngenerator_skips = 1\n",
    );
    let data = tmp.path().join("data");
    assert_ok(&dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", data.to_str().unwrap()]), "synth");
    let manifest = data.join("manifest.json");

    let runs = tmp.path().join("runs");
    assert_ok(&dehaze(&[
        "train", "--mode", "dehaze",
        "--config", config.to_str().unwrap(),
        "--data", manifest.to_str().unwrap(),
        "--out", runs.to_str().unwrap(),
    ]), "dehaze train");
    let dehaze_ckpt = run_dir(&runs).join("checkpoint_final.ckpt");

    let refine_runs = tmp.path().join("refine_runs");
    assert_ok(&dehaze(&[
        "train", "--mode", "refine",
        "--config", config.to_str().unwrap(),
        "--data", manifest.to_str().unwrap(),
        "--out", refine_runs.to_str().unwrap(),
        "--resume", dehaze_ckpt.to_str().unwrap(),
    ]), "refine train");
    let refine_dir = run_dir(&refine_runs);
    assert!(refine_dir.join("checkpoint_phase1.ckpt").exists());
    let refine_ckpt = refine_dir.join("checkpoint_final.ckpt");

    let out = tmp.path().join("out");
    assert_ok(&dehaze(&[
        "run",
        "--ckpt", refine_ckpt.to_str().unwrap(),
        "--stage", "refine",
        "--in", data.join("val/scene0004_s00_hazy.png").to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]), "run refine");
    assert!(out.join("scene0004_s00_hazy_refined.png").exists());

    // eval on a refine checkpoint reports the refined method too
    let report = tmp.path().join("report.csv");
    assert_ok(&dehaze(&[
        "eval",
        "--ckpt", refine_ckpt.to_str().unwrap(),
        "--data", manifest.to_str().unwrap(),
        "--split", "val",
        "--out", report.to_str().unwrap(),
    ]), "eval refine");
    let text = String::from_utf8(read(&report)).unwrap();
    assert!(text.contains("# method=refined"));
}

#[test]
fn quiet_mode_emits_nothing_on_success() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny_config(tmp.path(), "");
    let out = dehaze(&["synth", "--config", config.to_str().unwrap(), "--out", tmp.path().join("d").to_str().unwrap()]);
    assert_ok(&out, "synth");
    assert!(out.stderr.is_empty(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
