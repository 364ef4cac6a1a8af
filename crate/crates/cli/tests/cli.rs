//! End-to-end runs of the tsviz binary on a miniature experiment.

use std::path::Path;
use std::process::{Command, Output};

fn tsviz(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsviz"))
        .args(args)
        .current_dir(dir)
        .env("TSVIZ_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        "# miniature end-to-end run\n\
         image_size = 16\n\
         channels = 4\n\
         fc_width = 8\n\
         num_classes = 2\n\
         per_class = 5\n\
         seed = 5\n\
         learning_rate = 0.002\n\
         epochs = 2\n\
         batch_size = 2\n\
         eval_images = 3\n\
         viz_images = 2\n\
         gradcheck_samples = 2\n\
         out_dir = out\n",
    )
    .unwrap();
    path
}

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir);

    let out = tsviz(&["--config", "run.cfg", "generate"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/dataset/manifest.csv").exists());

    let out = tsviz(&["--config", "run.cfg", "train"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/model.ckpt").exists());
    let csv = std::fs::read_to_string(dir.join("out/training.csv")).unwrap();
    assert!(csv.starts_with("epoch,"));
    assert_eq!(csv.lines().count(), 3);

    let out = tsviz(&["--config", "run.cfg", "visualize"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "img000.ppm",
        "img000.reconstruction.ppm",
        "img000.proposed.pgm",
        "img000.proposed.mask.pgm",
        "img001.gradcam.pgm",
        "img001.gradient.mask.pgm",
    ] {
        assert!(dir.join("out/viz").join(name).exists(), "{name}");
    }

    let out = tsviz(&["--config", "run.cfg", "evaluate"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean AOPC proposed"));
    let curve = std::fs::read_to_string(dir.join("out/eval/proposed.curve.csv")).unwrap();
    assert!(curve.starts_with("j,mean_f\n"));
    assert_eq!(curve.lines().count(), 13);
    assert!(dir.join("out/eval/aopc.csv").exists());
    assert!(dir.join("out/eval/clusters.csv").exists());
    assert!(dir.join("out/eval/histogram.csv").exists());

    let out = tsviz(
        &["--config", "run.cfg", "--f-class", "label", "compare"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.join("out/compare.csv")).unwrap();
    assert!(table.starts_with("method,mean_aopc,mean_iou,zero_share,mid_share,high_share\n"));
    assert_eq!(table.lines().count(), 4);

    let out = tsviz(&["--config", "run.cfg", "gradcheck"], dir);
    assert!(
        out.status.success(),
        "gradcheck: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradient check passed"));
}

#[test]
fn generate_is_deterministic_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir);
    let out = tsviz(&["--config", "run.cfg", "generate", "--out", "a"], dir);
    assert!(out.status.success());
    let out = tsviz(&["--config", "run.cfg", "generate", "--out", "b"], dir);
    assert!(out.status.success());
    let ma = std::fs::read(dir.join("a/dataset/manifest.csv")).unwrap();
    let mb = std::fs::read(dir.join("b/dataset/manifest.csv")).unwrap();
    assert_eq!(ma, mb);
    let ia = std::fs::read(dir.join("a/dataset/healthy/0000.ppm")).unwrap();
    let ib = std::fs::read(dir.join("b/dataset/healthy/0000.ppm")).unwrap();
    assert_eq!(ia, ib);
}

#[test]
fn user_errors_exit_two_without_a_stack_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // No seed anywhere.
    let out = tsviz(&["generate"], dir);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("seed"), "{err}");
    assert!(!err.contains("panicked"), "{err}");

    // Unknown config key.
    std::fs::write(dir.join("bad.cfg"), "learning_rate = 0.1\nwat = 7\n").unwrap();
    let out = tsviz(&["--config", "bad.cfg", "generate", "--seed", "1"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    // Train before generate.
    write_config(dir);
    let out = tsviz(&["--config", "run.cfg", "train"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate"));

    // Unknown method flag value.
    let out = tsviz(&["--config", "run.cfg", "--method", "lime", "generate"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));
}
