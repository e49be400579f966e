//! Integration tests for the `sisn` binary: exit codes, error lines, and the
//! documented subcommand examples.

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sisn::data::{save_image, ImageU8};

fn sisn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sisn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).trim().to_string()
}

fn write_noise_images(dir: &Path, n: usize, size: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for i in 0..n {
        let px = (0..3 * size * size).map(|_| rng.gen()).collect();
        save_image(&ImageU8::new(size, size, px).unwrap(), &dir.join(format!("n{i}.png"))).unwrap();
    }
}

#[test]
fn degrade_rejects_unsupported_scale() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    write_noise_images(&hr, 1, 16);
    let out = sisn(&[
        "degrade",
        "--hr-dir",
        hr.to_str().unwrap(),
        "--scale",
        "3",
        "--out",
        dir.path().join("ds").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr_line(&out);
    assert!(err.starts_with("error[invalid-config]"), "{err}");
    assert!(err.contains('3'), "{err}");
}

#[test]
fn degrade_counts_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    write_noise_images(&hr, 10, 32);
    let run = |out_dir: &Path| {
        let out = sisn(&[
            "degrade",
            "--hr-dir",
            hr.to_str().unwrap(),
            "--scale",
            "4",
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert!(out.status.success(), "{}", stderr_line(&out));
        String::from_utf8_lossy(&out.stdout).to_string()
    };
    let a_dir = dir.path().join("a");
    let b_dir = dir.path().join("b");
    let stdout = run(&a_dir);
    assert!(stdout.contains("10 pairs"), "{stdout}");
    run(&b_dir);
    assert_eq!(
        std::fs::read(a_dir.join("manifest.txt")).unwrap(),
        std::fs::read(b_dir.join("manifest.txt")).unwrap()
    );
    // quarter dims for every LR image
    for i in 0..10 {
        let lr = sisn::data::load_image(&a_dir.join(format!("lr/n{i}.png"))).unwrap();
        assert_eq!((lr.width, lr.height), (8, 8));
    }
}

#[test]
fn infer_x8_checkpoint_produces_8x_dims() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    write_noise_images(&hr, 1, 64);
    let ds = dir.path().join("ds");
    let out = sisn(&[
        "degrade",
        "--hr-dir",
        hr.to_str().unwrap(),
        "--scale",
        "8",
        "--out",
        ds.to_str().unwrap(),
        "--ratios",
        "1/0/0",
    ]);
    assert!(out.status.success(), "{}", stderr_line(&out));

    // epochs = 0 gives an initialized checkpoint without training
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[model]\nscale = 8\nnum_esag = 1\nnum_isab = 1\nchannels = 8\n[train]\nepochs = 0\n",
    )
    .unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let out = sisn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        ds.join("manifest.txt").to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_line(&out));

    // 32x32 LR in, 256x256 SR out
    let lr_img = dir.path().join("small.png");
    write_noise_images(&dir.path().join("tmp32"), 1, 32);
    std::fs::rename(dir.path().join("tmp32/n0.png"), &lr_img).unwrap();
    let sr = dir.path().join("sr.png");
    let out = sisn(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        lr_img.to_str().unwrap(),
        "--out",
        sr.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_line(&out));
    let sr = sisn::data::load_image(&sr).unwrap();
    assert_eq!((sr.width, sr.height), (256, 256));
}

#[test]
fn eval_reports_and_config_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();

    // missing checkpoint file -> io error class
    let out = sisn(&[
        "eval",
        "--checkpoint",
        dir.path().join("nope.ckpt").to_str().unwrap(),
        "--manifest",
        dir.path().join("nope.txt").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[io]"), "{}", stderr_line(&out));

    // bad config key -> parse error naming file and line
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nlerning_rate = 0.1\n").unwrap();
    let out = sisn(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        dir.path().join("nope.txt").to_str().unwrap(),
        "--checkpoint",
        dir.path().join("m.ckpt").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr_line(&out);
    // manifest is loaded first; accept either failure order but require the
    // one-line error[class] shape
    assert!(err.starts_with("error["), "{err}");
}

#[test]
fn invalid_thread_env_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_sisn"))
        .args(["gradcheck", "--preset", "toy"])
        .env("SISN_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = stderr_line(&out);
    assert!(err.starts_with("error[invalid-config]"), "{err}");
    assert!(err.contains("SISN_THREADS"), "{err}");
}

#[test]
fn ablate_toy_grid_emits_table() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    write_noise_images(&hr, 3, 16);
    let ds = dir.path().join("ds");
    let out = sisn(&[
        "degrade",
        "--hr-dir",
        hr.to_str().unwrap(),
        "--scale",
        "2",
        "--out",
        ds.to_str().unwrap(),
        "--ratios",
        "2/1/0",
    ]);
    assert!(out.status.success(), "{}", stderr_line(&out));
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[model]\nscale = 2\nchannels = 8\n[train]\nepochs = 1\nbatch_size = 2\nlr_patch = 8\n",
    )
    .unwrap();
    let table_path = dir.path().join("table.tsv");
    let out = sisn(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--manifest",
        ds.join("manifest.txt").to_str().unwrap(),
        "--sweep-isab",
        "1",
        "1",
        "2",
        "--out",
        table_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_line(&out));
    let table = std::fs::read_to_string(&table_path).unwrap();
    assert!(table.starts_with("esags\tisabs\tpsnr_db\tssim\n"), "{table}");
    assert_eq!(table.lines().count(), 3, "{table}");
}
