use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hdgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdgan"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_on_every_subcommand_exits_zero_with_defaults() {
    let top = hdgan(&["--help"]);
    assert_eq!(code(&top), 0);
    for sub in [
        "synth",
        "validate-store",
        "train",
        "eval",
        "infer",
        "export-pairs",
    ] {
        let out = hdgan(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub}");
        assert!(String::from_utf8_lossy(&top.stdout).contains(sub));
    }
    let train = String::from_utf8(hdgan(&["train", "--help"]).stdout).unwrap();
    for flag in [
        "--lr <LR>",
        "[default: 0.0001]",
        "--train <N_TRAIN>",
        "[default: 16]",
        "[default: 4]",
        "--hidden",
        "[default: 256,128]",
        "--batch",
        "[default: 64]",
        "--epochs",
        "--patience",
        "--dropout",
        "--ensemble",
        "--mode",
        "[default: nearest]",
        "--seed",
        "--out",
    ] {
        assert!(train.contains(flag), "train --help lacks {flag}:\n{train}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let out = hdgan(&["synth", "--out", "x", "--seed", "1", "--bogus"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&hdgan(&["synth", "--out", p(&dir.path().join("s"))])),
        2,
        "seed is required"
    );
    assert_eq!(
        code(&hdgan(&[
            "infer", "--store", "s", "--image", "a", "--out", "o", "--model", "m", "--vote",
            "median"
        ])),
        2
    );
}

#[test]
fn missing_store_is_io_error() {
    let out = hdgan(&[
        "eval",
        "--store",
        "/nonexistent/store",
        "--model",
        "m.hdgm",
        "--split",
        "test",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn workflow_synth_validate_train_eval_infer_export() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("S");
    let model = dir.path().join("m.hdgm");
    assert_eq!(
        code(&hdgan(&[
            "synth",
            "--out",
            p(&store),
            "--seed",
            "1",
            "--images",
            "36",
            "--size",
            "32"
        ])),
        0
    );
    assert_eq!(code(&hdgan(&["validate-store", p(&store)])), 0);

    let train = hdgan(&[
        "train",
        "--store",
        p(&store),
        "--train",
        "16",
        "--val",
        "4",
        "--test",
        "16",
        "--seed",
        "7",
        "--out",
        p(&model),
        "--epochs",
        "2",
        "--hidden",
        "32,16",
        "--pixels-per-image",
        "256",
    ]);
    assert_eq!(
        code(&train),
        0,
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    assert!(model.exists());
    let history = fs::read_to_string(dir.path().join("m.history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_accuracy\n1,"));

    let report = dir.path().join("r.csv");
    let eval = hdgan(&[
        "eval",
        "--store",
        p(&store),
        "--model",
        p(&model),
        "--split",
        "test",
        "--seed",
        "7",
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&eval), 0);
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.contains("Glomerulus") && table.contains("Mean Dice:"));
    assert!(fs::read_to_string(&report)
        .unwrap()
        .starts_with("class,accuracy_pct,dice\n"));

    let mask = dir.path().join("p.pgm");
    let infer = hdgan(&[
        "infer",
        "--store",
        p(&store),
        "--model",
        p(&model),
        "--image",
        "img_000",
        "--chunk-mb",
        "1",
        "--out",
        p(&mask),
    ]);
    assert_eq!(code(&infer), 0);
    assert!(fs::read(&mask).unwrap().starts_with(b"P5\n32 32\n255\n"));
    let unknown = hdgan(&[
        "infer",
        "--store",
        p(&store),
        "--model",
        p(&model),
        "--image",
        "nope",
        "--out",
        p(&mask),
    ]);
    assert_eq!(code(&unknown), 1);

    let pairs = dir.path().join("pairs");
    let export = hdgan(&[
        "export-pairs",
        "--store",
        p(&store),
        "--model",
        &format!("{0},{0}", p(&model)),
        "--out",
        p(&pairs),
        "--images",
        "img_001,img_002",
    ]);
    assert_eq!(code(&export), 0);
    assert!(pairs.join("masks/img_002.pgm").exists() && pairs.join("images/img_001.ppm").exists());

    let bad = hdgan(&[
        "train",
        "--store",
        p(&store),
        "--seed",
        "7",
        "--out",
        p(&model),
        "--epochs",
        "0",
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn ensemble_members_get_numbered_files() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("S");
    assert_eq!(
        code(&hdgan(&[
            "synth",
            "--out",
            p(&store),
            "--seed",
            "2",
            "--images",
            "4",
            "--size",
            "16",
            "--block",
            "4:3",
            "--block",
            "16:2"
        ])),
        0
    );
    let out = hdgan(&[
        "train",
        "--store",
        p(&store),
        "--train",
        "2",
        "--val",
        "1",
        "--test",
        "1",
        "--seed",
        "3",
        "--out",
        p(&dir.path().join("e.hdgm")),
        "--ensemble",
        "2",
        "--epochs",
        "1",
        "--hidden",
        "8,8",
        "--pixels-per-image",
        "64",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..2 {
        assert!(dir.path().join(format!("e_{i}.hdgm")).exists());
        assert!(dir.path().join(format!("e_{i}.history.csv")).exists());
    }
}

#[test]
fn corrupted_store_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("S");
    assert_eq!(
        code(&hdgan(&[
            "synth",
            "--out",
            p(&store),
            "--seed",
            "1",
            "--images",
            "2",
            "--size",
            "16"
        ])),
        0
    );
    let block = store.join("images/img_000/block_0.hdgf");
    let mut bytes = fs::read(&block).unwrap();
    bytes[0] = b'X';
    fs::write(&block, bytes).unwrap();
    assert_eq!(code(&hdgan(&["validate-store", p(&store)])), 1);
}
