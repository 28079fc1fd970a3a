use std::path::Path;

use spnet_cli::{run, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use spnet_core::data::{read_mask, read_probability_map, write_mask};
use spnet_core::BinaryMask;

fn spnet(args: &[&str]) -> i32 {
    run(std::iter::once("spnet").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pyramid_of_empty_mask_puts_everything_in_the_top_residual() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("g.pgm");
    write_mask(&BinaryMask::zeros(32, 32), &gt).unwrap();
    let out = dir.path().join("pyr");
    assert_eq!(
        spnet(&["pyramid", "--gt", s(&gt), "--levels", "3", "--out", s(&out)]),
        EXIT_OK
    );
    for k in 0..3 {
        let a = read_mask(&out.join(format!("a{k}.pgm"))).unwrap();
        assert!(a.is_empty(), "a{k} should be all black");
    }
    let top = read_mask(&out.join("a3.pgm")).unwrap();
    assert_eq!(top.count_ones(), 32 * 32);
    assert_eq!(read_mask(&out.join("g3.pgm")).unwrap().dims(), (4, 4));
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn pyramid_rejects_indivisible_dims() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("g.pgm");
    write_mask(&BinaryMask::zeros(30, 32), &gt).unwrap();
    let out = dir.path().join("pyr");
    assert_ne!(
        spnet(&["pyramid", "--gt", s(&gt), "--levels", "3", "--out", s(&out)]),
        EXIT_OK
    );
}

#[test]
fn gradcheck_exit_code_follows_tolerance() {
    assert_eq!(
        spnet(&["gradcheck", "--seed", "7", "--per-tensor", "6"]),
        EXIT_OK
    );
    assert_eq!(
        spnet(&[
            "gradcheck",
            "--seed",
            "7",
            "--per-tensor",
            "2",
            "--tolerance",
            "0"
        ]),
        EXIT_NUMERIC
    );
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(spnet(&["train", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(spnet(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(spnet(&["--help"]), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pgm");
    let out = dir.path().join("o");
    assert_eq!(
        spnet(&["pyramid", "--gt", s(&missing), "--out", s(&out)]),
        EXIT_DATA
    );
    assert_eq!(
        spnet(&[
            "predict",
            "--ckpt",
            s(&missing),
            "--image",
            s(&missing),
            "--out",
            s(&out)
        ]),
        EXIT_DATA
    );
    let data = dir.path().join("d");
    assert_eq!(
        spnet(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--lambda",
            "1",
            "2"
        ]),
        EXIT_USAGE
    );
    assert_eq!(
        spnet(&[
            "train",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--loss-terms",
            "g,l9"
        ]),
        EXIT_USAGE
    );
}

fn tiny_train(data: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--base-channels",
        "4",
        "--no-batchnorm",
        "--patches-per-image",
        "24",
        "--batch-size",
        "4",
        "--iterations",
        "6",
        "--val-every",
        "3",
        "--val-batches",
        "1",
        "--block-size",
        "32",
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    spnet(&args)
}

#[test]
fn train_on_one_dataset_evaluate_on_another() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("synthA");
    let b = dir.path().join("synthB");
    for (root, seed) in [(&a, "1"), (&b, "2")] {
        assert_eq!(
            spnet(&[
                "synth",
                "--out",
                s(root),
                "--count",
                "3",
                "--size",
                "64",
                "--seed",
                seed
            ]),
            EXIT_OK
        );
    }
    let run_dir = dir.path().join("run");
    assert_eq!(tiny_train(&a, &run_dir, &[]), EXIT_OK);
    for f in ["best.spnt", "last.spnt", "train_log.csv", "manifest.json"] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }

    let preds = dir.path().join("preds");
    let ckpt = run_dir.join("best.spnt");
    assert_eq!(
        spnet(&[
            "predict",
            "--ckpt",
            s(&ckpt),
            "--image",
            s(&b),
            "--out",
            s(&preds)
        ]),
        EXIT_OK
    );
    for i in 0..3 {
        let (_, h, w) = read_probability_map(&preds.join(format!("synth{i:03}.pgm"))).unwrap();
        assert_eq!((h, w), (64, 64));
    }

    let report = dir.path().join("report");
    assert_eq!(
        spnet(&[
            "eval",
            "--pred",
            s(&preds),
            "--gt",
            s(&b),
            "--out",
            s(&report)
        ]),
        EXIT_OK
    );
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(report.join("metrics.json")).unwrap()).unwrap();
    let auc = metrics["pooled_auc"].as_f64().expect("pooled AUC present");
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(metrics["images"].as_array().unwrap().len(), 3);
    let roc = std::fs::read_to_string(report.join("roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr"));
    let pr = std::fs::read_to_string(report.join("pr.csv")).unwrap();
    assert!(pr.starts_with("threshold,recall,precision"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(report.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "eval");
}

#[test]
fn identical_runs_write_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        spnet(&[
            "synth",
            "--out",
            s(&data),
            "--count",
            "2",
            "--size",
            "64",
            "--seed",
            "5"
        ]),
        EXIT_OK
    );
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    assert_eq!(tiny_train(&data, &r1, &["--loss-terms", "g,l0"]), EXIT_OK);
    assert_eq!(tiny_train(&data, &r2, &["--loss-terms", "g,l0"]), EXIT_OK);
    for f in ["best.spnt", "last.spnt", "train_log.csv"] {
        assert_eq!(
            std::fs::read(r1.join(f)).unwrap(),
            std::fs::read(r2.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let hash = |p: &Path| -> serde_json::Value {
        serde_json::from_slice::<serde_json::Value>(
            &std::fs::read(p.join("manifest.json")).unwrap(),
        )
        .unwrap()["checkpoint_hash"]
            .clone()
    };
    assert_eq!(hash(&r1), hash(&r2));
    assert_eq!(hash(&r1).as_str().unwrap().len(), 64);
}
