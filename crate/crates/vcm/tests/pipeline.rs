use std::path::{Path, PathBuf};

use vcm::checkpoint::Checkpoint;
use vcm::cli::main_with_args;
use vcm::codec_ext::CodecSpec;
use vcm::evaluate::{evaluate, metrics_csv, EvalOptions};
use vcm::manifest::Manifest;
use vcm::prepare::{prepare, JobStatus, PrepareOptions};
use vcm::synth::synthesize_into;
use vcm::trainer::{checkpoint_path, train, RunConfig};
use vcm::video::load_sequence;
use vcm_core::codec::{rgb_to_yuv420, yuv420_to_rgb};
use vcm_core::metrics::CurveLabel;
use vcm_core::net::{NetConfig, PostProcNet};

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["vcm"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn prepared(dir: &Path, qps: &[u8]) -> PathBuf {
    let m = synthesize_into(&dir.join("data"), 2, 12).unwrap();
    prepare(&PrepareOptions {
        manifest: m,
        out: dir.join("prep"),
        qps: Some(qps.to_vec()),
        codec: CodecSpec::Mock,
        encoder_config: None,
        jobs: 2,
        dry_run: false,
    })
    .unwrap()
    .manifest
}

fn tiny_run(manifest: &Path, out: &Path, steps: u64) -> RunConfig {
    RunConfig {
        manifest: manifest.to_path_buf(),
        out: out.to_path_buf(),
        backend: "toy:rgb".into(),
        batch_size: 2,
        patch_size: 16,
        max_steps: steps,
        checkpoint_every: 3,
        seed: 7,
        net: NetConfig {
            base_width: 4,
            growth: 4,
            num_rrdb: 1,
            dense_layers_per_block: 2,
            dense_blocks_per_rrdb: 1,
            ..NetConfig::default()
        },
        optimizer: vcm_core::training::AdamConfig {
            learning_rate: 1e-3,
            ..Default::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn missing_manifest_is_a_usage_error() {
    assert_eq!(cli(&["train", "--manifest", "/nonexistent/m.json"]), 2);
    assert_eq!(cli(&["prepare", "--manifest", "/nonexistent/m.json"]), 2);
    assert_eq!(cli(&["evaluate", "--manifest", "/nonexistent/m.json"]), 2);
    assert_eq!(cli(&["prepare"]), 2);
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "bogus_key = 1\n").unwrap();
    assert_eq!(cli(&["train", "--config", &s(&bad)]), 2);
}

#[test]
fn prepare_qp4_matches_a_yuv_round_trip_and_is_idempotent() {
    let d = tempfile::tempdir().unwrap();
    let manifest = prepared(d.path(), &[4]);
    let m = Manifest::load(&manifest).unwrap();
    let seq = &m.sequences[0];
    let raw = load_sequence(&seq.raw, None).unwrap();
    let dec = load_sequence(&seq.decoded[&4].path, None).unwrap();
    for (r, d) in raw.frames.iter().zip(&dec.frames) {
        let expect = vcm::video::quantize_rgb8(&yuv420_to_rgb(&rgb_to_yuv420(r).unwrap()).unwrap());
        assert_eq!(&expect, d);
    }
    let again = prepare(&PrepareOptions {
        manifest: d.path().join("data/manifest.json"),
        out: d.path().join("prep"),
        qps: Some(vec![4]),
        codec: CodecSpec::Mock,
        encoder_config: None,
        jobs: 1,
        dry_run: false,
    })
    .unwrap();
    assert_eq!(again.count(JobStatus::Ran), 0);
    assert_eq!(again.count(JobStatus::Skipped), 1);
    assert_eq!(
        cli(&["prepare", "--manifest", &s(&d.path().join("data/manifest.json")), "--qps", "4", "--out", &s(&d.path().join("prep"))]),
        0
    );
}

#[test]
fn dry_runs_touch_nothing() {
    let d = tempfile::tempdir().unwrap();
    let m = synthesize_into(&d.path().join("data"), 1, 4).unwrap();
    let out = d.path().join("prep");
    assert_eq!(cli(&["prepare", "--manifest", &s(&m), "--qps", "37", "--dry-run", "--out", &s(&out)]), 0);
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn resumed_training_equals_uninterrupted_training() {
    let d = tempfile::tempdir().unwrap();
    let manifest = prepared(d.path(), &[40]);
    let straight = tiny_run(&manifest, &d.path().join("a"), 6);
    train(&straight).unwrap();
    let first = tiny_run(&manifest, &d.path().join("b"), 3);
    train(&first).unwrap();
    let resumed = RunConfig {
        max_steps: 6,
        resume: Some(checkpoint_path(&first.out, 3)),
        ..first.clone()
    };
    train(&resumed).unwrap();
    let a = std::fs::read(checkpoint_path(&straight.out, 6)).unwrap();
    let b = std::fs::read(checkpoint_path(&first.out, 6)).unwrap();
    assert_eq!(a, b);
    let log = std::fs::read_to_string(first.out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 7);
}

#[test]
fn untrained_checkpoint_postprocesses_to_identity() {
    let d = tempfile::tempdir().unwrap();
    let manifest = prepared(d.path(), &[40]);
    let ckpt = d.path().join("init.ckpt");
    Checkpoint::network(PostProcNet::build(NetConfig::default(), 0).unwrap())
        .save(&ckpt)
        .unwrap();
    let out = d.path().join("post");
    assert_eq!(
        cli(&["postprocess", "--checkpoint", &s(&ckpt), "--manifest", &s(&manifest), "--out", &s(&out)]),
        0
    );
    let m = Manifest::load(&manifest).unwrap();
    let post = Manifest::load(&out.join("post_manifest.json")).unwrap();
    let a = load_sequence(&m.sequences[0].decoded[&40].path, None).unwrap();
    let b = load_sequence(&post.sequences[0].decoded[&40].path, None).unwrap();
    assert!(a.frames == b.frames, "post-processed frames differ");
    assert_eq!(post.sequences[0].decoded[&40].bitstream, m.sequences[0].decoded[&40].bitstream);
}

#[test]
fn perfect_and_empty_detectors_bracket_map() {
    let d = tempfile::tempdir().unwrap();
    let manifest = prepared(d.path(), &[4]);
    let opts = EvalOptions {
        manifest: manifest.clone(),
        post_manifest: None,
        backend: "toy".into(),
        conf: 0.25,
        iou: 0.5,
        qps: None,
        jobs: 1,
    };
    let rows = evaluate(&opts).unwrap();
    assert_eq!(rows[0].map, Some(100.0));
    let silent = EvalOptions {
        backend: "external:true {input} && : > {output}".into(),
        ..opts.clone()
    };
    let rows = evaluate(&silent).unwrap();
    assert_eq!(rows[0].map, Some(0.0));
    assert!(rows[0].f1.values().all(|v| v.is_none_or(|f| f == 0.0)));
}

#[test]
fn two_labels_form_two_groups_and_csv_is_stable() {
    let d = tempfile::tempdir().unwrap();
    let manifest = prepared(d.path(), &[34, 40]);
    let ckpt = d.path().join("init.ckpt");
    Checkpoint::network(PostProcNet::build(NetConfig::default(), 0).unwrap())
        .save(&ckpt)
        .unwrap();
    let post = vcm::postprocess::postprocess_manifest(&ckpt, &manifest, &d.path().join("post"), None, 1).unwrap();
    let opts = EvalOptions {
        manifest,
        post_manifest: Some(post),
        backend: "toy".into(),
        conf: 0.25,
        iou: 0.5,
        qps: None,
        jobs: 2,
    };
    let rows = evaluate(&opts).unwrap();
    let labels: Vec<_> = rows.iter().map(|r| (r.label, r.qp)).collect();
    assert_eq!(
        labels,
        vec![
            (CurveLabel::Encoded, 34),
            (CurveLabel::Encoded, 40),
            (CurveLabel::Postprocessed, 34),
            (CurveLabel::Postprocessed, 40)
        ]
    );
    // identity post-processing: same accuracy, same bitrate
    assert_eq!(rows[0].map, rows[2].map);
    assert_eq!(rows[1].kbps, rows[3].kbps);
    assert_eq!(metrics_csv(&rows), metrics_csv(&evaluate(&opts).unwrap()));
}

#[test]
fn cli_smoke_run() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    assert_eq!(cli(&["synth", "--frames", "8", "--out", &s(&root.join("data"))]), 0);
    assert_eq!(
        cli(&["prepare", "--manifest", &s(&root.join("data/manifest.json")), "--qps", "40", "--out", &s(&root.join("prep"))]),
        0
    );
    let cfg = tiny_run(&root.join("prep/manifest.json"), &root.join("train"), 4);
    std::fs::write(root.join("run.toml"), cfg.to_toml()).unwrap();
    assert_eq!(cli(&["train", "--config", &s(&root.join("run.toml")), "--dry-run"]), 0);
    assert!(!root.join("train").exists());
    assert_eq!(cli(&["train", "--config", &s(&root.join("run.toml"))]), 0);
    let ckpt = checkpoint_path(&root.join("train"), 4);
    let decoded = root.join("prep/jobs/synth00/qp40/decoded.y4m");
    assert_eq!(
        cli(&["postprocess", "--checkpoint", &s(&ckpt), "--input", &s(&decoded), "--output", &s(&root.join("single"))]),
        0
    );
    let a = load_sequence(&decoded, None).unwrap();
    let b = load_sequence(&root.join("single"), None).unwrap();
    assert_eq!(a.len(), b.len());
    assert!(a.frames != b.frames, "trained network changed nothing");
    assert_eq!(cli(&["detect", "--input", &s(&root.join("single")), "--out", &s(&root.join("dets"))]), 0);
    assert!(root.join("dets/000007.txt").exists());
    assert_eq!(
        cli(&["evaluate", "--manifest", &s(&root.join("prep/manifest.json")), "--out", &s(&root.join("eval"))]),
        0
    );
    assert_eq!(
        cli(&["report", "--metrics", &s(&root.join("eval/metrics.csv")), "--out", &s(&root.join("report"))]),
        0
    );
    let table = std::fs::read_to_string(root.join("report/gap_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.trim_end().ends_with(','), "no post-processed row, so the gap is blank: {table}");
}

#[test]
fn one_step_writes_one_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let manifest = prepared(d.path(), &[40]);
    let cfg = tiny_run(&manifest, &d.path().join("one"), 1);
    train(&cfg).unwrap();
    let ckpts = std::fs::read_dir(cfg.out.join("checkpoints"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ckpt"))
        .count();
    assert_eq!(ckpts, 1);
    assert!(checkpoint_path(&cfg.out, 1).exists());
}
