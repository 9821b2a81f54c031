use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fcmad");

const SMALL: &str = "\
identities = 10
images_per_identity = 4
hidden_dims = 24
feature_dim = 8
epochs = 2
batch_size = 8
bona_pairs_per_identity = 2
";

fn fcmad(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fcmad(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    dir
}

fn prepared() -> tempfile::TempDir {
    let dir = workspace();
    let p = dir.path();
    ok(p, &["gen-data", "--config", "small.cfg"]);
    ok(p, &["gen-morphs", "--config", "small.cfg"]);
    dir
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_data_writes_one_row_per_image_and_is_reproducible() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &["gen-data", "--config", "small.cfg", "--data_dir", "a"]);
    ok(p, &["gen-data", "--config", "small.cfg", "--data_dir", "b"]);
    let manifest = fs::read_to_string(p.join("a/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 40);
    assert_eq!(read(&p.join("a/manifest.tsv")), read(&p.join("b/manifest.tsv")));
    assert_eq!(read(&p.join("a/split.tsv")), read(&p.join("b/split.tsv")));
    for line in manifest.lines() {
        let path = line.split('\t').next().unwrap();
        assert_eq!(read(&p.join("a").join(path)), read(&p.join("b").join(path)));
    }
    let resolved = fs::read_to_string(p.join("a/config.resolved.txt")).unwrap();
    assert!(resolved.contains("identities = 10\n"));
    assert!(resolved.contains("data_dir = a\n"));
}

#[test]
fn gen_morphs_respects_family_and_ratios() {
    let dir = workspace();
    let p = dir.path();
    ok(p, &["gen-data", "--config", "small.cfg"]);
    let out = ok(p, &["gen-morphs", "--config", "small.cfg", "--families", "landmark"]);
    assert!(out.contains("morph-lm: 40"));
    let rows = fs::read_to_string(p.join("data/morphs.tsv")).unwrap();
    let kinds: Vec<&str> = rows.lines().map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert!(kinds.iter().all(|k| *k == "selfmorph-lm" || *k == "morph-lm"));
    let morphs = kinds.iter().filter(|k| **k == "morph-lm").count();
    let selfmorphs = kinds.iter().filter(|k| **k == "selfmorph-lm").count();
    // Two originals per selfmorph, one per morph (default ratios).
    assert_eq!((selfmorphs, morphs), (20, 40));
}

#[test]
fn gen_morphs_without_dataset_names_the_missing_file() {
    let dir = workspace();
    let out = fcmad(dir.path(), &["gen-morphs", "--config", "small.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("split.tsv") || err.contains("manifest.tsv"), "{err}");
    assert!(err.contains("gen-data"), "{err}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = workspace();
    assert_eq!(
        fcmad(dir.path(), &["train", "--no_such_key", "1"]).status.code(),
        Some(1)
    );
    fs::write(dir.path().join("bad.cfg"), "no_such_key = 3\n").unwrap();
    let out = fcmad(dir.path(), &["gen-data", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    assert_eq!(
        fcmad(dir.path(), &["gen-data", "--epochs", "zero"]).status.code(),
        Some(1)
    );
    assert_eq!(
        fcmad(dir.path(), &["train", "--variant", "fc-v9"]).status.code(),
        Some(1)
    );
    assert_eq!(fcmad(dir.path(), &[]).status.code(), Some(1));
}

#[test]
fn help_documents_every_key() {
    let dir = workspace();
    let help = ok(dir.path(), &["train", "--help"]);
    for k in fcmad_cli::config::KEYS {
        assert!(help.contains(&format!("--{}", k.name)), "missing {}", k.name);
    }
    assert!(help.contains("--config"));
}

#[test]
fn eval_without_checkpoint_fails() {
    let dir = prepared();
    let out = fcmad(dir.path(), &["eval", "--config", "small.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.ckpt"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = prepared();
    let out = fcmad(
        dir.path(),
        &[
            "train",
            "--config",
            "small.cfg",
            "--activation",
            "identity",
            "--lr_start",
            "10",
            "--lr_end",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn selftest_passes_and_reports_error() {
    let dir = workspace();
    let out = ok(dir.path(), &["selftest"]);
    assert!(out.contains("max_rel_error"));
    assert!(out.contains("selftest passed"));
    let bad = fcmad(dir.path(), &["selftest", "--corrupt_gradient", "true"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn pipeline_is_reproducible_end_to_end() {
    let dir = prepared();
    let p = dir.path();
    let base = "--config small.cfg --eval_family landmark";
    let run = |args: String| ok(p, &args.split_whitespace().collect::<Vec<_>>());
    run(format!("gen-protocol {base}"));
    for o in ["r1", "r2"] {
        run(format!("train {base} --variant fc-v2 --out_dir {o}"));
        run(format!("train-fr {base} --out_dir {o}"));
        run(format!(
            "eval {base} --out_dir {o} --protocol out/protocol-landmark.txt --fr_checkpoint {o}/fr.ckpt --delta 0.2 --delta 0.05"
        ));
    }
    for f in [
        "model.ckpt",
        "fr.ckpt",
        "train-fc-v2.csv",
        "scores.txt",
        "metrics.csv",
        "det.csv",
        "det.svg",
        "similarity.txt",
        "scores-fused-dissimilarity.txt",
        "metrics-fused-literal.csv",
    ] {
        assert_eq!(read(&p.join("r1").join(f)), read(&p.join("r2").join(f)), "{f} differs");
    }
    let metrics = fs::read_to_string(p.join("r1/metrics.csv")).unwrap();
    assert!(metrics.starts_with("delta,apcer,bpcer,threshold\n0.2,"));
    assert!(metrics.contains("\n0.05,"));
    let resolved = fs::read_to_string(p.join("r1/config.resolved.txt")).unwrap();
    assert!(resolved.contains("deltas = 0.2,0.05\n"));

    let table = run(format!(
        "compare {base} --out_dir cmp --protocol out/protocol-landmark.txt \
         --score v2=r1/scores.txt --score v2fr=r1/scores-fused-dissimilarity.txt"
    ));
    assert!(table.starts_with("method,protocol,apcer@0.1,apcer@0.01\n"));
    assert!(table.contains("\nv2,protocol-landmark,"));
    let csv = fs::read_to_string(p.join("cmp/comparison.csv")).unwrap();
    assert!(csv.starts_with("method,delta,apcer,threshold\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn variants_are_selectable() {
    let dir = prepared();
    let p = dir.path();
    for v in ["bc", "fc-v1", "fc-v2"] {
        let out = ok(p, &["train", "--config", "small.cfg", "--variant", v, "--epochs", "1"]);
        assert!(out.starts_with(&format!("trained {v} ")), "{out}");
        let ckpt = fs::read(p.join("out/model.ckpt")).unwrap();
        assert_eq!(fcmad::checkpoint::peek_variant(&ckpt).unwrap().to_string(), v);
    }
}

#[test]
fn cli_data_matches_in_memory_generation() {
    use fcmad::desk::{DataConfig, Dataset};
    use fcmad::synth::{FaceSpace, SynthConfig};
    let dir = prepared();
    let space = FaceSpace::new(SynthConfig::default(), fcmad::seed::derive(1, "world")).unwrap();
    let cfg = DataConfig {
        identities: 10,
        images_per_identity: 4,
        ..DataConfig::default()
    };
    let d = Dataset::generate(&space, &cfg, fcmad::seed::derive(1, "train-data")).unwrap();
    let disk = fs::read_to_string(dir.path().join("data/morphs.tsv")).unwrap();
    let mem = fcmad::manifest::render_manifest(&d.records()[40..]);
    assert_eq!(disk, mem);
    for g in d.all() {
        let img = fcmad::image::GrayImage::load_pgm(&dir.path().join("data").join(&g.record.path)).unwrap();
        assert_eq!(img, g.face.pixels, "{}", g.record.path);
    }
}
