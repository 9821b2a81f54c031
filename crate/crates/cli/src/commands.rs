//! Subcommand implementations. Each returns the text printed on stdout.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fcmad::checkpoint::{load_dual, load_fr, save_dual, save_fr};
use fcmad::datamine::{split_identities, CorpusItem, SplitPlan};
use fcmad::desk::{build_corpus, generate_bona_fides, generate_morphs, generate_selfmorphs, run_desk, GeneratedFace};
use fcmad::evalbench::{
    apcer_at_bpcer, compare_runs, det_curve, det_svg, format_value, generate_protocol, score_protocol, DetCurve,
    FusionMode, Protocol, ScoreOutcome, ScoreSet,
};
use fcmad::image::{parse_landmarks, render_landmarks, GrayImage};
use fcmad::loss::VariantTag;
use fcmad::manifest::{read_manifest, write_manifest, DatasetRecord, MorphFamily, SampleKind};
use fcmad::synth::{FaceImage, FaceSpace};
use fcmad::trainer::{train, train_fr};
use fcmad::{seed, selftest, Error, Result};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.tsv";
pub const MORPH_MANIFEST: &str = "morphs.tsv";
pub const SPLIT: &str = "split.tsv";
pub const RESOLVED: &str = "config.resolved.txt";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_resolved(cfg: &RunConfig, dir: &Path, command: &str) -> Result<()> {
    write(&dir.join(RESOLVED), format!("# command = {command}\n{}", cfg.to_text()))
}

fn landmark_path(image_path: &str) -> String {
    match image_path.strip_suffix(".pgm") {
        Some(stem) => format!("{stem}.lm"),
        None => format!("{image_path}.lm"),
    }
}

/// Seed of the dataset generated under root `seed` (same derivation as the
/// in-memory experiment's training set).
fn data_seed(root: u64) -> u64 {
    seed::derive(root, "train-data")
}

fn world(cfg: &RunConfig) -> Result<FaceSpace> {
    FaceSpace::new(cfg.synth()?, seed::derive(cfg.seed()?, "world"))
}

fn save_faces(dir: &Path, faces: &[GeneratedFace], with_landmarks: bool) -> Result<()> {
    for g in faces {
        let path = dir.join(&g.record.path);
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        g.face.pixels.save_pgm(&path)?;
        if with_landmarks {
            write(
                &dir.join(landmark_path(&g.record.path)),
                render_landmarks(&g.face.landmarks),
            )?;
        }
    }
    Ok(())
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("not found; {hint}")),
        ))
    }
}

fn read_split(dir: &Path) -> Result<SplitPlan> {
    let path = dir.join(SPLIT);
    require(&path, "run `fcmad gen-data` first")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    SplitPlan::from_text(&text, &path.display().to_string())
}

fn read_bona_fides(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let path = dir.join(MANIFEST);
    require(&path, "run `fcmad gen-data` first")?;
    read_manifest(&path)
}

/// Bona fide and (if present) morph records of a dataset directory.
fn read_records(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let mut records = read_bona_fides(dir)?;
    let morphs = dir.join(MORPH_MANIFEST);
    if morphs.is_file() {
        records.extend(read_manifest(&morphs)?);
    }
    Ok(records)
}

pub fn gen_data(cfg: &RunConfig) -> Result<String> {
    let data = cfg.data()?;
    let space = world(cfg)?;
    let dseed = data_seed(cfg.seed()?);
    let ids = data.ids();
    let split = split_identities(&ids, seed::derive(dseed, "split"))?;
    let bona = generate_bona_fides(&space, &ids, data.images_per_identity, seed::derive(dseed, "bona-fide"));
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    save_faces(&dir, &bona, true)?;
    let records: Vec<DatasetRecord> = bona.iter().map(|g| g.record.clone()).collect();
    write_manifest(&dir.join(MANIFEST), &records)?;
    write(&dir.join(SPLIT), split.to_text())?;
    write_resolved(cfg, &dir, "gen-data")?;
    Ok(format!(
        "wrote {} bona fide images of {} identities to {}\n",
        records.len(),
        ids.len(),
        dir.display()
    ))
}

fn load_bona_faces(dir: &Path) -> Result<Vec<GeneratedFace>> {
    read_bona_fides(dir)?
        .into_iter()
        .filter(|r| r.kind == SampleKind::BonaFide)
        .map(|record| {
            let pixels = GrayImage::load_pgm(&dir.join(&record.path))?;
            let lm_path = dir.join(landmark_path(&record.path));
            let text = fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
            let landmarks = parse_landmarks(&text, &lm_path.display().to_string())?;
            Ok(GeneratedFace {
                face: FaceImage {
                    pixels,
                    landmarks,
                    identity_id: record.id_first,
                },
                record,
            })
        })
        .collect()
}

pub fn gen_morphs(cfg: &RunConfig) -> Result<String> {
    let data = cfg.data()?;
    let dir = cfg.data_dir();
    let split = read_split(&dir)?;
    let bona = load_bona_faces(&dir)?;
    let space = world(cfg)?;
    let dseed = data_seed(cfg.seed()?);
    let originals = bona.len();
    let count = |ratio: f64| (ratio * originals as f64).round() as usize;
    let mut faces = Vec::new();
    for &family in &data.families {
        let fam = family.to_string();
        faces.extend(generate_selfmorphs(
            &space,
            &bona,
            family,
            count(data.selfmorph_ratio),
            data.blend_alpha,
            seed::derive(seed::derive(dseed, "selfmorph"), &fam),
        )?);
        faces.extend(generate_morphs(
            &space,
            &bona,
            &split,
            family,
            count(data.morph_ratio),
            data.blend_alpha,
            seed::derive(seed::derive(dseed, "morph"), &fam),
        )?);
    }
    // Selfmorphs first, then morphs, as in the in-memory dataset.
    faces.sort_by_key(|g| g.record.kind.is_morph());
    save_faces(&dir, &faces, false)?;
    let records: Vec<DatasetRecord> = faces.iter().map(|g| g.record.clone()).collect();
    write_manifest(&dir.join(MORPH_MANIFEST), &records)?;
    write_resolved(cfg, &dir, "gen-morphs")?;
    let mut out = String::new();
    for &family in &data.families {
        for kind in [SampleKind::SelfMorph(family), SampleKind::Morph(family)] {
            let n = records.iter().filter(|r| r.kind == kind).count();
            let _ = writeln!(out, "{kind}: {n}");
        }
    }
    Ok(out)
}

fn load_items(dir: &Path, records: &[DatasetRecord]) -> Result<Vec<CorpusItem>> {
    records
        .iter()
        .map(|r| {
            Ok(CorpusItem {
                record: r.clone(),
                image: GrayImage::load_pgm(&dir.join(&r.path))?,
            })
        })
        .collect()
}

fn training_corpus(cfg: &RunConfig) -> Result<fcmad::datamine::Corpus> {
    let dir = cfg.data_dir();
    let root = cfg.seed()?;
    let split = read_split(&dir)?;
    let (train_split, _) = split.holdout(cfg.get("validation_fraction")?, seed::derive(root, "holdout"))?;
    require(&dir.join(MORPH_MANIFEST), "run `fcmad gen-morphs` first")?;
    let records = read_records(&dir)?;
    let families: Vec<MorphFamily> = cfg.list("train_families")?;
    let pick =
        |f: fn(SampleKind) -> bool| -> Vec<DatasetRecord> { records.iter().filter(|r| f(r.kind)).cloned().collect() };
    let bona = pick(|k| k.is_original());
    let selfm = pick(|k| matches!(k, SampleKind::SelfMorph(_)));
    let morphs = pick(SampleKind::is_morph);
    build_corpus(
        &train_split,
        &families,
        load_items(&dir, &bona)?,
        load_items(&dir, &selfm)?,
        load_items(&dir, &morphs)?,
        seed::derive(root, "corpus"),
    )
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let corpus = training_corpus(cfg)?;
    let model_cfg = cfg.model()?;
    let (model, report) = train(&corpus, &model_cfg, &cfg.train()?, seed::derive(cfg.seed()?, "train"))?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let ckpt = cfg.checkpoint();
    save_dual(&model, &ckpt)?;
    write(&out.join(format!("train-{}.csv", model_cfg.variant)), report.to_csv())?;
    write_resolved(cfg, &out, "train")?;
    let (first, last) = report.l3_progress(0.1);
    Ok(format!(
        "trained {} on {} samples for {} steps; l3 {:.4} -> {:.4}; checkpoint {}\n",
        model_cfg.variant,
        corpus.len(),
        report.records.len(),
        first,
        last,
        ckpt.display()
    ))
}

pub fn train_fr_cmd(cfg: &RunConfig) -> Result<String> {
    let corpus = training_corpus(cfg)?;
    let (fr, losses) = train_fr(&corpus, &cfg.model()?, &cfg.sgd()?, seed::derive(cfg.seed()?, "fr"))?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let ckpt = cfg.path("fr_checkpoint").unwrap_or_else(|| out.join("fr.ckpt"));
    save_fr(&fr, &ckpt)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l:e}");
    }
    write(&out.join("train-fr.csv"), csv)?;
    write_resolved(cfg, &out, "train-fr")?;
    Ok(format!(
        "trained face recognition model for {} steps; final loss {:.4}; checkpoint {}\n",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    ))
}

pub fn gen_protocol(cfg: &RunConfig) -> Result<String> {
    let records = read_records(&cfg.data_dir())?;
    let family: MorphFamily = cfg.get("eval_family")?;
    let build = generate_protocol(
        &records,
        family,
        cfg.get("bona_pairs_per_identity")?,
        seed::derive(cfg.seed()?, "protocol"),
    )?;
    let path = cfg.protocol_path()?;
    write(&path, build.protocol.to_text())?;
    write_resolved(cfg, &cfg.out_dir(), "gen-protocol")?;
    let mut out = String::new();
    for w in &build.warnings {
        eprintln!("warning: {w}");
    }
    let p = &build.protocol;
    let _ = writeln!(
        out,
        "{family} protocol: {} bona fide and {} morph trials -> {}",
        p.count(fcmad::evalbench::Truth::BonaFide),
        p.count(fcmad::evalbench::Truth::Morph),
        path.display()
    );
    Ok(out)
}

fn read_protocol(cfg: &RunConfig) -> Result<Protocol> {
    let path = cfg.protocol_path()?;
    require(&path, "run `fcmad gen-protocol` or set `protocol`")?;
    Protocol::read(&path)
}

fn metrics_csv(scores: &[f64], truths: &[fcmad::evalbench::Truth], deltas: &[f64]) -> Result<String> {
    let mut s = String::from("delta,apcer,bpcer,threshold\n");
    for &d in deltas {
        let op = apcer_at_bpcer(scores, truths, d)?;
        let _ = writeln!(
            s,
            "{},{},{},{}",
            d,
            format_value(op.apcer),
            format_value(op.bpcer),
            format_value(op.threshold)
        );
    }
    Ok(s)
}

fn check_failures(outcome: &ScoreOutcome, out: &Path, name: &str) -> Result<()> {
    if outcome.failures.is_empty() {
        return Ok(());
    }
    let mut text = String::new();
    for (id, msg) in &outcome.failures {
        let _ = writeln!(text, "{id}\t{msg}");
    }
    let path = out.join(format!("{name}-failures.txt"));
    write(&path, text)?;
    Err(Error::Protocol(format!(
        "{} of the protocol's pairs could not be scored; see {}",
        outcome.failures.len(),
        path.display()
    )))
}

pub fn eval(cfg: &RunConfig) -> Result<String> {
    let deltas = cfg.deltas()?;
    let ckpt = cfg.checkpoint();
    require(&ckpt, "train a model first or set `checkpoint`")?;
    let model = load_dual(&ckpt)?;
    let protocol = read_protocol(cfg)?;
    let data = cfg.data_dir();
    let out = cfg.out_dir();
    create_dir(&out)?;
    let loader = |p: &str| GrayImage::load_pgm(&data.join(p));

    let outcome = score_protocol(&protocol, loader, |a, b| model.score_images(a, b));
    check_failures(&outcome, &out, "scores")?;
    let scores = outcome.score_set();
    scores.write(&out.join("scores.txt"))?;
    let (s, t) = scores.align(&protocol)?;
    let mut report = String::new();
    let metrics = metrics_csv(&s, &t, &deltas)?;
    write(&out.join("metrics.csv"), &metrics)?;
    let _ = write!(report, "{} ({})\n{metrics}", model.variant, ckpt.display());
    let det = det_curve(&s, &t)?;
    write(&out.join("det.csv"), det.to_csv())?;
    let mut curves: Vec<(String, DetCurve)> = vec![(model.variant.to_string(), det)];

    if let Some(fr_path) = cfg.path("fr_checkpoint") {
        require(&fr_path, "run `fcmad train-fr` first")?;
        let fr = load_fr(&fr_path)?;
        let sim = score_protocol(&protocol, loader, |a, b| fr.similarity(a.pixels(), b.pixels()));
        check_failures(&sim, &out, "similarity")?;
        let sim = sim.score_set();
        sim.write(&out.join("similarity.txt"))?;
        for mode in cfg.list::<FusionMode>("fusion")? {
            let fused = scores.fuse(&sim, mode)?;
            fused.write(&out.join(format!("scores-fused-{mode}.txt")))?;
            let (fs, ft) = fused.align(&protocol)?;
            let m = metrics_csv(&fs, &ft, &deltas)?;
            write(&out.join(format!("metrics-fused-{mode}.csv")), &m)?;
            let _ = write!(report, "fused {mode}\n{m}");
            let det = det_curve(&fs, &ft)?;
            write(&out.join(format!("det-fused-{mode}.csv")), det.to_csv())?;
            curves.push((format!("{}+fr {mode}", model.variant), det));
        }
    }
    write(&out.join("det.svg"), det_svg(&curves, "DET"))?;
    write_resolved(cfg, &out, "eval")?;
    Ok(report)
}

/// Parses `name=path` score arguments.
pub fn parse_score_args(items: &[String]) -> Result<Vec<(String, PathBuf)>> {
    items
        .iter()
        .map(|s| {
            let (name, path) = s
                .split_once('=')
                .filter(|(n, p)| !n.is_empty() && !p.is_empty())
                .ok_or_else(|| Error::Config(format!("score argument `{s}` must be name=path")))?;
            Ok((name.to_string(), PathBuf::from(path)))
        })
        .collect()
}

pub fn compare(cfg: &RunConfig) -> Result<String> {
    let items: Vec<String> = cfg.list("scores")?;
    if items.is_empty() {
        return Err(Error::Config("compare needs at least one --score name=path".into()));
    }
    let protocol = read_protocol(cfg)?;
    let runs = parse_score_args(&items)?
        .into_iter()
        .map(|(name, path)| Ok((name, ScoreSet::read(&path)?)))
        .collect::<Result<Vec<_>>>()?;
    let protocol_name = format!("protocol-{}", cfg.raw("eval_family"));
    let cmp = compare_runs(&runs, &protocol, &protocol_name, &cfg.deltas()?)?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    write(&out.join("comparison.csv"), cmp.to_csv())?;
    let table = cmp.to_table();
    write(&out.join("comparison_table.csv"), &table)?;
    write(&out.join("comparison_det.svg"), det_svg(&cmp.dets, &protocol_name))?;
    write_resolved(cfg, &out, "compare")?;
    Ok(table)
}

pub fn selftest_cmd(cfg: &RunConfig) -> Result<String> {
    let report = selftest::run(&cfg.selftest()?)?;
    let text = report.to_text();
    if report.passed() {
        Ok(text)
    } else {
        print!("{text}");
        Err(Error::Numeric(format!(
            "selftest failed: max relative gradient error {:.3e}, {} metric mismatches",
            report.max_rel_error(),
            report.oracle.mismatches
        )))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn desk(cfg: &RunConfig) -> Result<String> {
    let desk_cfg = cfg.desk()?;
    let seeds: Vec<u64> = cfg.list("seeds")?;
    if seeds.is_empty() {
        return Err(Error::Config("`seeds` is empty".into()));
    }
    let out = cfg.out_dir();
    create_dir(&out)?;
    let mut csv = String::from("seed,method,delta,apcer,threshold\n");
    let mut sep = String::from("seed,variant,separation_first,separation_second\n");
    let mut at01: HashMap<String, Vec<f64>> = HashMap::new();
    let mut methods: Vec<String> = Vec::new();
    for &s in &seeds {
        let o = run_desk(&desk_cfg, s)?;
        let mut rows: Vec<(String, Vec<fcmad::evalbench::OperatingPoint>)> = o
            .variants
            .iter()
            .map(|v| (v.variant.to_string(), v.points.clone()))
            .collect();
        for (mode, pts) in &o.fused {
            rows.push((format!("{}+fr-{mode}", VariantTag::FcV2), pts.clone()));
        }
        for (name, pts) in rows {
            for (d, p) in desk_cfg.deltas.iter().zip(&pts) {
                let _ = writeln!(
                    csv,
                    "{s},{name},{d},{},{}",
                    format_value(p.apcer),
                    format_value(p.threshold)
                );
            }
            if !methods.contains(&name) {
                methods.push(name.clone());
            }
            at01.entry(name).or_default().push(pts[0].apcer);
        }
        for v in &o.variants {
            let _ = writeln!(sep, "{s},{},{},{}", v.variant, v.separation.first, v.separation.second);
        }
        o.variant(VariantTag::FcV2)
            .scores
            .write(&out.join(format!("scores-seed{s}-fc-v2.txt")))?;
    }
    write(&out.join("desk.csv"), &csv)?;
    write(&out.join("desk-separation.csv"), &sep)?;
    write_resolved(cfg, &out, "desk")?;
    let mut report = format!("median APCER@BPCER={} over seeds {:?}\n", desk_cfg.deltas[0], seeds);
    for m in methods {
        let _ = writeln!(report, "{m:<28} {:.4}", median(at01[&m].clone()));
    }
    report.push_str(&sep);
    Ok(report)
}
