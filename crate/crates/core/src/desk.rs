//! Synthetic dataset generation and the in-memory end-to-end experiment
//! (train BC / FC-V1 / FC-V2 on one morph family, benchmark on another).

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::RngExt;

use crate::datamine::{assemble_dataset, plan_morph_pairs, split_identities, ClassMap, Corpus, CorpusItem, SplitPlan};
use crate::evalbench::{
    apcer_at_bpcer, generate_protocol, score_protocol, FusionMode, OperatingPoint, Protocol, ScoreSet,
};
use crate::image::GrayImage;
use crate::loss::{DualLabels, VariantTag};
use crate::manifest::{DatasetRecord, MorphFamily, SampleKind};
use crate::morph::{morph_landmark, morph_latent, selfmorph, MorphConfig, MorphedFace};
use crate::seed;
use crate::synth::{FaceImage, FaceSpace, SynthConfig};
use crate::trainer::{
    morph_separation_stat, train, train_fr, DualModel, EvalSample, FrModel, ModelConfig, SeparationStat, TrainConfig,
    TrainReport,
};
use crate::{Error, Result};

/// A generated image with its manifest record.
#[derive(Debug, Clone)]
pub struct GeneratedFace {
    pub record: DatasetRecord,
    pub face: FaceImage,
}

impl GeneratedFace {
    pub fn item(&self) -> CorpusItem {
        CorpusItem {
            record: self.record.clone(),
            image: self.face.pixels.clone(),
        }
    }
}

pub fn bona_fide_path(id: u32, k: u32) -> String {
    format!("bonafide/{id:06}_{k:03}.pgm")
}

/// Renders `images_per_identity` bona fides for every identity.
pub fn generate_bona_fides(space: &FaceSpace, ids: &[u32], images_per_identity: u32, seed: u64) -> Vec<GeneratedFace> {
    let render_seed = seed::derive(seed, "render");
    let mut out = Vec::with_capacity(ids.len() * images_per_identity as usize);
    for &id in ids {
        let model = space.make_identity(id);
        let id_seed = seed::derive_index(render_seed, u64::from(id));
        for k in 0..images_per_identity {
            out.push(GeneratedFace {
                record: DatasetRecord::bona_fide(bona_fide_path(id, k), id),
                face: space.render(&model, seed::derive_index(id_seed, u64::from(k))),
            });
        }
    }
    out
}

fn by_identity(bona: &[GeneratedFace]) -> BTreeMap<u32, Vec<&FaceImage>> {
    let mut m: BTreeMap<u32, Vec<&FaceImage>> = BTreeMap::new();
    for g in bona.iter().filter(|g| g.record.kind.is_original()) {
        m.entry(g.record.id_first).or_default().push(&g.face);
    }
    m
}

fn finish(m: MorphedFace, dir: &str, index: usize) -> GeneratedFace {
    let MorphedFace {
        mut face,
        id_first,
        id_second,
        kind,
    } = m;
    face.pixels.quantize();
    GeneratedFace {
        record: DatasetRecord {
            path: format!("{dir}/{index:06}_{id_first:06}_{id_second:06}.pgm"),
            id_first,
            id_second,
            kind,
        },
        face,
    }
}

/// `count` selfmorphs of `family`, cycling over the identities of `bona` in
/// seeded order. Landmark selfmorphs blend two distinct originals.
pub fn generate_selfmorphs(
    space: &FaceSpace,
    bona: &[GeneratedFace],
    family: MorphFamily,
    count: usize,
    blend_alpha: f64,
    seed: u64,
) -> Result<Vec<GeneratedFace>> {
    let groups = by_identity(bona);
    let mut ids: Vec<u32> = groups.keys().copied().collect();
    if count > 0 && ids.is_empty() {
        return Err(Error::Config("selfmorphs need bona fide images".into()));
    }
    let cfg = MorphConfig { blend_alpha, family };
    let dir = format!("{}", SampleKind::SelfMorph(family));
    let mut rng = seed::rng(seed);
    ids.shuffle(&mut rng);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id = ids[i % ids.len()];
        let imgs = &groups[&id];
        if family == MorphFamily::Landmark && imgs.len() < 2 {
            return Err(Error::Config(format!(
                "identity {id} needs two images for a landmark selfmorph"
            )));
        }
        let a = rng.random_range(0..imgs.len());
        let mut b = rng.random_range(0..imgs.len() - 1);
        if b >= a {
            b += 1;
        }
        let b = if imgs.len() > 1 { b } else { a };
        let m = selfmorph(space, imgs[a], imgs[b], &cfg, seed::derive_index(seed, i as u64))?;
        out.push(finish(m, &dir, i));
    }
    Ok(out)
}

/// `count` cross-identity morphs of `family` between the split's subsets.
pub fn generate_morphs(
    space: &FaceSpace,
    bona: &[GeneratedFace],
    split: &SplitPlan,
    family: MorphFamily,
    count: usize,
    blend_alpha: f64,
    seed: u64,
) -> Result<Vec<GeneratedFace>> {
    let groups = by_identity(bona);
    let pairs = plan_morph_pairs(split, count, seed::derive(seed, "pairs"))?;
    let cfg = MorphConfig { blend_alpha, family };
    let dir = format!("{}", SampleKind::Morph(family));
    let mut rng = seed::rng(seed::derive(seed, "sources"));
    let mut out = Vec::with_capacity(count);
    for (i, (a, b)) in pairs.into_iter().enumerate() {
        let m = match family {
            MorphFamily::Landmark => {
                let pick = |id: u32, rng: &mut seed::Rng| -> Result<&FaceImage> {
                    let imgs = groups.get(&id).ok_or(Error::Coverage(id))?;
                    Ok(imgs[rng.random_range(0..imgs.len())])
                };
                let fa = pick(a, &mut rng)?;
                let fb = pick(b, &mut rng)?;
                morph_landmark(fa, fb, &cfg)?
            }
            MorphFamily::Latent => morph_latent(
                space,
                &space.make_identity(a),
                &space.make_identity(b),
                &cfg,
                seed::derive_index(seed, i as u64),
            )?,
        };
        out.push(finish(m, &dir, i));
    }
    Ok(out)
}

/// Scale of a generated dataset. Per family, selfmorphs and morphs are
/// `selfmorph_ratio` and `morph_ratio` times the number of originals
/// (defaults give 2:1:1:2:2 over bona fide, selfmorph-lm, selfmorph-latent,
/// morph-lm, morph-latent).
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub identities: u32,
    pub images_per_identity: u32,
    pub first_identity: u32,
    pub selfmorph_ratio: f64,
    pub morph_ratio: f64,
    pub blend_alpha: f64,
    pub families: Vec<MorphFamily>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            identities: 200,
            images_per_identity: 20,
            first_identity: 0,
            selfmorph_ratio: 0.5,
            morph_ratio: 1.0,
            blend_alpha: 0.5,
            families: MorphFamily::ALL.to_vec(),
        }
    }
}

impl DataConfig {
    pub fn ids(&self) -> Vec<u32> {
        (self.first_identity..self.first_identity + self.identities).collect()
    }

    pub fn originals(&self) -> usize {
        self.identities as usize * self.images_per_identity as usize
    }

    pub fn selfmorph_count(&self) -> usize {
        (self.selfmorph_ratio * self.originals() as f64).round() as usize
    }

    pub fn morph_count(&self) -> usize {
        (self.morph_ratio * self.originals() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 || self.images_per_identity < 1 {
            return Err(Error::Config("need at least 2 identities and 1 image each".into()));
        }
        if !(self.selfmorph_ratio >= 0.0 && self.morph_ratio >= 0.0) {
            return Err(Error::Config("morph ratios must be non-negative".into()));
        }
        if self.first_identity.checked_add(self.identities).is_none() {
            return Err(Error::Config("identity range overflows".into()));
        }
        Ok(())
    }
}

/// A complete generated dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: SplitPlan,
    pub bona_fides: Vec<GeneratedFace>,
    pub selfmorphs: Vec<GeneratedFace>,
    pub morphs: Vec<GeneratedFace>,
}

impl Dataset {
    pub fn generate(space: &FaceSpace, config: &DataConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ids = config.ids();
        let split = split_identities(&ids, seed::derive(seed, "split"))?;
        let bona_fides = generate_bona_fides(space, &ids, config.images_per_identity, seed::derive(seed, "bona-fide"));
        let mut selfmorphs = Vec::new();
        let mut morphs = Vec::new();
        for &family in &config.families {
            let fam = family.to_string();
            selfmorphs.extend(generate_selfmorphs(
                space,
                &bona_fides,
                family,
                config.selfmorph_count(),
                config.blend_alpha,
                seed::derive(seed::derive(seed, "selfmorph"), &fam),
            )?);
            morphs.extend(generate_morphs(
                space,
                &bona_fides,
                &split,
                family,
                config.morph_count(),
                config.blend_alpha,
                seed::derive(seed::derive(seed, "morph"), &fam),
            )?);
        }
        Ok(Dataset {
            split,
            bona_fides,
            selfmorphs,
            morphs,
        })
    }

    pub fn all(&self) -> impl Iterator<Item = &GeneratedFace> {
        self.bona_fides.iter().chain(&self.selfmorphs).chain(&self.morphs)
    }

    pub fn records(&self) -> Vec<DatasetRecord> {
        self.all().map(|g| g.record.clone()).collect()
    }

    pub fn image_map(&self) -> HashMap<String, GrayImage> {
        self.all()
            .map(|g| (g.record.path.clone(), g.face.pixels.clone()))
            .collect()
    }

    /// Training corpus over `split`'s identities using only the given families.
    pub fn corpus(&self, split: &SplitPlan, families: &[MorphFamily], seed: u64) -> Result<Corpus> {
        let items = |v: &[GeneratedFace]| v.iter().map(GeneratedFace::item).collect::<Vec<_>>();
        build_corpus(
            split,
            families,
            items(&self.bona_fides),
            items(&self.selfmorphs),
            items(&self.morphs),
            seed,
        )
    }
}

/// Keeps the items whose identities belong to `split` and whose family is in
/// `families`, then balances them into a training corpus.
pub fn build_corpus(
    split: &SplitPlan,
    families: &[MorphFamily],
    bona_fides: Vec<CorpusItem>,
    selfmorphs: Vec<CorpusItem>,
    morphs: Vec<CorpusItem>,
    seed: u64,
) -> Result<Corpus> {
    let keep = |v: Vec<CorpusItem>| -> Vec<CorpusItem> {
        v.into_iter()
            .filter(|c| {
                split.subset_of(c.record.id_first).is_some()
                    && split.subset_of(c.record.id_second).is_some()
                    && c.record.kind.family().is_none_or(|f| families.contains(&f))
            })
            .collect()
    };
    let corpus = assemble_dataset(
        keep(bona_fides),
        keep(selfmorphs),
        keep(morphs),
        &ClassMap::new(split.all_ids()),
        seed,
    )?;
    corpus.check_split(split)?;
    Ok(corpus)
}

/// Configuration of the end-to-end desk experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub synth: SynthConfig,
    pub train_data: DataConfig,
    pub bench_data: DataConfig,
    pub bench_bona_pairs_per_identity: usize,
    pub train_families: Vec<MorphFamily>,
    pub eval_family: MorphFamily,
    pub validation_fraction: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fr_model: ModelConfig,
    pub deltas: Vec<f64>,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            synth: SynthConfig::default(),
            train_data: DataConfig {
                families: vec![MorphFamily::Landmark],
                ..DataConfig::default()
            },
            bench_data: DataConfig {
                identities: 100,
                images_per_identity: 6,
                first_identity: 1_000_000,
                selfmorph_ratio: 0.0,
                morph_ratio: 500.0 / 600.0,
                blend_alpha: 0.5,
                families: MorphFamily::ALL.to_vec(),
            },
            bench_bona_pairs_per_identity: 2,
            train_families: vec![MorphFamily::Landmark],
            eval_family: MorphFamily::Latent,
            validation_fraction: 0.1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            fr_model: ModelConfig::default(),
            deltas: vec![0.1, 0.01],
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: VariantTag,
    pub report: TrainReport,
    pub scores: ScoreSet,
    pub points: Vec<OperatingPoint>,
    pub separation: SeparationStat,
}

#[derive(Debug, Clone)]
pub struct DeskOutcome {
    pub seed: u64,
    pub protocol: Protocol,
    pub variants: Vec<VariantOutcome>,
    /// FR similarity per protocol entry.
    pub similarity: ScoreSet,
    /// APCER operating points of the FC-V2 scores fused in each mode.
    pub fused: Vec<(FusionMode, Vec<OperatingPoint>)>,
}

impl DeskOutcome {
    pub fn variant(&self, v: VariantTag) -> &VariantOutcome {
        self.variants
            .iter()
            .find(|o| o.variant == v)
            .expect("all variants are run")
    }

    pub fn fused(&self, mode: FusionMode) -> &[OperatingPoint] {
        &self.fused.iter().find(|f| f.0 == mode).expect("all modes are run").1
    }
}

/// Labelled benchmark samples for the separation statistic: originals and
/// morphs of every family, with class indices over the benchmark identities.
fn separation_set<'a>(bench: &'a Dataset, classes: &ClassMap) -> Vec<EvalSample<'a>> {
    bench
        .bona_fides
        .iter()
        .chain(&bench.morphs)
        .filter_map(|g| {
            Some(EvalSample {
                input: g.face.pixels.pixels(),
                labels: DualLabels {
                    y1: classes.class_of(g.record.id_first)?,
                    y2: classes.class_of(g.record.id_second)?,
                },
                kind: g.record.kind,
            })
        })
        .collect()
}

pub fn score_with_model(
    model: &DualModel,
    protocol: &Protocol,
    images: &HashMap<String, GrayImage>,
) -> Result<ScoreSet> {
    let out = score_protocol(protocol, |p| lookup(images, p), |a, b| model.score_images(a, b));
    if let Some((id, msg)) = out.failures.first() {
        return Err(Error::Protocol(format!(
            "{} entries failed, first `{id}`: {msg}",
            out.failures.len()
        )));
    }
    Ok(out.score_set())
}

pub fn similarity_with_model(
    fr: &FrModel,
    protocol: &Protocol,
    images: &HashMap<String, GrayImage>,
) -> Result<ScoreSet> {
    let out = score_protocol(
        protocol,
        |p| lookup(images, p),
        |a, b| fr.similarity(a.pixels(), b.pixels()),
    );
    if let Some((id, msg)) = out.failures.first() {
        return Err(Error::Protocol(format!(
            "{} entries failed, first `{id}`: {msg}",
            out.failures.len()
        )));
    }
    Ok(out.score_set())
}

fn lookup(images: &HashMap<String, GrayImage>, path: &str) -> Result<GrayImage> {
    images
        .get(path)
        .cloned()
        .ok_or_else(|| Error::Protocol(format!("unknown image `{path}`")))
}

fn points(scores: &ScoreSet, protocol: &Protocol, deltas: &[f64]) -> Result<Vec<OperatingPoint>> {
    let (s, t) = scores.align(protocol)?;
    deltas.iter().map(|&d| apcer_at_bpcer(&s, &t, d)).collect()
}

/// Runs the whole experiment for one root seed.
pub fn run_desk(config: &DeskConfig, seed: u64) -> Result<DeskOutcome> {
    let space = FaceSpace::new(config.synth.clone(), seed::derive(seed, "world"))?;
    let train_set = Dataset::generate(&space, &config.train_data, seed::derive(seed, "train-data"))?;
    let bench = Dataset::generate(&space, &config.bench_data, seed::derive(seed, "bench-data"))?;
    let (train_split, _validation) = train_set
        .split
        .holdout(config.validation_fraction, seed::derive(seed, "holdout"))?;
    let corpus = train_set.corpus(&train_split, &config.train_families, seed::derive(seed, "corpus"))?;

    let protocol = generate_protocol(
        &bench.records(),
        config.eval_family,
        config.bench_bona_pairs_per_identity,
        seed::derive(seed, "protocol"),
    )?
    .protocol;
    let images = bench.image_map();
    let bench_classes = ClassMap::new(bench.split.all_ids());
    let sep_set = separation_set(&bench, &bench_classes);

    let mut variants = Vec::new();
    for variant in VariantTag::ALL {
        let model_cfg = ModelConfig {
            variant,
            ..config.model.clone()
        };
        // Identical initial backbones and sampling streams for every variant.
        let (model, report) = train(&corpus, &model_cfg, &config.train, seed::derive(seed, "train"))?;
        let scores = score_with_model(&model, &protocol, &images)?;
        variants.push(VariantOutcome {
            variant,
            points: points(&scores, &protocol, &config.deltas)?,
            separation: morph_separation_stat(&model, &sep_set)?,
            report,
            scores,
        });
    }

    let (fr, _) = train_fr(&corpus, &config.fr_model, &config.train.sgd, seed::derive(seed, "fr"))?;
    let similarity = similarity_with_model(&fr, &protocol, &images)?;
    let v2 = &variants
        .iter()
        .find(|v| v.variant == VariantTag::FcV2)
        .expect("FC-V2 is trained")
        .scores;
    let fused = FusionMode::ALL
        .into_iter()
        .map(|mode| Ok((mode, points(&v2.fuse(&similarity, mode)?, &protocol, &config.deltas)?)))
        .collect::<Result<_>>()?;
    Ok(DeskOutcome {
        seed,
        protocol,
        variants,
        similarity,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (FaceSpace, DataConfig) {
        let space = FaceSpace::new(SynthConfig::default(), 3).unwrap();
        let cfg = DataConfig {
            identities: 6,
            images_per_identity: 4,
            ..DataConfig::default()
        };
        (space, cfg)
    }

    #[test]
    fn dataset_counts_follow_ratios() {
        let (space, cfg) = small();
        let d = Dataset::generate(&space, &cfg, 1).unwrap();
        let count = |k: SampleKind| d.all().filter(|g| g.record.kind == k).count();
        assert_eq!(count(SampleKind::BonaFide), 24);
        for f in MorphFamily::ALL {
            assert_eq!(count(SampleKind::SelfMorph(f)), 12);
            assert_eq!(count(SampleKind::Morph(f)), 24);
        }
        for g in &d.morphs {
            assert_eq!(
                d.split.subset_of(g.record.id_first),
                Some(crate::datamine::Subset::First)
            );
            assert_eq!(
                d.split.subset_of(g.record.id_second),
                Some(crate::datamine::Subset::Second)
            );
        }
        for g in &d.selfmorphs {
            assert_eq!(g.record.id_first, g.record.id_second);
        }
        let paths: std::collections::HashSet<_> = d.all().map(|g| &g.record.path).collect();
        assert_eq!(paths.len(), 24 + 24 + 48);
    }

    #[test]
    fn generation_is_deterministic() {
        let (space, cfg) = small();
        let a = Dataset::generate(&space, &cfg, 9).unwrap();
        let b = Dataset::generate(&space, &cfg, 9).unwrap();
        assert_eq!(a.records(), b.records());
        assert!(a.all().zip(b.all()).all(|(x, y)| x.face == y.face));
    }

    #[test]
    fn corpus_filters_families() {
        let (space, cfg) = small();
        let d = Dataset::generate(&space, &cfg, 2).unwrap();
        let c = d.corpus(&d.split, &[MorphFamily::Landmark], 4).unwrap();
        assert!(c
            .candidates()
            .iter()
            .all(|s| s.kind().family() != Some(MorphFamily::Latent)));
        // 24 originals + 12 selfmorphs vs 24 morphs.
        assert_eq!(c.len(), 48);
    }
}
