//! Identity splits, morph pairing, corpus balancing and pair sampling.
//!
//! Identities are split into two disjoint subsets: morphs always take their
//! first identity from the first subset and their second identity from the
//! second subset, so each network's identity labels stay unambiguous.
//! Pairs are sampled as (suspect image for the first network, trusted original
//! bona fide of the suspect's first identity for the second network).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::RngExt;

use crate::image::GrayImage;
use crate::loss::{cross_label, DualLabels};
use crate::manifest::{DatasetRecord, SampleKind};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    First,
    Second,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::First => "first",
            Subset::Second => "second",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitPlan {
    pub first: BTreeSet<u32>,
    pub second: BTreeSet<u32>,
}

impl SplitPlan {
    pub fn subset_of(&self, id: u32) -> Option<Subset> {
        if self.first.contains(&id) {
            Some(Subset::First)
        } else if self.second.contains(&id) {
            Some(Subset::Second)
        } else {
            None
        }
    }

    pub fn all_ids(&self) -> Vec<u32> {
        self.first.union(&self.second).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.first.len() + self.second.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `identity_id<TAB>subset` per line, ascending by id.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(u32, Subset)> = self
            .first
            .iter()
            .map(|&i| (i, Subset::First))
            .chain(self.second.iter().map(|&i| (i, Subset::Second)))
            .collect();
        rows.sort_by_key(|r| r.0);
        rows.iter().map(|(i, s)| format!("{i}\t{s}\n")).collect()
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut plan = SplitPlan::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::parse(source, n + 1, m);
            let (id, subset) = line.split_once('\t').ok_or_else(|| bad("expected `id<TAB>subset`"))?;
            let id: u32 = id.parse().map_err(|_| bad("invalid identity id"))?;
            let set = match subset.trim() {
                "first" => &mut plan.first,
                "second" => &mut plan.second,
                _ => return Err(bad("subset must be `first` or `second`")),
            };
            if !set.insert(id) {
                return Err(bad("duplicate identity"));
            }
        }
        if !plan.first.is_disjoint(&plan.second) {
            return Err(Error::parse(source, 0, "subsets overlap"));
        }
        Ok(plan)
    }

    /// Splits each subset into training and validation identities; about
    /// `fraction` of every subset (at least one when it has two or more
    /// members) goes to validation.
    pub fn holdout(&self, fraction: f64, seed: u64) -> Result<(SplitPlan, SplitPlan)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("holdout fraction {fraction} not in [0, 1)")));
        }
        let mut train = SplitPlan::default();
        let mut val = SplitPlan::default();
        for (k, (src, tr, va)) in [
            (&self.first, &mut train.first, &mut val.first),
            (&self.second, &mut train.second, &mut val.second),
        ]
        .into_iter()
        .enumerate()
        {
            let mut ids: Vec<u32> = src.iter().copied().collect();
            ids.shuffle(&mut seed::rng(seed::derive_index(
                seed::derive(seed, "holdout"),
                k as u64,
            )));
            let mut n_val = (fraction * ids.len() as f64).round() as usize;
            if fraction > 0.0 && n_val == 0 && ids.len() >= 2 {
                n_val = 1;
            }
            va.extend(&ids[..n_val]);
            tr.extend(&ids[n_val..]);
        }
        Ok((train, val))
    }
}

/// Deterministic shuffled half split; the first subset gets the extra
/// identity when the count is odd.
pub fn split_identities(ids: &[u32], seed: u64) -> Result<SplitPlan> {
    let mut ids: Vec<u32> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 identities to split, got {}",
            ids.len()
        )));
    }
    ids.shuffle(&mut seed::rng(seed));
    let half = ids.len().div_ceil(2);
    Ok(SplitPlan {
        first: ids[..half].iter().copied().collect(),
        second: ids[half..].iter().copied().collect(),
    })
}

/// Plans `count` morphs as `(first-subset id, second-subset id)`.
///
/// Pairs are drawn round by round from shuffled copies of the full cross
/// product, so no pair occurs more than `ceil(count / (|A|·|B|))` times.
pub fn plan_morph_pairs(split: &SplitPlan, count: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
    if split.first.is_empty() || split.second.is_empty() {
        return Err(Error::Config("morph pairing needs two non-empty subsets".into()));
    }
    let all: Vec<(u32, u32)> = split
        .first
        .iter()
        .flat_map(|&a| split.second.iter().map(move |&b| (a, b)))
        .collect();
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut round = all.clone();
        round.shuffle(&mut rng);
        let take = (count - out.len()).min(round.len());
        out.extend_from_slice(&round[..take]);
    }
    Ok(out)
}

/// Dense class indices for a set of identities (ascending id order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    ids: Vec<u32>,
    index: BTreeMap<u32, usize>,
}

impl ClassMap {
    pub fn new(ids: impl IntoIterator<Item = u32>) -> Self {
        let ids: Vec<u32> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        ClassMap { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn class_of(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn identity_of(&self, class: usize) -> u32 {
        self.ids[class]
    }

    fn labels(&self, record: &DatasetRecord) -> Result<DualLabels> {
        let get = |id: u32| {
            self.class_of(id)
                .ok_or_else(|| Error::Config(format!("identity {id} of `{}` has no class", record.path)))
        };
        Ok(DualLabels {
            y1: get(record.id_first)?,
            y2: get(record.id_second)?,
        })
    }
}

/// A manifest record paired with its image.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub record: DatasetRecord,
    pub image: GrayImage,
}

/// One image of the corpus with its labels.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub record: DatasetRecord,
    pub labels: DualLabels,
    image: usize,
}

impl LabeledSample {
    pub fn kind(&self) -> SampleKind {
        self.record.kind
    }
}

/// Training corpus: balanced first-network candidates plus the pool of
/// trusted original bona fides used as second-network images.
#[derive(Debug, Clone)]
pub struct Corpus {
    classes: ClassMap,
    images: Vec<GrayImage>,
    candidates: Vec<LabeledSample>,
    references: Vec<LabeledSample>,
    refs_by_class: Vec<Vec<usize>>,
}

/// Builds a balanced corpus.
///
/// The bona fide side (originals plus selfmorphs) and the morph side are
/// equalised by seeded down-sampling of the larger side. Every original bona
/// fide stays available as a trusted reference regardless of down-sampling.
pub fn assemble_dataset(
    bona_fides: Vec<CorpusItem>,
    selfmorphs: Vec<CorpusItem>,
    morphs: Vec<CorpusItem>,
    classes: &ClassMap,
    seed: u64,
) -> Result<Corpus> {
    if bona_fides.is_empty() && selfmorphs.is_empty() {
        return Err(Error::Config("corpus has no bona fide samples".into()));
    }
    if morphs.is_empty() {
        return Err(Error::Config("corpus has no morph samples".into()));
    }
    for (items, ok) in [
        (&bona_fides, (|k: SampleKind| k.is_original()) as fn(SampleKind) -> bool),
        (&selfmorphs, |k| matches!(k, SampleKind::SelfMorph(_))),
        (&morphs, |k| k.is_morph()),
    ] {
        if let Some(bad) = items.iter().find(|i| !ok(i.record.kind)) {
            return Err(Error::Config(format!(
                "`{}` of kind {} passed in the wrong group",
                bad.record.path, bad.record.kind
            )));
        }
    }

    let mut images = Vec::new();
    let mut push = |item: CorpusItem| -> Result<LabeledSample> {
        let labels = classes.labels(&item.record)?;
        images.push(item.image);
        Ok(LabeledSample {
            record: item.record,
            labels,
            image: images.len() - 1,
        })
    };

    let mut references = Vec::with_capacity(bona_fides.len());
    for item in bona_fides {
        references.push(push(item)?);
    }
    let mut bona_side: Vec<LabeledSample> = references.clone();
    for item in selfmorphs {
        bona_side.push(push(item)?);
    }
    let mut morph_side = Vec::with_capacity(morphs.len());
    for item in morphs {
        morph_side.push(push(item)?);
    }

    let mut rng = seed::rng(seed);
    let target = bona_side.len().min(morph_side.len());
    let downsample = |side: Vec<LabeledSample>, rng: &mut seed::Rng| -> Vec<LabeledSample> {
        if side.len() <= target {
            return side;
        }
        let mut keep: Vec<usize> = (0..side.len()).collect();
        keep.shuffle(rng);
        let mut keep: Vec<usize> = keep[..target].to_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| side[i].clone()).collect()
    };
    let bona_side = downsample(bona_side, &mut rng);
    let morph_side = downsample(morph_side, &mut rng);
    let mut candidates = bona_side;
    candidates.extend(morph_side);

    let mut refs_by_class = vec![Vec::new(); classes.len()];
    for (i, r) in references.iter().enumerate() {
        refs_by_class[r.labels.y1].push(i);
    }
    Ok(Corpus {
        classes: classes.clone(),
        images,
        candidates,
        references,
        refs_by_class,
    })
}

/// An ordered training pair. `first` feeds the first network, `second` (always
/// an original bona fide of the same first identity) the second network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub first: usize,
    pub second: usize,
    pub first_labels: DualLabels,
    pub second_labels: DualLabels,
    pub first_kind: SampleKind,
    pub second_kind: SampleKind,
}

impl PairSample {
    pub fn t(&self) -> u8 {
        cross_label(self.first_labels.y2, self.second_labels.y2)
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn classes(&self) -> &ClassMap {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn candidates(&self) -> &[LabeledSample] {
        &self.candidates
    }

    pub fn references(&self) -> &[LabeledSample] {
        &self.references
    }

    pub fn candidate_image(&self, i: usize) -> &GrayImage {
        &self.images[self.candidates[i].image]
    }

    pub fn reference_image(&self, i: usize) -> &GrayImage {
        &self.images[self.references[i].image]
    }

    pub fn input_dim(&self) -> usize {
        self.images.first().map_or(0, |i| i.pixels().len())
    }

    /// Checks that every morph respects the split and that every identity
    /// in the first subset has at least one trusted reference.
    pub fn check_split(&self, split: &SplitPlan) -> Result<()> {
        for s in &self.candidates {
            if s.kind().is_morph()
                && (split.subset_of(s.record.id_first) != Some(Subset::First)
                    || split.subset_of(s.record.id_second) != Some(Subset::Second))
            {
                return Err(Error::Config(format!(
                    "morph `{}` ({} x {}) violates the identity split",
                    s.record.path, s.record.id_first, s.record.id_second
                )));
            }
        }
        for &id in &split.first {
            if let Some(c) = self.classes.class_of(id) {
                if self.refs_by_class[c].is_empty() {
                    return Err(Error::Coverage(id));
                }
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        self.len().checked_div(batch_size).unwrap_or(0)
    }

    /// Candidate order for one epoch.
    pub fn epoch_order(&self, seed: u64, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_index(
            seed::derive(seed, "epoch"),
            epoch as u64,
        )));
        order
    }

    /// Batch `step` of the sampling stream defined by `seed`.
    ///
    /// Each epoch visits a fresh permutation of the candidates; the trusted
    /// image is drawn uniformly among the original bona fides of the
    /// candidate's first identity, avoiding the candidate itself when possible.
    pub fn sample_batch(&self, batch_size: usize, seed: u64, step: usize) -> Result<Vec<PairSample>> {
        let spe = self.steps_per_epoch(batch_size);
        if spe == 0 {
            return Err(Error::Config(format!(
                "batch size {batch_size} exceeds corpus of {}",
                self.len()
            )));
        }
        let order = self.epoch_order(seed, step / spe);
        let offset = (step % spe) * batch_size;
        let mut rng = seed::rng(seed::derive_index(seed::derive(seed, "reference"), step as u64));
        order[offset..offset + batch_size]
            .iter()
            .map(|&c| {
                let cand = &self.candidates[c];
                let pool = &self.refs_by_class[cand.labels.y1];
                let usable: Vec<usize> = if pool.len() > 1 {
                    pool.iter()
                        .copied()
                        .filter(|&r| self.references[r].image != cand.image)
                        .collect()
                } else {
                    pool.clone()
                };
                if usable.is_empty() {
                    return Err(Error::Coverage(cand.record.id_first));
                }
                let r = usable[rng.random_range(0..usable.len())];
                let reference = &self.references[r];
                Ok(PairSample {
                    first: c,
                    second: r,
                    first_labels: cand.labels,
                    second_labels: reference.labels,
                    first_kind: cand.kind(),
                    second_kind: reference.kind(),
                })
            })
            .collect()
    }
}
