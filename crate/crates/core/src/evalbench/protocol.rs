use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::RngExt;

use super::metrics::{fuse_fr_score, FusionMode};
use crate::image::GrayImage;
use crate::manifest::{DatasetRecord, MorphFamily, SampleKind};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Truth {
    BonaFide,
    Morph,
}

impl fmt::Display for Truth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Truth::BonaFide => "bonafide",
            Truth::Morph => "morph",
        })
    }
}

impl FromStr for Truth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Truth::BonaFide),
            "morph" => Ok(Truth::Morph),
            _ => Err(Error::Protocol(format!("unknown ground truth `{s}`"))),
        }
    }
}

/// One differential trial: `path_a` is the suspect (document) image,
/// `path_b` the trusted live capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub pair_id: String,
    pub path_a: String,
    pub path_b: String,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Protocol {
    pub entries: Vec<ProtocolEntry>,
}

impl Protocol {
    pub fn new(entries: Vec<ProtocolEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.pair_id.is_empty() || e.path_a.is_empty() || e.path_b.is_empty() {
                return Err(Error::Protocol(format!("entry `{}` has an empty field", e.pair_id)));
            }
            if e.pair_id.contains(char::is_whitespace) {
                return Err(Error::Protocol(format!("pair id `{}` contains whitespace", e.pair_id)));
            }
            if !seen.insert(e.pair_id.as_str()) {
                return Err(Error::Protocol(format!("duplicate pair id `{}`", e.pair_id)));
            }
        }
        Ok(Protocol { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truths(&self) -> Vec<Truth> {
        self.entries.iter().map(|e| e.truth).collect()
    }

    pub fn count(&self, truth: Truth) -> usize {
        self.entries.iter().filter(|e| e.truth == truth).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# pair_id\tpath_a\tpath_b\tground_truth\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", e.pair_id, e.path_a, e.path_b, e.truth));
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::parse(
                    source,
                    n + 1,
                    format!("expected 4 tab-separated fields, got {}", f.len()),
                ));
            }
            let truth = f[3]
                .trim()
                .parse()
                .map_err(|e: Error| Error::parse(source, n + 1, e.to_string()))?;
            entries.push(ProtocolEntry {
                pair_id: f[0].into(),
                path_a: f[1].into(),
                path_b: f[2].into(),
                truth,
            });
        }
        Protocol::new(entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Protocol::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolBuild {
    pub protocol: Protocol,
    pub warnings: Vec<String>,
}

/// Builds the protocol of one morph family.
///
/// Bona fide trials pair two distinct original images of one identity (up to
/// `bona_pairs_per_identity` per identity). Every morph of `family` yields
/// one trial per source identity, against an original of that identity.
pub fn generate_protocol(
    records: &[DatasetRecord],
    family: MorphFamily,
    bona_pairs_per_identity: usize,
    seed: u64,
) -> Result<ProtocolBuild> {
    let mut originals: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind.is_original()) {
        originals.entry(r.id_first).or_default().push(&r.path);
    }
    let mut warnings = Vec::new();
    let mut entries = Vec::new();

    let bona_seed = seed::derive(seed, "bona-pairs");
    for (&id, paths) in &originals {
        if paths.len() < 2 {
            warnings.push(format!("identity {id} has a single bona fide image; skipped"));
            continue;
        }
        let mut pairs: Vec<(usize, usize)> = (0..paths.len())
            .flat_map(|i| (i + 1..paths.len()).map(move |j| (i, j)))
            .collect();
        let mut rng = seed::rng(seed::derive_index(bona_seed, u64::from(id)));
        pairs.shuffle(&mut rng);
        for &(i, j) in pairs.iter().take(bona_pairs_per_identity) {
            let (a, b) = if rng.random::<bool>() { (i, j) } else { (j, i) };
            entries.push(ProtocolEntry {
                pair_id: format!("{family}-bf-{:05}", entries.len()),
                path_a: paths[a].into(),
                path_b: paths[b].into(),
                truth: Truth::BonaFide,
            });
        }
    }
    let n_bona = entries.len();

    let morph_seed = seed::derive(seed, "morph-pairs");
    let morphs = records.iter().filter(|r| r.kind == SampleKind::Morph(family));
    for (k, m) in morphs.enumerate() {
        for (side, id) in [m.id_first, m.id_second].into_iter().enumerate() {
            let Some(paths) = originals.get(&id) else {
                warnings.push(format!("no bona fide of identity {id} for morph `{}`; skipped", m.path));
                continue;
            };
            let mut rng = seed::rng(seed::derive_index(morph_seed, 2 * k as u64 + side as u64));
            entries.push(ProtocolEntry {
                pair_id: format!("{family}-mo-{:05}", entries.len() - n_bona),
                path_a: m.path.clone(),
                path_b: paths[rng.random_range(0..paths.len())].into(),
                truth: Truth::Morph,
            });
        }
    }
    if n_bona == 0 || entries.len() == n_bona {
        return Err(Error::Protocol(format!(
            "{family} protocol needs bona fide and morph trials, got {n_bona} and {}",
            entries.len() - n_bona
        )));
    }
    Ok(ProtocolBuild {
        protocol: Protocol::new(entries)?,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub pair_id: String,
    pub truth: Truth,
    pub score: f64,
}

/// Per-entry scores in protocol order plus entries that could not be scored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreOutcome {
    pub scored: Vec<ScoredEntry>,
    pub failures: Vec<(String, String)>,
}

impl ScoreOutcome {
    pub fn scores(&self) -> Vec<f64> {
        self.scored.iter().map(|e| e.score).collect()
    }

    pub fn truths(&self) -> Vec<Truth> {
        self.scored.iter().map(|e| e.truth).collect()
    }

    pub fn score_set(&self) -> ScoreSet {
        ScoreSet {
            entries: self.scored.iter().map(|e| (e.pair_id.clone(), e.score)).collect(),
        }
    }
}

/// Scores every entry with `scorer(image_a, image_b)`. Images are loaded once
/// through `loader`; failures are recorded per entry.
pub fn score_protocol<L, S>(protocol: &Protocol, mut loader: L, mut scorer: S) -> ScoreOutcome
where
    L: FnMut(&str) -> Result<GrayImage>,
    S: FnMut(&GrayImage, &GrayImage) -> Result<f64>,
{
    let mut cache: HashMap<&str, std::result::Result<GrayImage, String>> = HashMap::new();
    let mut out = ScoreOutcome::default();
    for e in &protocol.entries {
        for p in [e.path_a.as_str(), e.path_b.as_str()] {
            cache
                .entry(p)
                .or_insert_with(|| loader(p).map_err(|err| err.to_string()));
        }
        let res = match (&cache[e.path_a.as_str()], &cache[e.path_b.as_str()]) {
            (Ok(a), Ok(b)) => scorer(a, b).map_err(|err| err.to_string()),
            (Err(m), _) | (_, Err(m)) => Err(m.clone()),
        };
        match res {
            Ok(score) if score.is_finite() => out.scored.push(ScoredEntry {
                pair_id: e.pair_id.clone(),
                truth: e.truth,
                score,
            }),
            Ok(score) => out
                .failures
                .push((e.pair_id.clone(), format!("non-finite score {score}"))),
            Err(m) => out.failures.push((e.pair_id.clone(), m)),
        }
    }
    out
}

/// `pair_id<TAB>score` records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub entries: Vec<(String, f64)>,
}

impl ScoreSet {
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(id, s)| format!("{id}\t{}\n", super::format_value(*s)))
            .collect()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, s) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source, n + 1, "expected `pair_id<TAB>score`"))?;
            let score: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::parse(source, n + 1, format!("invalid score `{s}`")))?;
            entries.push((id.to_string(), score));
        }
        Ok(ScoreSet { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScoreSet::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Scores in protocol order; every entry needs exactly one score and no
    /// extra ids are allowed.
    pub fn align(&self, protocol: &Protocol) -> Result<(Vec<f64>, Vec<Truth>)> {
        let mut map: HashMap<&str, f64> = HashMap::with_capacity(self.entries.len());
        for (id, s) in &self.entries {
            if map.insert(id.as_str(), *s).is_some() {
                return Err(Error::Alignment(format!("duplicate score for `{id}`")));
            }
        }
        if map.len() != protocol.len() {
            return Err(Error::Alignment(format!(
                "{} scores for a protocol of {} entries",
                map.len(),
                protocol.len()
            )));
        }
        let mut scores = Vec::with_capacity(protocol.len());
        for e in &protocol.entries {
            scores.push(
                *map.get(e.pair_id.as_str())
                    .ok_or_else(|| Error::Alignment(format!("no score for `{}`", e.pair_id)))?,
            );
        }
        Ok((scores, protocol.truths()))
    }

    /// Fuses morph scores with similarities entry by entry (matched by id).
    pub fn fuse(&self, similarity: &ScoreSet, mode: FusionMode) -> Result<ScoreSet> {
        let sims: HashMap<&str, f64> = similarity.entries.iter().map(|(i, s)| (i.as_str(), *s)).collect();
        let entries = self
            .entries
            .iter()
            .map(|(id, s)| {
                let sim = sims
                    .get(id.as_str())
                    .ok_or_else(|| Error::Alignment(format!("no similarity for `{id}`")))?;
                Ok((id.clone(), fuse_fr_score(*s, *sim, mode)?))
            })
            .collect::<Result<_>>()?;
        Ok(ScoreSet { entries })
    }
}
