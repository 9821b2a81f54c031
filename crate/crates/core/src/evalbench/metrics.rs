use std::fmt;
use std::str::FromStr;

use super::protocol::Truth;
use crate::{Error, Result};

/// Bona fide and morph scores split and sorted ascending.
struct Split {
    bona: Vec<f64>,
    morph: Vec<f64>,
}

fn split(scores: &[f64], truths: &[Truth]) -> Result<Split> {
    if scores.len() != truths.len() {
        return Err(Error::Alignment(format!(
            "{} scores for {} ground truths",
            scores.len(),
            truths.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("non-finite score {s}")));
    }
    let mut bona = Vec::new();
    let mut morph = Vec::new();
    for (&s, &t) in scores.iter().zip(truths) {
        match t {
            Truth::BonaFide => bona.push(s),
            Truth::Morph => morph.push(s),
        }
    }
    if bona.is_empty() || morph.is_empty() {
        return Err(Error::Metric(format!(
            "need both classes, got {} bona fide and {} morph scores",
            bona.len(),
            morph.len()
        )));
    }
    bona.sort_by(f64::total_cmp);
    morph.sort_by(f64::total_cmp);
    Ok(Split { bona, morph })
}

impl Split {
    /// `(#morph < τ) / |morph|`, `(#bona ≥ τ) / |bona|`.
    fn rates(&self, tau: f64) -> (f64, f64) {
        let missed = self.morph.partition_point(|&s| s < tau);
        let rejected = self.bona.len() - self.bona.partition_point(|&s| s < tau);
        (
            missed as f64 / self.morph.len() as f64,
            rejected as f64 / self.bona.len() as f64,
        )
    }

    fn candidates(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.bona.iter().chain(&self.morph).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

/// Scores `≥ τ` are classified as attacks. Returns `(apcer, bpcer)`.
pub fn apcer_bpcer(scores: &[f64], truths: &[Truth], tau: f64) -> Result<(f64, f64)> {
    Ok(split(scores, truths)?.rates(tau))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub apcer: f64,
    pub bpcer: f64,
    pub threshold: f64,
}

/// APCER at the smallest threshold among the unique scores and `+∞` whose
/// BPCER does not exceed `delta`.
pub fn apcer_at_bpcer(scores: &[f64], truths: &[Truth], delta: f64) -> Result<OperatingPoint> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Metric(format!("delta {delta} not in (0, 1)")));
    }
    let s = split(scores, truths)?;
    let threshold = s
        .candidates()
        .into_iter()
        .find(|&tau| s.rates(tau).1 <= delta)
        .unwrap_or(f64::INFINITY);
    let (apcer, bpcer) = s.rates(threshold);
    Ok(OperatingPoint {
        apcer,
        bpcer,
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,apcer,bpcer\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{}\n",
                super::format_value(p.threshold),
                super::format_value(p.apcer),
                super::format_value(p.bpcer)
            ));
        }
        s
    }
}

/// One point per unique score, in increasing threshold order.
pub fn det_curve(scores: &[f64], truths: &[Truth]) -> Result<DetCurve> {
    let s = split(scores, truths)?;
    let points = s
        .candidates()
        .into_iter()
        .map(|threshold| {
            let (apcer, bpcer) = s.rates(threshold);
            DetPoint {
                threshold,
                apcer,
                bpcer,
            }
        })
        .collect();
    Ok(DetCurve { points })
}

/// How a face recognition similarity modulates the morph score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// `mad · similarity`
    Literal,
    /// `mad · (1 - similarity)`
    #[default]
    Dissimilarity,
}

impl FusionMode {
    pub const ALL: [FusionMode; 2] = [FusionMode::Literal, FusionMode::Dissimilarity];
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Literal => "literal",
            FusionMode::Dissimilarity => "dissimilarity",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(FusionMode::Literal),
            "dissimilarity" => Ok(FusionMode::Dissimilarity),
            _ => Err(Error::Config(format!(
                "unknown fusion mode `{s}` (expected literal or dissimilarity)"
            ))),
        }
    }
}

pub fn fuse_fr_score(mad_score: f64, fr_similarity: f64, mode: FusionMode) -> Result<f64> {
    if !(0.0..=1.0).contains(&mad_score) {
        return Err(Error::Range(format!("morph score {mad_score} not in [0, 1]")));
    }
    if !(0.0..=1.0).contains(&fr_similarity) {
        return Err(Error::Range(format!("similarity {fr_similarity} not in [0, 1]")));
    }
    Ok(match mode {
        FusionMode::Literal => mad_score * fr_similarity,
        FusionMode::Dissimilarity => mad_score * (1.0 - fr_similarity),
    })
}
