//! Built-in self checks: finite-difference gradient checks of the fused loss
//! and a brute-force oracle for the evaluation metrics.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::RngExt;

use crate::evalbench::{apcer_at_bpcer, apcer_bpcer, det_curve, Truth};
use crate::loss::{allocate_labels, cross_label, DualLabels, FusedLoss, LossWeights, VariantTag};
use crate::manifest::{MorphFamily, SampleKind};
use crate::nn::{finite_diff_check, Activation, ParamSet};
use crate::trainer::{DualModel, ModelConfig, PairInput};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestConfig {
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub oracle_sets: usize,
    pub oracle_max_len: usize,
    /// Deliberately perturbs one analytic gradient entry so the check must fail.
    pub corrupt_gradient: bool,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig {
            seed: 7,
            epsilon: 1e-5,
            tolerance: 1e-4,
            oracle_sets: 200,
            oracle_max_len: 500,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub label: String,
    pub num_params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub sets: usize,
    pub largest: usize,
    pub mismatches: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub grads: Vec<GradReport>,
    pub oracle: OracleReport,
    pub grad_elapsed: Duration,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.grads.iter().all(|g| g.passed) && self.oracle.mismatches == 0
    }

    pub fn max_rel_error(&self) -> f64 {
        self.grads.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.grads {
            let _ = writeln!(
                s,
                "gradcheck {:<24} params {:>5}  max_rel_error {:.3e}  {}",
                g.label,
                g.num_params,
                g.max_rel_error,
                if g.passed { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "gradcheck time {:.2}s", self.grad_elapsed.as_secs_f64());
        let _ = writeln!(
            s,
            "metric oracle {} sets (n <= {}), {} mismatches, {:.2}s  {}",
            self.oracle.sets,
            self.oracle.largest,
            self.oracle.mismatches,
            self.oracle.elapsed.as_secs_f64(),
            if self.oracle.mismatches == 0 { "ok" } else { "FAIL" }
        );
        let _ = writeln!(s, "selftest {}", if self.passed() { "passed" } else { "FAILED" });
        s
    }
}

/// Small seeded model used for gradient checks.
pub fn probe_model(variant: VariantTag, normalize: bool, seed: u64) -> Result<DualModel> {
    let cfg = ModelConfig {
        hidden_dims: vec![10],
        feature_dim: 6,
        activation: Activation::Relu,
        variant,
        normalize_features: normalize,
        input_norm: 3.0,
    };
    DualModel::init(12, 4, &cfg, seed)
}

struct ProbeBatch {
    inputs: Vec<(Vec<f64>, Vec<f64>)>,
    meta: Vec<((usize, usize), u8)>,
}

fn probe_batch(variant: VariantTag, dim: usize, classes: usize, seed: u64) -> Result<ProbeBatch> {
    let mut rng = seed::rng(seed);
    let mut inputs = Vec::new();
    let mut meta = Vec::new();
    for k in 0..6 {
        let y = k % classes;
        let other = (y + 1) % classes;
        // (suspect kind and labels, trusted identity)
        let (kind, labels) = match k % 3 {
            0 => (SampleKind::BonaFide, DualLabels::same(y)),
            1 => (SampleKind::SelfMorph(MorphFamily::Landmark), DualLabels::same(y)),
            _ => (SampleKind::Morph(MorphFamily::Latent), DualLabels { y1: y, y2: other }),
        };
        let trusted = DualLabels::same(y);
        let (c1, _) = allocate_labels(labels, kind, variant, classes)?;
        let (_, c2) = allocate_labels(trusted, SampleKind::BonaFide, variant, classes)?;
        let t = cross_label(labels.y2, trusted.y2);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        inputs.push((a, b));
        meta.push(((c1, c2), t));
    }
    Ok(ProbeBatch { inputs, meta })
}

/// Gradient check of `model` on a seeded mixed batch under `loss`.
pub fn check_model(model: &DualModel, loss: &FusedLoss, epsilon: f64, corrupt: bool, seed: u64) -> Result<GradReport> {
    let batch = probe_batch(model.variant, model.input_dim(), model.num_identities(), seed)?;
    let pairs: Vec<PairInput<'_>> = batch
        .inputs
        .iter()
        .zip(&batch.meta)
        .map(|((a, b), &(classes, t))| PairInput {
            first: a,
            second: b,
            classes,
            t,
        })
        .collect();
    let mut work = model.clone();
    let mut grads = model.zeros_like();
    let theta = model.to_flat();
    let report = finite_diff_check(
        |p| {
            work.load_flat(p)?;
            grads.zero();
            let l = work.batch_loss(&pairs, loss, &mut grads)?;
            let mut g = grads.to_flat();
            if corrupt {
                let k = g.len() / 2;
                g[k] += 0.01 * (1.0 + g[k].abs());
            }
            Ok((l.total, g))
        },
        &theta,
        epsilon,
    )?;
    Ok(GradReport {
        label: String::new(),
        num_params: report.num_params,
        max_rel_error: report.max_rel_error,
        passed: false,
    })
}

/// Gradient checks for the three variants, the individual loss terms and the
/// normalised pair logit.
pub fn gradient_checks(cfg: &SelftestConfig) -> Result<Vec<GradReport>> {
    let mut cases: Vec<(String, VariantTag, bool, LossWeights)> = VariantTag::ALL
        .iter()
        .map(|&v| (format!("{v} total"), v, false, LossWeights::for_variant(v, 1.0)))
        .collect();
    let single = |a, b, c| LossWeights {
        first_identity: a,
        second_identity: b,
        pair: c,
    };
    cases.push(("fc-v2 l1 only".into(), VariantTag::FcV2, false, single(1.0, 0.0, 0.0)));
    cases.push(("fc-v2 l2 only".into(), VariantTag::FcV2, false, single(0.0, 1.0, 0.0)));
    cases.push(("fc-v2 l3 only".into(), VariantTag::FcV2, false, single(0.0, 0.0, 1.0)));
    cases.push((
        "fc-v2 normalized".into(),
        VariantTag::FcV2,
        true,
        LossWeights::for_variant(VariantTag::FcV2, 1.0),
    ));
    let mut out = Vec::new();
    for (k, (label, variant, normalize, weights)) in cases.into_iter().enumerate() {
        let model_seed = seed::derive(cfg.seed, "gradcheck-model");
        let model = probe_model(variant, normalize, model_seed)?;
        if model.num_params() > 2000 {
            return Err(Error::Config(format!(
                "probe model has {} parameters",
                model.num_params()
            )));
        }
        let loss = FusedLoss {
            weights,
            normalize_features: normalize,
        };
        let batch_seed = seed::derive_index(seed::derive(cfg.seed, "gradcheck-batch"), k as u64);
        let mut r = check_model(&model, &loss, cfg.epsilon, cfg.corrupt_gradient, batch_seed)?;
        r.label = label;
        r.passed = r.max_rel_error < cfg.tolerance;
        out.push(r);
    }
    Ok(out)
}

/// `(APCER, BPCER)` at `tau` by a linear scan.
pub fn oracle_rates(scores: &[f64], truths: &[Truth], tau: f64) -> (f64, f64) {
    let (mut miss, mut nm, mut rej, mut nb) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in scores.iter().zip(truths) {
        match t {
            Truth::Morph => {
                nm += 1;
                miss += usize::from(s < tau);
            }
            Truth::BonaFide => {
                nb += 1;
                rej += usize::from(s >= tau);
            }
        }
    }
    (miss as f64 / nm as f64, rej as f64 / nb as f64)
}

fn oracle_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &s in scores {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Reference operating point by exhaustive counting, independent of the
/// sorted-split implementation: tries every unique score and then +∞ in
/// ascending order, O(n²) overall.
pub fn oracle_apcer_at_bpcer(scores: &[f64], truths: &[Truth], delta: f64) -> (f64, f64, f64) {
    let mut candidates = oracle_thresholds(scores);
    candidates.push(f64::INFINITY);
    for tau in candidates {
        let (a, b) = oracle_rates(scores, truths, tau);
        if b <= delta {
            return (a, b, tau);
        }
    }
    unreachable!("+inf always satisfies the constraint")
}

fn random_set(rng: &mut seed::Rng, max_len: usize) -> (Vec<f64>, Vec<Truth>) {
    let n = rng.random_range(2..=max_len);
    let coarse = rng.random_bool(0.5);
    let mut scores = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for i in 0..n {
        let t = match i {
            0 => Truth::BonaFide,
            1 => Truth::Morph,
            _ if rng.random_bool(0.4) => Truth::BonaFide,
            _ => Truth::Morph,
        };
        let mut s: f64 = rng.random_range(0.0..1.0);
        if coarse {
            s = (s * 20.0).floor() / 20.0;
        }
        scores.push(s);
        truths.push(t);
    }
    (scores, truths)
}

/// Compares the metric implementation against the counting oracle on random
/// score sets (half of them heavily tied).
pub fn metric_oracle(cfg: &SelftestConfig) -> Result<OracleReport> {
    let start = Instant::now();
    let mut rng = seed::rng(seed::derive(cfg.seed, "metric-oracle"));
    let mut mismatches = 0;
    for _ in 0..cfg.oracle_sets {
        let (scores, truths) = random_set(&mut rng, cfg.oracle_max_len);
        for delta in [0.1, 0.01, 0.5] {
            let op = apcer_at_bpcer(&scores, &truths, delta)?;
            let (a, b, tau) = oracle_apcer_at_bpcer(&scores, &truths, delta);
            if op.apcer != a || op.bpcer != b || op.threshold != tau {
                mismatches += 1;
            }
        }
        let tau = scores[rng.random_range(0..scores.len())];
        if apcer_bpcer(&scores, &truths, tau)? != oracle_rates(&scores, &truths, tau) {
            mismatches += 1;
        }
        let det = det_curve(&scores, &truths)?;
        let expected: Vec<(f64, f64, f64)> = oracle_thresholds(&scores)
            .into_iter()
            .map(|t| {
                let (a, b) = oracle_rates(&scores, &truths, t);
                (t, a, b)
            })
            .collect();
        let got: Vec<(f64, f64, f64)> = det.points.iter().map(|p| (p.threshold, p.apcer, p.bpcer)).collect();
        if got != expected {
            mismatches += 1;
        }
    }
    Ok(OracleReport {
        sets: cfg.oracle_sets,
        largest: cfg.oracle_max_len,
        mismatches,
        elapsed: start.elapsed(),
    })
}

pub fn run(cfg: &SelftestConfig) -> Result<SelftestReport> {
    let start = Instant::now();
    let grads = gradient_checks(cfg)?;
    let grad_elapsed = start.elapsed();
    let oracle = metric_oracle(cfg)?;
    Ok(SelftestReport {
        grads,
        oracle,
        grad_elapsed,
    })
}
