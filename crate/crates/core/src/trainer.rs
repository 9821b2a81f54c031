//! Dual-network training, feature extraction and the auxiliary face
//! recognition model used for score fusion.

use std::borrow::Cow;
use std::fmt;
use std::fmt::Write as _;

use crate::datamine::Corpus;
use crate::image::GrayImage;
use crate::loss::{allocate_labels, pair_logit, DualLabels, FusedLoss, PairLossBreakdown, VariantTag};
use crate::manifest::SampleKind;
use crate::nn::{
    sgd_step, sigmoid, softmax_cross_entropy, Activation, ClassifierHead, MlpBackbone, ParamSet, SgdConfig, SgdState,
};
use crate::seed;
use crate::{Error, Result};

/// Backbone and head layout shared by both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub activation: Activation,
    pub variant: VariantTag,
    pub normalize_features: bool,
    pub input_norm: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dims: vec![256],
            feature_dim: 64,
            activation: Activation::Relu,
            variant: VariantTag::FcV2,
            normalize_features: false,
            input_norm: 6.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.input_norm.is_finite() && self.input_norm >= 0.0) {
            return Err(Error::Config(format!(
                "input_norm {} must be finite and non-negative",
                self.input_norm
            )));
        }
        Ok(())
    }

    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }
}

/// Centres an input and scales it to L2 norm `norm` (only centred when
/// constant).
pub fn standardize(x: &[f64], norm: f64) -> Vec<f64> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let inv = if ss > 1e-24 { norm / ss.sqrt() } else { 1.0 };
    x.iter().map(|v| (v - mean) * inv).collect()
}

/// Model input for raw pixels; `input_norm = 0` passes pixels through.
fn prepare(x: &[f64], input_norm: f64) -> Cow<'_, [f64]> {
    if input_norm > 0.0 {
        Cow::Owned(standardize(x, input_norm))
    } else {
        Cow::Borrowed(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Network {
    First,
    Second,
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Network::First => "first",
            Network::Second => "second",
        })
    }
}

/// Two independent backbones with their identity heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DualModel {
    pub first_backbone: MlpBackbone,
    pub second_backbone: MlpBackbone,
    pub first_head: ClassifierHead,
    pub second_head: ClassifierHead,
    pub variant: VariantTag,
    pub normalize_features: bool,
    pub input_norm: f64,
}

/// One pair prepared for the loss: inputs, head classes and cross label.
#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    pub first: &'a [f64],
    pub second: &'a [f64],
    pub classes: (usize, usize),
    pub t: u8,
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLoss {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub t_ratio: f64,
}

impl DualModel {
    pub fn init(input_dim: usize, num_identities: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        if num_identities == 0 {
            return Err(Error::Config("model needs at least one identity".into()));
        }
        config.validate()?;
        let dims = config.dims(input_dim);
        let classes = config.variant.head_classes(num_identities);
        let rng = |label: &str| seed::rng(seed::derive(seed, label));
        Ok(DualModel {
            first_backbone: MlpBackbone::init(&dims, config.activation, &mut rng("first-backbone"))?,
            second_backbone: MlpBackbone::init(&dims, config.activation, &mut rng("second-backbone"))?,
            first_head: ClassifierHead::init(classes, config.feature_dim, &mut rng("first-head")),
            second_head: ClassifierHead::init(classes, config.feature_dim, &mut rng("second-head")),
            variant: config.variant,
            normalize_features: config.normalize_features,
            input_norm: config.input_norm,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn input_dim(&self) -> usize {
        self.first_backbone.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.first_backbone.feature_dim()
    }

    pub fn num_identities(&self) -> usize {
        match self.variant {
            VariantTag::FcV2 => self.first_head.num_classes() / 2,
            _ => self.first_head.num_classes(),
        }
    }

    pub fn backbone(&self, which: Network) -> &MlpBackbone {
        match which {
            Network::First => &self.first_backbone,
            Network::Second => &self.second_backbone,
        }
    }

    /// Backbone features of a raw input.
    pub fn features(&self, input: &[f64], which: Network) -> Result<Vec<f64>> {
        self.backbone(which).forward(&prepare(input, self.input_norm))
    }

    /// Checks the structural invariants of a loaded or assembled model.
    pub fn validate(&self) -> Result<()> {
        let dim = self.feature_dim();
        if self.second_backbone.feature_dim() != dim
            || self.second_backbone.input_dim() != self.input_dim()
            || self.first_head.feature_dim() != dim
            || self.second_head.feature_dim() != dim
        {
            return Err(Error::Shape("first and second network shapes disagree".into()));
        }
        let c = self.first_head.num_classes();
        if self.second_head.num_classes() != c || (self.variant == VariantTag::FcV2 && !c.is_multiple_of(2)) {
            return Err(Error::Shape(format!(
                "head class count {c} inconsistent with {}",
                self.variant
            )));
        }
        Ok(())
    }

    /// Morph score of a (suspect, trusted) pair of raw inputs.
    pub fn score(&self, suspect: &[f64], trusted: &[f64]) -> Result<f64> {
        let f1 = self.features(suspect, Network::First)?;
        let f2 = self.features(trusted, Network::Second)?;
        Ok(sigmoid(pair_logit(&f1, &f2, self.normalize_features)))
    }

    pub fn score_images(&self, suspect: &GrayImage, trusted: &GrayImage) -> Result<f64> {
        self.score(suspect.pixels(), trusted.pixels())
    }

    /// Mean loss over `pairs`; accumulates the mean gradient into `grads`.
    pub fn batch_loss(&self, pairs: &[PairInput<'_>], loss: &FusedLoss, grads: &mut DualModel) -> Result<BatchLoss> {
        if pairs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let scale = 1.0 / pairs.len() as f64;
        let mut out = BatchLoss::default();
        for p in pairs {
            let x1 = prepare(p.first, self.input_norm);
            let x2 = prepare(p.second, self.input_norm);
            let tr1 = self.first_backbone.forward_trace(&x1)?;
            let tr2 = self.second_backbone.forward_trace(&x2)?;
            let res = loss.pair(
                &self.first_head,
                &self.second_head,
                tr1.features(),
                tr2.features(),
                p.classes,
                p.t,
                Some((&mut grads.first_head, &mut grads.second_head)),
                scale,
            )?;
            self.first_backbone
                .backward(&x1, &tr1, &res.grad_first, &mut grads.first_backbone, 1.0);
            self.second_backbone
                .backward(&x2, &tr2, &res.grad_second, &mut grads.second_backbone, 1.0);
            let b: PairLossBreakdown = res.breakdown;
            out.l1 += scale * b.l1;
            out.l2 += scale * b.l2;
            out.l3 += scale * b.l3;
            out.total += scale * b.total;
            out.t_ratio += scale * f64::from(b.t);
        }
        Ok(out)
    }
}

impl ParamSet for DualModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.first_backbone.param_slices();
        v.extend(self.first_head.param_slices());
        v.extend(self.second_backbone.param_slices());
        v.extend(self.second_head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.first_backbone.param_slices_mut();
        v.extend(self.first_head.param_slices_mut());
        v.extend(self.second_backbone.param_slices_mut());
        v.extend(self.second_head.param_slices_mut());
        v
    }
}

/// Backbone features of one image (no head).
pub fn extract_features(model: &DualModel, image: &GrayImage, which: Network) -> Result<Vec<f64>> {
    model.features(image.pixels(), which)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sgd: SgdConfig::default(),
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub t_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub variant: VariantTag,
    pub seed: u64,
    pub records: Vec<StepRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,l1,l2,l3,total,t_ratio\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.step, r.lr, r.l1, r.l2, r.l3, r.total, r.t_ratio
            );
        }
        s
    }

    /// Mean `l3` over the first and last `fraction` of steps.
    pub fn l3_progress(&self, fraction: f64) -> (f64, f64) {
        let n = self.records.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1));
        let mean = |r: &[StepRecord]| r.iter().map(|x| x.l3).sum::<f64>() / r.len().max(1) as f64;
        (mean(&self.records[..k.min(n)]), mean(&self.records[n - k.min(n)..]))
    }
}

/// Number of optimizer steps a run performs.
pub fn planned_steps(corpus: &Corpus, sgd: &SgdConfig) -> usize {
    sgd.epochs * corpus.steps_per_epoch(sgd.batch_size)
}

/// Trains a dual model from scratch on `corpus`.
pub fn train(
    corpus: &Corpus,
    model: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<(DualModel, TrainReport)> {
    let dual = DualModel::init(
        corpus.input_dim(),
        corpus.num_classes(),
        model,
        seed::derive(seed, "init"),
    )?;
    train_from(dual, corpus, config, seed)
}

/// Continues training an initialised model (parameters are updated in place).
pub fn train_from(
    mut dual: DualModel,
    corpus: &Corpus,
    config: &TrainConfig,
    seed: u64,
) -> Result<(DualModel, TrainReport)> {
    if !config.lambda.is_finite() || config.lambda < 0.0 {
        return Err(Error::Config(format!(
            "lambda {} must be finite and non-negative",
            config.lambda
        )));
    }
    let steps = planned_steps(corpus, &config.sgd);
    if steps == 0 {
        return Err(Error::Config(format!(
            "corpus of {} samples yields no batches of {}",
            corpus.len(),
            config.sgd.batch_size
        )));
    }
    let sgd = SgdConfig {
        total_steps: steps,
        ..config.sgd.clone()
    };
    sgd.validate()?;
    dual.validate()?;
    let loss = FusedLoss::new(dual.variant, config.lambda, dual.normalize_features);
    let num_ids = corpus.num_classes();
    let sample_seed = seed::derive(seed, "sampling");
    let mut grads = dual.zeros_like();
    let mut state = SgdState::new(&dual);
    let mut records = Vec::with_capacity(steps);

    for step in 0..steps {
        let batch = corpus.sample_batch(sgd.batch_size, sample_seed, step)?;
        let mut inputs = Vec::with_capacity(batch.len());
        for p in &batch {
            let first = allocate_labels(p.first_labels, p.first_kind, dual.variant, num_ids)?.0;
            let second = allocate_labels(p.second_labels, p.second_kind, dual.variant, num_ids)?.1;
            inputs.push(PairInput {
                first: corpus.candidate_image(p.first).pixels(),
                second: corpus.reference_image(p.second).pixels(),
                classes: (first, second),
                t: p.t(),
            });
        }
        let describe = || {
            batch
                .iter()
                .map(|p| {
                    format!(
                        "{}|{}",
                        corpus.candidates()[p.first].record.path,
                        corpus.references()[p.second].record.path
                    )
                })
                .collect::<Vec<_>>()
                .join(",")
        };
        grads.zero();
        let b = dual.batch_loss(&inputs, &loss, &mut grads).map_err(|e| match e {
            Error::Numeric(m) => Error::Divergence {
                step,
                detail: format!("{m}; batch [{}]", describe()),
            },
            other => other,
        })?;
        if !b.total.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("loss {}; batch [{}]", b.total, describe()),
            });
        }
        let lr = sgd_step(&mut dual, &grads, &mut state, step, &sgd)?;
        if !dual.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite parameters after update".into(),
            });
        }
        records.push(StepRecord {
            step,
            lr,
            l1: b.l1,
            l2: b.l2,
            l3: b.l3,
            total: b.total,
            t_ratio: b.t_ratio,
        });
    }
    let report = TrainReport {
        variant: dual.variant,
        seed,
        records,
    };
    Ok((dual, report))
}

/// A labelled input for feature analysis.
#[derive(Debug, Clone, Copy)]
pub struct EvalSample<'a> {
    pub input: &'a [f64],
    pub labels: DualLabels,
    pub kind: SampleKind,
}

/// Morph-to-source-centroid distance divided by the mean distance between
/// class centroids; `Degenerate` when the centroids coincide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Separation {
    Ratio(f64),
    Degenerate,
}

impl Separation {
    pub fn value(self) -> Option<f64> {
        match self {
            Separation::Ratio(r) => Some(r),
            Separation::Degenerate => None,
        }
    }
}

impl fmt::Display for Separation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Separation::Ratio(r) => write!(f, "{r:.6}"),
            Separation::Degenerate => f.write_str("degenerate"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationStat {
    pub first: Separation,
    pub second: Separation,
}

/// Per network: centroids of original bona fide features per class, then the
/// mean distance of each morph's features to the centroid of its `y1`
/// (first network) or `y2` (second network), normalised by the mean
/// pairwise inter-centroid distance.
pub fn morph_separation_stat(model: &DualModel, samples: &[EvalSample<'_>]) -> Result<SeparationStat> {
    let stat = |which: Network| -> Result<Separation> {
        let mut sums: std::collections::BTreeMap<usize, (Vec<f64>, usize)> = Default::default();
        for s in samples.iter().filter(|s| s.kind.is_original()) {
            let f = model.features(s.input, which)?;
            let e = sums.entry(s.labels.y1).or_insert_with(|| (vec![0.0; f.len()], 0));
            e.0.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
            e.1 += 1;
        }
        let centroids: std::collections::BTreeMap<usize, Vec<f64>> = sums
            .into_iter()
            .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        let mut morph_sum = 0.0;
        let mut morphs = 0usize;
        for s in samples.iter().filter(|s| s.kind.is_morph()) {
            let class = match which {
                Network::First => s.labels.y1,
                Network::Second => s.labels.y2,
            };
            let c = centroids.get(&class).ok_or(Error::Coverage(class as u32))?;
            let f = model.features(s.input, which)?;
            morph_sum += euclid(&f, c);
            morphs += 1;
        }
        if morphs == 0 {
            return Err(Error::Metric("separation needs at least one morph".into()));
        }
        let cs: Vec<&Vec<f64>> = centroids.values().collect();
        let mut inter = 0.0;
        let mut pairs = 0usize;
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                inter += euclid(cs[i], cs[j]);
                pairs += 1;
            }
        }
        if pairs == 0 {
            return Err(Error::Metric("separation needs at least two classes".into()));
        }
        let inter = inter / pairs as f64;
        let intra = morph_sum / morphs as f64;
        Ok(if inter <= f64::EPSILON * (1.0 + intra) {
            Separation::Degenerate
        } else {
            Separation::Ratio(intra / inter)
        })
    };
    Ok(SeparationStat {
        first: stat(Network::First)?,
        second: stat(Network::Second)?,
    })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Single backbone with an identity head trained by plain softmax; its
/// features give the face recognition similarity used for score fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FrModel {
    pub backbone: MlpBackbone,
    pub head: ClassifierHead,
    pub input_norm: f64,
}

impl ParamSet for FrModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.backbone.param_slices();
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.backbone.param_slices_mut();
        v.extend(self.head.param_slices_mut());
        v
    }
}

impl FrModel {
    pub fn init(input_dim: usize, num_identities: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(FrModel {
            backbone: MlpBackbone::init(
                &config.dims(input_dim),
                config.activation,
                &mut seed::rng(seed::derive(seed, "fr-backbone")),
            )?,
            head: ClassifierHead::init(
                num_identities,
                config.feature_dim,
                &mut seed::rng(seed::derive(seed, "fr-head")),
            ),
            input_norm: config.input_norm,
        })
    }

    pub fn features(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.backbone.forward(&prepare(input, self.input_norm))
    }

    /// `(1 + cos) / 2` between the two images' features, in [0, 1].
    pub fn similarity(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let na = crate::nn::dot(&fa, &fa).sqrt();
        let nb = crate::nn::dot(&fb, &fb).sqrt();
        if na == 0.0 || nb == 0.0 {
            return Ok(0.5);
        }
        let cos = (crate::nn::dot(&fa, &fb) / (na * nb)).clamp(-1.0, 1.0);
        Ok((1.0 + cos) / 2.0)
    }
}

/// Trains the face recognition model on the corpus's original bona fides.
/// Returns the model and the per-step mean cross-entropy.
pub fn train_fr(corpus: &Corpus, model: &ModelConfig, sgd: &SgdConfig, seed: u64) -> Result<(FrModel, Vec<f64>)> {
    let refs = corpus.references();
    let n = sgd.batch_size;
    let spe = refs.len().checked_div(n).unwrap_or(0);
    let steps = sgd.epochs * spe;
    if steps == 0 {
        return Err(Error::Config(format!(
            "{} references yield no batches of {n}",
            refs.len()
        )));
    }
    let sgd = SgdConfig {
        total_steps: steps,
        ..sgd.clone()
    };
    sgd.validate()?;
    let mut fr = FrModel::init(
        corpus.input_dim(),
        corpus.num_classes(),
        model,
        seed::derive(seed, "init"),
    )?;
    let mut grads = fr.clone();
    let mut state = SgdState::new(&fr);
    let mut losses = Vec::with_capacity(steps);
    let mut order: Vec<usize> = (0..refs.len()).collect();
    for step in 0..steps {
        if step % spe == 0 {
            use rand::seq::SliceRandom;
            order.shuffle(&mut seed::rng(seed::derive_index(
                seed::derive(seed, "fr-epoch"),
                (step / spe) as u64,
            )));
        }
        grads.zero();
        let scale = 1.0 / n as f64;
        let mut mean = 0.0;
        for &i in &order[(step % spe) * n..(step % spe + 1) * n] {
            let x = prepare(corpus.reference_image(i).pixels(), fr.input_norm);
            let tr = fr.backbone.forward_trace(&x)?;
            let logits = fr.head.logits(tr.features())?;
            let (l, g) = softmax_cross_entropy(&logits, refs[i].labels.y1)?;
            mean += scale * l;
            let gf = fr.head.backward(tr.features(), &g, &mut grads.head, scale);
            fr.backbone.backward(&x, &tr, &gf, &mut grads.backbone, 1.0);
        }
        if !mean.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("face recognition loss {mean}"),
            });
        }
        sgd_step(&mut fr, &grads, &mut state, step, &sgd)?;
        losses.push(mean);
    }
    Ok((fr, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossWeights;
    use crate::nn::Dense;

    fn tiny(variant: VariantTag) -> ModelConfig {
        ModelConfig {
            hidden_dims: vec![5],
            feature_dim: 3,
            activation: Activation::Tanh,
            variant,
            normalize_features: false,
            input_norm: 0.0,
        }
    }

    #[test]
    fn heads_follow_variant() {
        let m = DualModel::init(4, 6, &tiny(VariantTag::FcV2), 1).unwrap();
        assert_eq!(m.first_head.num_classes(), 12);
        assert_eq!(m.num_identities(), 6);
        let m = DualModel::init(4, 6, &tiny(VariantTag::Bc), 1).unwrap();
        assert_eq!(m.second_head.num_classes(), 6);
        assert_ne!(m.first_backbone, m.second_backbone);
        m.validate().unwrap();
    }

    #[test]
    fn loss_paths_touch_only_their_network() {
        let m = DualModel::init(4, 3, &tiny(VariantTag::FcV1), 2).unwrap();
        let a = [0.1, -0.2, 0.3, 0.4];
        let b = [0.5, 0.1, -0.3, 0.2];
        let pair = [PairInput {
            first: &a,
            second: &b,
            classes: (1, 2),
            t: 1,
        }];
        let only = |w: LossWeights| {
            let mut g = m.zeros_like();
            let loss = FusedLoss {
                weights: w,
                normalize_features: false,
            };
            m.batch_loss(&pair, &loss, &mut g).unwrap();
            let first: f64 = g
                .first_backbone
                .to_flat()
                .iter()
                .chain(&g.first_head.to_flat())
                .map(|v| v.abs())
                .sum();
            let second: f64 = g
                .second_backbone
                .to_flat()
                .iter()
                .chain(&g.second_head.to_flat())
                .map(|v| v.abs())
                .sum();
            (first, second)
        };
        let (f, s) = only(LossWeights {
            first_identity: 1.0,
            second_identity: 0.0,
            pair: 0.0,
        });
        assert!(f > 0.0 && s == 0.0);
        let (f, s) = only(LossWeights {
            first_identity: 0.0,
            second_identity: 1.0,
            pair: 0.0,
        });
        assert!(f == 0.0 && s > 0.0);
    }

    #[test]
    fn score_is_sigmoid_of_feature_dot() {
        let m = DualModel::init(4, 3, &tiny(VariantTag::FcV1), 3).unwrap();
        let a = [0.3, 0.1, 0.0, 0.9];
        let f1 = m.first_backbone.forward(&a).unwrap();
        let f2 = m.second_backbone.forward(&a).unwrap();
        let d: f64 = f1.iter().zip(&f2).map(|(x, y)| x * y).sum();
        let s = m.score(&a, &a).unwrap();
        assert!((s - 1.0 / (1.0 + (-d).exp())).abs() < 1e-15);
        assert!(s > 0.0 && s < 1.0);
    }

    fn constant_model(value: f64) -> DualModel {
        let layer = Dense::new(crate::nn::Tensor2::zeros(2, 2), vec![value; 2], Activation::Identity).unwrap();
        let bb = MlpBackbone::new(vec![layer]).unwrap();
        let head = ClassifierHead::new(crate::nn::Tensor2::zeros(2, 2), vec![0.0; 2]).unwrap();
        DualModel {
            first_backbone: bb.clone(),
            second_backbone: bb,
            first_head: head.clone(),
            second_head: head,
            variant: VariantTag::FcV1,
            normalize_features: false,
            input_norm: 0.0,
        }
    }

    #[test]
    fn separation_degenerate_on_constant_features() {
        let m = constant_model(0.5);
        let x = [0.0, 1.0];
        let s = |y1, y2, kind| EvalSample {
            input: &x,
            labels: DualLabels { y1, y2 },
            kind,
        };
        let fam = crate::manifest::MorphFamily::Landmark;
        let samples = [
            s(0, 0, SampleKind::BonaFide),
            s(1, 1, SampleKind::BonaFide),
            s(0, 1, SampleKind::Morph(fam)),
        ];
        let st = morph_separation_stat(&m, &samples).unwrap();
        assert_eq!(st.first, Separation::Degenerate);
        assert_eq!(st.second.to_string(), "degenerate");
        let missing = [
            s(0, 0, SampleKind::BonaFide),
            s(1, 1, SampleKind::BonaFide),
            s(0, 4, SampleKind::Morph(fam)),
        ];
        assert!(matches!(morph_separation_stat(&m, &missing), Err(Error::Coverage(4))));
    }

    #[test]
    fn separation_matches_hand_computation() {
        // Identity backbone on 2-D inputs.
        let mut m = constant_model(0.0);
        for bb in [&mut m.first_backbone, &mut m.second_backbone] {
            *bb = MlpBackbone::new(vec![Dense::new(
                crate::nn::Tensor2::identity(2),
                vec![0.0; 2],
                Activation::Identity,
            )
            .unwrap()])
            .unwrap();
        }
        let pts: [[f64; 2]; 3] = [[0.0, 0.0], [4.0, 0.0], [1.0, 0.0]];
        let fam = crate::manifest::MorphFamily::Latent;
        let samples = [
            EvalSample {
                input: &pts[0],
                labels: DualLabels::same(0),
                kind: SampleKind::BonaFide,
            },
            EvalSample {
                input: &pts[1],
                labels: DualLabels::same(1),
                kind: SampleKind::BonaFide,
            },
            EvalSample {
                input: &pts[2],
                labels: DualLabels { y1: 0, y2: 1 },
                kind: SampleKind::Morph(fam),
            },
        ];
        let st = morph_separation_stat(&m, &samples).unwrap();
        assert_eq!(st.first, Separation::Ratio(0.25));
        assert_eq!(st.second, Separation::Ratio(0.75));
    }

    #[test]
    fn report_csv_layout() {
        let r = TrainReport {
            variant: VariantTag::Bc,
            seed: 1,
            records: vec![StepRecord {
                step: 0,
                lr: 0.01,
                l1: 0.0,
                l2: 0.0,
                l3: 0.5,
                total: 0.5,
                t_ratio: 0.5,
            }],
        };
        let csv = r.to_csv();
        assert!(csv.starts_with("step,lr,l1,l2,l3,total,t_ratio\n0,1e-2,0e0,0e0,5e-1"));
        assert_eq!(r.l3_progress(0.1), (0.5, 0.5));
    }
}
