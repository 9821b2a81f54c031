//! The fused classification objective.
//!
//! For a pair (suspect image for the first network, trusted image for the
//! second) the objective combines
//!
//! - `l1`: softmax identity loss of the first head on the first network's class,
//! - `l2`: softmax identity loss of the second head on the second network's class,
//! - `l3`: binary cross-entropy on `D = f_first · f_second` against the cross
//!   label `t` (1 when the pair's second labels differ, i.e. a morph attack).
//!
//! `total = w1·l1 + w2·l2 + w3·l3`. The binary-classification baseline uses the
//! same graph with `w1 = w2 = 0`.

use std::fmt;
use std::str::FromStr;

use crate::manifest::SampleKind;
use crate::nn::{dot, sigmoid, softmax_cross_entropy, ClassifierHead};
use crate::{Error, Result};

/// Training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantTag {
    /// Binary classification baseline: identity losses disabled.
    Bc,
    /// Fused classification, morphs labelled with their source identities.
    FcV1,
    /// Fused classification, morphs moved to dedicated classes `y + C`.
    FcV2,
}

impl VariantTag {
    pub const ALL: [VariantTag; 3] = [VariantTag::Bc, VariantTag::FcV1, VariantTag::FcV2];

    /// Classifier head width for `num_identities` base classes.
    pub fn head_classes(self, num_identities: usize) -> usize {
        match self {
            VariantTag::FcV2 => 2 * num_identities,
            VariantTag::Bc | VariantTag::FcV1 => num_identities,
        }
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantTag::Bc => "bc",
            VariantTag::FcV1 => "fc-v1",
            VariantTag::FcV2 => "fc-v2",
        })
    }
}

impl FromStr for VariantTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bc" => Ok(VariantTag::Bc),
            "fc-v1" | "fcv1" | "v1" => Ok(VariantTag::FcV1),
            "fc-v2" | "fcv2" | "v2" => Ok(VariantTag::FcV2),
            _ => Err(Error::Config(format!("unknown variant `{s}` (bc, fc-v1, fc-v2)"))),
        }
    }
}

/// The two identity labels attached to every image, as class indices in `[0, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DualLabels {
    pub y1: usize,
    pub y2: usize,
}

impl DualLabels {
    pub fn same(y: usize) -> Self {
        DualLabels { y1: y, y2: y }
    }
}

/// `t = |sgn(a - b)|`: 0 when the labels agree, 1 otherwise.
pub fn cross_label(y2_first: usize, y2_second: usize) -> u8 {
    u8::from(y2_first != y2_second)
}

/// Maps dual labels to `(first network class, second network class)`.
///
/// Under V2 morphs are shifted by `C` into their own classes; everything else
/// is passed through. The cross label is always computed on unshifted labels.
pub fn allocate_labels(
    labels: DualLabels,
    kind: SampleKind,
    variant: VariantTag,
    num_identities: usize,
) -> Result<(usize, usize)> {
    for y in [labels.y1, labels.y2] {
        if y >= num_identities {
            return Err(Error::LabelRange {
                label: y,
                classes: num_identities,
            });
        }
    }
    Ok(match (variant, kind.is_morph()) {
        (VariantTag::FcV2, true) => (labels.y1 + num_identities, labels.y2 + num_identities),
        _ => (labels.y1, labels.y2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub first_identity: f64,
    pub second_identity: f64,
    pub pair: f64,
}

impl LossWeights {
    /// `L1 + L2 + λ·L3`, with the identity terms zeroed for the baseline.
    pub fn for_variant(variant: VariantTag, lambda: f64) -> Self {
        let id = if variant == VariantTag::Bc { 0.0 } else { 1.0 };
        LossWeights {
            first_identity: id,
            second_identity: id,
            pair: lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    pub t: u8,
    pub d: f64,
}

/// Per-pair loss value and gradients with respect to both feature vectors.
#[derive(Debug, Clone)]
pub struct PairOutput {
    pub breakdown: PairLossBreakdown,
    pub grad_first: Vec<f64>,
    pub grad_second: Vec<f64>,
}

/// Stable binary cross-entropy on a logit: `max(d,0) - d·t + ln(1 + e^{-|d|})`.
/// Returns the loss and its derivative `σ(d) - t`.
pub fn bce_with_logit(d: f64, t: u8) -> (f64, f64) {
    let t = f64::from(t);
    let loss = d.max(0.0) - d * t + (-d.abs()).exp().ln_1p();
    (loss, sigmoid(d) - t)
}

/// Pair logit `D`; with `normalize`, features are L2-normalised first.
pub fn pair_logit(first: &[f64], second: &[f64], normalize: bool) -> f64 {
    assert_eq!(first.len(), second.len(), "feature dimensions differ");
    if normalize {
        dot(first, second) / (norm(first) * norm(second))
    } else {
        dot(first, second)
    }
}

/// Morph score `σ(f_first · f_second)`; higher means more likely an attack.
pub fn detection_score(first: &[f64], second: &[f64]) -> f64 {
    sigmoid(pair_logit(first, second, false))
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// The fused objective for one configured variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedLoss {
    pub weights: LossWeights,
    pub normalize_features: bool,
}

impl FusedLoss {
    pub fn new(variant: VariantTag, lambda: f64, normalize_features: bool) -> Self {
        FusedLoss {
            weights: LossWeights::for_variant(variant, lambda),
            normalize_features,
        }
    }

    /// Evaluates the loss of one pair.
    ///
    /// Head gradients (if requested) are accumulated with factor `scale`;
    /// the returned feature gradients are also multiplied by `scale`.
    #[allow(clippy::too_many_arguments)]
    pub fn pair(
        &self,
        first_head: &ClassifierHead,
        second_head: &ClassifierHead,
        first_feat: &[f64],
        second_feat: &[f64],
        classes: (usize, usize),
        t: u8,
        head_grads: Option<(&mut ClassifierHead, &mut ClassifierHead)>,
        scale: f64,
    ) -> Result<PairOutput> {
        if first_feat.len() != second_feat.len() {
            return Err(Error::Shape(format!(
                "feature dims {} and {} differ",
                first_feat.len(),
                second_feat.len()
            )));
        }
        if !first_feat.iter().chain(second_feat).all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        let dim = first_feat.len();
        let mut grad_first = vec![0.0; dim];
        let mut grad_second = vec![0.0; dim];
        let (g_head1, g_head2) = match head_grads {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };

        let w = self.weights;
        let mut l1 = 0.0;
        if w.first_identity != 0.0 {
            let logits = first_head.logits(first_feat)?;
            let (loss, g) = softmax_cross_entropy(&logits, classes.0)?;
            l1 = loss;
            let s = scale * w.first_identity;
            accumulate_head(first_head, first_feat, &g, g_head1, s, &mut grad_first);
        }
        let mut l2 = 0.0;
        if w.second_identity != 0.0 {
            let logits = second_head.logits(second_feat)?;
            let (loss, g) = softmax_cross_entropy(&logits, classes.1)?;
            l2 = loss;
            let s = scale * w.second_identity;
            accumulate_head(second_head, second_feat, &g, g_head2, s, &mut grad_second);
        }

        let d = pair_logit(first_feat, second_feat, self.normalize_features);
        let (l3, dl_dd) = bce_with_logit(d, t);
        let s = scale * w.pair * dl_dd;
        if s != 0.0 {
            if self.normalize_features {
                let (n1, n2) = (norm(first_feat), norm(second_feat));
                if n1 == 0.0 || n2 == 0.0 {
                    return Err(Error::Numeric("zero-norm feature under normalisation".into()));
                }
                // dD/df1 = (u2 - D·u1) / |f1|, symmetric for f2.
                for k in 0..dim {
                    let (u1, u2) = (first_feat[k] / n1, second_feat[k] / n2);
                    grad_first[k] += s * (u2 - d * u1) / n1;
                    grad_second[k] += s * (u1 - d * u2) / n2;
                }
            } else {
                for k in 0..dim {
                    grad_first[k] += s * second_feat[k];
                    grad_second[k] += s * first_feat[k];
                }
            }
        }

        let total = w.first_identity * l1 + w.second_identity * l2 + w.pair * l3;
        if !total.is_finite() {
            return Err(Error::Numeric(format!("pair loss is {total}")));
        }
        Ok(PairOutput {
            breakdown: PairLossBreakdown {
                l1,
                l2,
                l3,
                total,
                t,
                d,
            },
            grad_first,
            grad_second,
        })
    }
}

fn accumulate_head(
    head: &ClassifierHead,
    features: &[f64],
    grad_logits: &[f64],
    grads: Option<&mut ClassifierHead>,
    scale: f64,
    grad_features: &mut [f64],
) {
    let gf = match grads {
        Some(g) => head.backward(features, grad_logits, g, scale),
        None => {
            let scaled: Vec<f64> = grad_logits.iter().map(|g| g * scale).collect();
            let mut gf = vec![0.0; head.feature_dim()];
            head.weights.matvec_t_acc(&scaled, &mut gf);
            gf
        }
    };
    for (a, b) in grad_features.iter_mut().zip(gf) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::MorphFamily;
    use crate::seed;

    const MORPH: SampleKind = SampleKind::Morph(MorphFamily::Landmark);

    #[test]
    fn cross_label_examples() {
        assert_eq!(cross_label(5, 5), 0);
        assert_eq!(cross_label(3, 7), 1);
        assert_eq!(cross_label(0, 1), 1);
    }

    #[test]
    fn allocation_examples() {
        let a = allocate_labels(DualLabels { y1: 42, y2: 57 }, MORPH, VariantTag::FcV2, 100).unwrap();
        assert_eq!(a, (142, 157));
        let a = allocate_labels(DualLabels::same(7), SampleKind::BonaFide, VariantTag::FcV2, 100).unwrap();
        assert_eq!(a, (7, 7));
        let a = allocate_labels(DualLabels { y1: 3, y2: 9 }, MORPH, VariantTag::FcV1, 100).unwrap();
        assert_eq!(a, (3, 9));
        assert!(matches!(
            allocate_labels(DualLabels { y1: 3, y2: 10 }, MORPH, VariantTag::FcV1, 10),
            Err(Error::LabelRange { label: 10, classes: 10 })
        ));
    }

    #[test]
    fn allocation_is_identity_except_v2_morphs() {
        let c = 5;
        let kinds = [
            SampleKind::BonaFide,
            SampleKind::SelfMorph(MorphFamily::Landmark),
            SampleKind::SelfMorph(MorphFamily::Latent),
            SampleKind::Morph(MorphFamily::Landmark),
            SampleKind::Morph(MorphFamily::Latent),
        ];
        for variant in VariantTag::ALL {
            for kind in kinds {
                for y1 in 0..c {
                    for y2 in 0..c {
                        let got = allocate_labels(DualLabels { y1, y2 }, kind, variant, c).unwrap();
                        if variant == VariantTag::FcV2 && kind.is_morph() {
                            assert_eq!(got, (y1 + c, y2 + c));
                        } else {
                            assert_eq!(got, (y1, y2));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bce_identities() {
        for t in [0, 1] {
            assert!((bce_with_logit(0.0, t).0 - 2f64.ln()).abs() < 1e-12);
        }
        assert!(bce_with_logit(50.0, 1).0 < 1e-20);
        assert!(bce_with_logit(-50.0, 0).0 < 1e-20);
        // Large logits stay finite.
        assert!((bce_with_logit(1e6, 0).0 - 1e6).abs() < 1e-6);
    }

    #[test]
    fn bce_monotone_on_grid() {
        let grid: Vec<f64> = (0..=400).map(|i| -20.0 + 0.1 * f64::from(i)).collect();
        for w in grid.windows(2) {
            assert!(bce_with_logit(w[1], 1).0 < bce_with_logit(w[0], 1).0);
            assert!(bce_with_logit(w[1], 0).0 > bce_with_logit(w[0], 0).0);
        }
    }

    #[test]
    fn detection_score_examples() {
        assert_eq!(detection_score(&[1.0, 0.0], &[0.0, 2.0]), 0.5);
        let v = [3.0, 0.0, 0.0];
        assert!((detection_score(&v, &v) - 1.0 / (1.0 + (-9f64).exp())).abs() < 1e-15);
        let a = [0.2, -1.3, 0.7];
        let b = [1.1, 0.4, -0.6];
        assert_eq!(detection_score(&a, &b), detection_score(&b, &a));
    }

    #[test]
    fn pair_loss_matches_scalar_formulas() {
        let mut rng = seed::rng(11);
        let (c, dim) = (6, 5);
        let h1 = ClassifierHead::init(c, dim, &mut rng);
        let h2 = ClassifierHead::init(c, dim, &mut rng);
        let f1 = [0.3, -0.2, 0.8, 0.1, -0.5];
        let f2 = [-0.4, 0.6, 0.2, 0.9, 0.05];
        let loss = FusedLoss::new(VariantTag::FcV1, 1.0, false);
        let out = loss.pair(&h1, &h2, &f1, &f2, (2, 4), 1, None, 1.0).unwrap();

        let ce = |h: &ClassifierHead, f: &[f64], y: usize| {
            let z: Vec<f64> = (0..c)
                .map(|r| h.biases[r] + (0..dim).map(|k| h.weights.get(r, k) * f[k]).sum::<f64>())
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            -(z[y].exp() / denom).ln()
        };
        let d: f64 = f1.iter().zip(&f2).map(|(a, b)| a * b).sum();
        let sig = 1.0 / (1.0 + (-d).exp());
        let l3 = -(sig.ln());
        let b = out.breakdown;
        assert!((b.l1 - ce(&h1, &f1, 2)).abs() < 1e-12);
        assert!((b.l2 - ce(&h2, &f2, 4)).abs() < 1e-12);
        assert!((b.l3 - l3).abs() < 1e-12);
        assert!((b.total - (b.l1 + b.l2 + b.l3)).abs() < 1e-12);
        assert_eq!(b.t, 1);
    }

    #[test]
    fn baseline_reports_zero_identity_losses() {
        let mut rng = seed::rng(2);
        let h = ClassifierHead::init(3, 2, &mut rng);
        let loss = FusedLoss::new(VariantTag::Bc, 1.0, false);
        let mut g1 = h.clone();
        let mut g2 = h.clone();
        use crate::nn::ParamSet;
        g1.zero();
        g2.zero();
        let out = loss
            .pair(
                &h,
                &h,
                &[0.0, 0.0],
                &[1.0, 2.0],
                (0, 1),
                0,
                Some((&mut g1, &mut g2)),
                1.0,
            )
            .unwrap();
        assert_eq!((out.breakdown.l1, out.breakdown.l2), (0.0, 0.0));
        assert!((out.breakdown.l3 - 2f64.ln()).abs() < 1e-12);
        assert!(g1.to_flat().iter().chain(g2.to_flat().iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_features_rejected() {
        let mut rng = seed::rng(2);
        let h = ClassifierHead::init(3, 2, &mut rng);
        let loss = FusedLoss::new(VariantTag::FcV1, 1.0, false);
        let r = loss.pair(&h, &h, &[f64::NAN, 0.0], &[1.0, 2.0], (0, 1), 0, None, 1.0);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn variant_parsing() {
        for v in VariantTag::ALL {
            assert_eq!(v.to_string().parse::<VariantTag>().unwrap(), v);
        }
        assert!("fc-v3".parse::<VariantTag>().is_err());
        assert_eq!(VariantTag::FcV2.head_classes(10), 20);
    }
}
