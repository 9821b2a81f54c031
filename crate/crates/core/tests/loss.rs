use fcmad::loss::{bce_with_logit, FusedLoss, VariantTag};
use fcmad::nn::{softmax_cross_entropy, ClassifierHead, Tensor2};
use fcmad::selftest::{gradient_checks, SelftestConfig};
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

#[test]
fn uniform_logits_give_ln_c() {
    for c in [2usize, 3, 10, 100, 1000] {
        for level in [0.0, -3.5, 42.0] {
            let (loss, grad) = softmax_cross_entropy(&vec![level; c], c / 2).unwrap();
            assert!((loss - (c as f64).ln()).abs() <= 1e-12, "C={c}");
            assert!((grad.iter().sum::<f64>()).abs() <= 1e-12);
        }
    }
}

#[test]
fn pair_loss_at_zero_logit_is_ln2() {
    for t in [0, 1] {
        let (l, g) = bce_with_logit(0.0, t);
        assert!((l - LN2).abs() <= 1e-12);
        assert_eq!(g, 0.5 - f64::from(t));
    }
}

#[test]
fn pair_loss_is_monotone_on_grid() {
    let grid: Vec<f64> = (0..=4000).map(|k| -20.0 + f64::from(k) * 0.01).collect();
    for w in grid.windows(2) {
        assert!(bce_with_logit(w[1], 1).0 < bce_with_logit(w[0], 1).0, "t=1 at {}", w[0]);
        assert!(bce_with_logit(w[1], 0).0 > bce_with_logit(w[0], 0).0, "t=0 at {}", w[0]);
    }
}

proptest! {
    #[test]
    fn stable_bce_matches_naive_formula(d in -15.0f64..15.0, t in 0u8..=1) {
        let p = 1.0 / (1.0 + (-d).exp());
        let naive = -(f64::from(t) * p.ln() + (1.0 - f64::from(t)) * (1.0 - p).ln());
        let (l, g) = bce_with_logit(d, t);
        prop_assert!((l - naive).abs() <= 1e-8 * (1.0 + naive));
        prop_assert!((g - (p - f64::from(t))).abs() <= 1e-12);
    }

    #[test]
    fn baseline_ignores_identity_terms(f in proptest::collection::vec(-2.0f64..2.0, 8), t in 0u8..=1) {
        let head = ClassifierHead::new(Tensor2::from_vec(3, 4, (0..12).map(|k| f64::from(k) * 0.1).collect()).unwrap(), vec![0.0; 3]).unwrap();
        let (a, b) = f.split_at(4);
        let bc = FusedLoss::new(VariantTag::Bc, 1.0, false)
            .pair(&head, &head, a, b, (0, 1), t, None, 1.0)
            .unwrap();
        prop_assert_eq!((bc.breakdown.l1, bc.breakdown.l2), (0.0, 0.0));
        prop_assert_eq!(bc.breakdown.total, bce_with_logit(bc.breakdown.d, t).0);
        let v1 = FusedLoss::new(VariantTag::FcV1, 1.0, false)
            .pair(&head, &head, a, b, (0, 1), t, None, 1.0)
            .unwrap();
        prop_assert!((v1.breakdown.total - (v1.breakdown.l1 + v1.breakdown.l2 + v1.breakdown.l3)).abs() <= 1e-12);
        prop_assert_eq!(v1.breakdown.l3, bc.breakdown.l3);
    }
}

#[test]
fn fused_loss_gradients_match_finite_differences() {
    let reports = gradient_checks(&SelftestConfig::default()).unwrap();
    for v in ["bc", "fc-v1", "fc-v2"] {
        assert!(reports.iter().any(|r| r.label.starts_with(v)), "{v} not checked");
    }
    for r in &reports {
        assert!(r.num_params <= 2000, "{}: {} params", r.label, r.num_params);
        assert!(r.max_rel_error < 1e-4, "{}: {}", r.label, r.max_rel_error);
    }
}
