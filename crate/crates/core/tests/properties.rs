//! Property tests for the spec-level invariants.

use proptest::prelude::*;

use hofmn_core::attack::{eps_step, project_feasible, LpNorm};
use hofmn_core::eval::{median, CurveRecord, RobustnessCurve};
use hofmn_core::hyperopt::{ParamSpec, SearchSpace};
use hofmn_core::loss::{loss_value, LossKind};

fn mixed_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec::Range {
            name: "gamma".into(),
            low: 8.0 / 255.0,
            high: 10.0,
            log: true,
        },
        ParamSpec::Range {
            name: "mu".into(),
            low: 0.0,
            high: 0.9,
            log: false,
        },
        ParamSpec::Choice {
            name: "patience".into(),
            values: vec![2.0, 5.0, 10.0],
        },
        ParamSpec::Fixed {
            name: "threshold".into(),
            value: 1e-4,
        },
    ])
    .unwrap()
}

proptest! {
    #[test]
    fn projection_is_feasible_and_idempotent(
        x in prop::collection::vec(0.0f64..=1.0, 1..8),
        raw in prop::collection::vec(-3.0f64..3.0, 1..8),
        eps in prop_oneof![Just(f64::INFINITY), (0.0f64..1.5)],
        use_l2 in any::<bool>(),
    ) {
        let d = x.len().min(raw.len());
        let x = &x[..d];
        let mut delta = raw[..d].to_vec();
        let norm = if use_l2 { LpNorm::L2 } else { LpNorm::Linf };
        project_feasible(x, &mut delta, eps, norm);
        prop_assert!(norm.norm(&delta) <= eps);
        for i in 0..d {
            let v = x[i] + delta[i];
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let once = delta.clone();
        project_feasible(x, &mut delta, eps, norm);
        prop_assert_eq!(once, delta);
    }

    #[test]
    fn losses_are_shift_invariant_and_dlr_scale_invariant(
        logits in prop::collection::vec(-5.0f64..5.0, 3..6),
        shift in -10.0f64..10.0,
        scale in 0.01f64..100.0,
        y_pick in any::<prop::sample::Index>(),
    ) {
        let y = y_pick.index(logits.len());
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        for kind in LossKind::all() {
            if let (Ok(a), Ok(b)) = (loss_value(kind, &logits, y), loss_value(kind, &shifted, y)) {
                prop_assert!((a - b).abs() < 1e-9, "{kind} shifted {a} vs {b}");
            }
        }
        let scaled: Vec<f64> = logits.iter().map(|v| v * scale).collect();
        if let (Ok(a), Ok(b)) = (
            loss_value(LossKind::Dlr, &logits, y),
            loss_value(LossKind::Dlr, &scaled, y),
        ) {
            prop_assert!((a - b).abs() < 1e-9, "dlr scaled {a} vs {b}");
        }
    }

    #[test]
    fn median_matches_naive_reference(
        mut values in prop::collection::vec(prop_oneof![9 => 0.0f64..1.0, 1 => Just(f64::INFINITY)], 1..30),
    ) {
        let got = median(&values);
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len();
        let naive = if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * values[n / 2 - 1] + 0.5 * values[n / 2]
        };
        if naive.is_finite() {
            prop_assert!((got - naive).abs() < 1e-12);
            // A finite median needs strictly more than half the values finite.
            let finite = values.iter().filter(|v| v.is_finite()).count();
            prop_assert!(2 * finite > n);
        } else {
            prop_assert!(got.is_infinite());
        }
    }

    #[test]
    fn space_round_trip_is_identity_on_decoded_values(
        unit in prop::collection::vec(0.0f64..=1.0, 3),
    ) {
        let space = mixed_space();
        let point = space.decode(&unit).unwrap();
        let back = space.point_from_values(&point.values).unwrap();
        prop_assert_eq!(&back.values, &point.values);
        // Encoded units land on the same decoded values again.
        let again = space.decode(&back.unit).unwrap();
        prop_assert_eq!(&again.values, &point.values);
    }

    #[test]
    fn eps_step_follows_the_quoted_rule(
        eps_prev in prop_oneof![Just(f64::INFINITY), (1e-6f64..1.0)],
        gamma in 0.001f64..0.5,
        best in prop_oneof![Just(f64::INFINITY), (1e-6f64..1.0)],
        delta_norm in 0.0f64..1.0,
        adv in any::<bool>(),
    ) {
        let next = eps_step(eps_prev, gamma, adv, best, delta_norm);
        if adv {
            let seed = eps_prev.min(best).min(delta_norm);
            prop_assert!((next - seed * (1.0 - gamma)).abs() <= 1e-15 * seed.max(1.0));
            prop_assert!(next.is_finite());
        } else if eps_prev.is_finite() {
            prop_assert!((next - eps_prev * (1.0 + gamma)).abs() <= 1e-15);
        } else {
            prop_assert!(next.is_infinite());
        }
    }

    #[test]
    fn success_rate_and_robust_accuracy_are_complementary_and_monotone(
        norms in prop::collection::vec(prop_oneof![4 => 0.0f64..0.5, 1 => Just(f64::INFINITY)], 1..40),
        eps_a in 0.0f64..0.6,
        eps_b in 0.0f64..0.6,
    ) {
        let records: Vec<CurveRecord> = norms
            .iter()
            .map(|&n| CurveRecord { norm: n, success: n.is_finite() })
            .collect();
        let curve = RobustnessCurve::from_records(&records).unwrap();
        prop_assert!((curve.attack_success_rate(eps_a) + curve.robust_accuracy(eps_a) - 1.0).abs() < 1e-12);
        let (lo, hi) = if eps_a <= eps_b { (eps_a, eps_b) } else { (eps_b, eps_a) };
        prop_assert!(curve.robust_accuracy(lo) >= curve.robust_accuracy(hi));
    }
}
