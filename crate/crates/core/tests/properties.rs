//! Randomized invariants of the numeric and text helpers.

use proptest::prelude::*;
use vml_core::datasets::{self, Split};
use vml_core::domain::{BuiltinTask, Target};
use vml_core::numfmt::{mean, pairwise_sum, py_repr, round_to};
use vml_core::parsing::{parse_learner_output, parse_number_list, parse_optimizer_output};
use vml_core::training::loss::{accuracy, loss_cross_entropy, loss_mse, loss_zero_one};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1.0..1.0f64,
        any::<f64>().prop_filter("finite", |x| x.is_finite())
    ]
}

/// Neumaier compensated summation, used as a near-exact reference.
fn compensated_sum(v: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &x in v {
        let t = sum + x;
        c += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + c
}

proptest! {
    #[test]
    fn py_repr_round_trips(x in finite()) {
        prop_assert_eq!(py_repr(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn short_sums_are_sequential(v in prop::collection::vec(-1e3..1e3f64, 0..8)) {
        let naive = v.iter().fold(0.0, |a, b| a + b);
        prop_assert_eq!(pairwise_sum(&v), naive);
    }

    #[test]
    fn long_sums_stay_close_to_the_exact_sum(v in prop::collection::vec(-1e3..1e3f64, 8..300)) {
        let exact = compensated_sum(&v);
        prop_assert!((pairwise_sum(&v) - exact).abs() <= 1e-9 * v.len() as f64 * 1e3);
        prop_assert!((mean(&v) - exact / v.len() as f64).abs() <= 1e-9 * 1e3);
    }

    #[test]
    fn mse_is_a_symmetric_nonnegative_distance(
        pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..40),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = loss_mse(&p, &t).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, loss_mse(&t, &p).unwrap());
        prop_assert_eq!(loss_mse(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn cross_entropy_of_one_hot_targets_matches_the_log_of_the_true_class(
        rows in prop::collection::vec((0.0..1.0f64, any::<bool>()), 1..30),
    ) {
        let preds: Vec<Vec<f64>> = rows.iter().map(|(p, _)| vec![*p, 1.0 - p]).collect();
        let targets: Vec<Vec<f64>> =
            rows.iter().map(|(_, c)| if *c { vec![0.0, 1.0] } else { vec![1.0, 0.0] }).collect();
        let want = -rows
            .iter()
            .map(|(p, c)| (if *c { 1.0 - p } else { *p } + 1e-8).ln())
            .sum::<f64>()
            / (2 * rows.len()) as f64;
        let got = loss_cross_entropy(&preds, &targets).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn accuracy_and_zero_one_loss_are_complements(
        rows in prop::collection::vec((prop::option::of(0usize..2), 0usize..2), 1..40),
    ) {
        let (p, t): (Vec<Option<usize>>, Vec<usize>) = rows.into_iter().unzip();
        let acc = accuracy(&p, &t).unwrap();
        let zo = loss_zero_one(&p, &t).unwrap();
        prop_assert!((acc + zo - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regression_output_parses_to_the_rounded_value(x in -1e4..1e4f64, bracket in any::<bool>()) {
        let shown = format!("{x:.2}");
        let text = if bracket { format!("Explanations: ok\n\nOutput: [{shown}]") } else { format!("Output: {shown}") };
        let p = parse_learner_output(&text, &BuiltinTask::Linear.spec());
        prop_assert!(p.parse_ok);
        prop_assert_eq!(p.value, Target::Real(round_to(shown.parse().unwrap(), 2)));
    }

    #[test]
    fn probability_output_parses_in_either_separator_style(a in 0u32..=100, comma in any::<bool>()) {
        let (p, q) = (a as f64 / 100.0, (100 - a) as f64 / 100.0);
        let sep = if comma { ", " } else { " " };
        let text = format!("Output: [{p:.2}{sep}{q:.2}]");
        let parsed = parse_learner_output(&text, &BuiltinTask::TwoBlobs.spec());
        prop_assert!(parsed.parse_ok);
        prop_assert_eq!(parsed.value, Target::Probs(vec![round_to(p, 2), round_to(q, 2)]));
    }

    #[test]
    fn number_lists_recover_every_value(v in prop::collection::vec(-1e3..1e3f64, 0..20)) {
        let text = v.iter().map(|x| py_repr(*x)).collect::<Vec<_>>().join(" ");
        prop_assert_eq!(parse_number_list(&text), v);
    }

    #[test]
    fn optimizer_output_yields_the_text_under_the_header(
        reasoning in "[a-zA-Z0-9 .,]{1,60}",
        theta in "[a-zA-Z0-9 .,=+*^()-]{1,60}",
        model in any::<bool>(),
    ) {
        prop_assume!(!theta.trim().is_empty() && !reasoning.trim().is_empty());
        let header = if model { "New Model Descriptions:" } else { "New Pattern Descriptions:" };
        let text = format!("Reasoning:\n\n{reasoning}\n\n{header}\n\n{theta}");
        let u = parse_optimizer_output(&text, &BuiltinTask::Linear.spec()).unwrap();
        prop_assert_eq!(u.new_theta, theta.trim());
    }

    #[test]
    fn generation_is_a_function_of_the_seed(seed in 0u64..1000, half in 1usize..25) {
        let n = 2 * half;
        for task in [BuiltinTask::Linear, BuiltinTask::TwoBlobs, BuiltinTask::TwoCircles] {
            let a = datasets::generate(task, n, seed, 1.0, Split::Train).unwrap();
            prop_assert_eq!(&a, &datasets::generate(task, n, seed, 1.0, Split::Train).unwrap());
            prop_assert_eq!(a.points.len(), n);
            prop_assert!(a.points != datasets::generate(task, n, seed, 1.0, Split::Test).unwrap().points);
        }
    }

    #[test]
    fn csv_round_trips_generated_data(seed in 0u64..200, half in 1usize..20) {
        let n = 2 * half;
        let dir = tempfile::tempdir().unwrap();
        for task in [BuiltinTask::Polynomial, BuiltinTask::TwoBlobs, BuiltinTask::TwoCircles] {
            let ds = datasets::generate(task, n, seed, 1.0, Split::Train).unwrap();
            let path = dir.path().join(format!("{task}.csv"));
            datasets::write_csv(&ds, &path).unwrap();
            let back = datasets::read_csv(&path, &task.spec()).unwrap();
            prop_assert_eq!(back.points, ds.points);
        }
    }
}
