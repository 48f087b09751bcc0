use econ_agent::plan::parse_plan_reply;
use econ_agent::{build_plan, execution_order, format_sig10, parse_request, result_json_text, Action, TemplateStep};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACTIONS: [Action; 5] = [
    Action::DataLoading,
    Action::DataPreprocessing,
    Action::ExploratoryAnalysis,
    Action::Estimation,
    Action::Diagnostics,
];

fn random_steps(seed: u64) -> Vec<TemplateStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..9);
    let estimation_at = rng.random_range(0..n);
    (0..n)
        .map(|i| {
            let deps: Vec<usize> = (1..=i).filter(|_| rng.random_bool(0.4)).collect();
            TemplateStep {
                description: format!("step {i}"),
                action: if i == estimation_at { Action::Estimation } else { ACTIONS[rng.random_range(0..5)] },
                econometric_tag: None,
                depends_on: Some(deps),
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn random_dags_validate_and_order_topologically(seed in any::<u64>()) {
        let steps = random_steps(seed);
        let n = steps.len();
        let plan = build_plan(steps, "regression", "task").unwrap();
        prop_assert_eq!(plan.subtasks.len(), n + 1);
        prop_assert_eq!(plan.subtasks.last().unwrap().action, Action::Reporting);
        let order = execution_order(&plan);
        prop_assert_eq!(order.len(), plan.subtasks.len());
        for (pos, id) in order.iter().enumerate() {
            for d in &plan.step(*id).unwrap().depends_on {
                prop_assert!(order[..pos].contains(d));
            }
        }
        let roots = [order[0]];
        let down = plan.downstream(&roots);
        prop_assert!(down.contains(&order[0]));
        for s in &plan.subtasks {
            if s.depends_on.iter().any(|d| down.contains(d)) {
                prop_assert!(down.contains(&s.id));
            }
        }
    }

    #[test]
    fn forward_dependencies_are_rejected(seed in any::<u64>()) {
        let mut steps = random_steps(seed);
        let n = steps.len();
        steps[0].depends_on = Some(vec![n]);
        prop_assert!(build_plan(steps, "regression", "task").is_err());
    }

    #[test]
    fn sig10_round_trips(x in prop_oneof![-1e6f64..1e6, -1e-3f64..1e-3, 0.0f64..1.0]) {
        let text = format_sig10(x);
        let back: f64 = text.parse().unwrap();
        let expected: f64 = format!("{x:.9e}").parse().unwrap();
        prop_assert_eq!(back, expected);
        let digits = text.trim_start_matches('-').split('e').next().unwrap().replace('.', "");
        prop_assert!(digits.trim_start_matches('0').len() <= 10, "{}", text);
    }

    #[test]
    fn result_text_parses_to_the_three_keys(c in -1e4f64..1e4, se in 0.0f64..1e3, p in 0.0f64..1.0) {
        let v: serde_json::Value = serde_json::from_str(&result_json_text(c, se, p)).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        prop_assert_eq!(keys, ["coefficient", "standard_error", "p-value"]);
        prop_assert!((v["coefficient"].as_f64().unwrap() - c).abs() <= 1e-9 * c.abs().max(1e-300));
    }

    #[test]
    fn request_parsing_never_panics(text in "\\PC{0,200}") {
        let _ = parse_request(&text);
        let _ = parse_plan_reply(&text);
    }
}

#[test]
fn hundred_random_triples_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (c, se, p): (f64, f64, f64) =
            (rng.random_range(-500.0..500.0), rng.random_range(0.0..50.0), rng.random_range(0.0..1.0));
        let v: serde_json::Value = serde_json::from_str(&result_json_text(c, se, p)).unwrap();
        for (key, x) in [("coefficient", c), ("standard_error", se), ("p-value", p)] {
            let back = v[key].as_f64().unwrap();
            assert!((back - x).abs() <= 5e-10 * x.abs(), "{key}: {back} vs {x}");
        }
    }
}
