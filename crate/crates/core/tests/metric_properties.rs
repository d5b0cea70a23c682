use indexmap::IndexMap;
use proptest::prelude::*;
use taskforge::eval::{percentile, score, score_with, PredictionTable};
use taskforge::{Direction, Execution, MetricName};

fn table(ids: &[String], cols: &[Vec<f64>]) -> PredictionTable {
    let columns: IndexMap<String, Vec<f64>> = cols
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("c{i}"), c.clone()))
        .collect();
    PredictionTable::new(ids.to_vec(), columns).unwrap()
}

/// Truth and prediction columns suited to `metric`, `n` rows.
fn case(metric: MetricName) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let width = if metric.is_multi_column() { 3 } else { 1 };
    (2usize..=20).prop_flat_map(move |n| {
        let truth_value: BoxedStrategy<f64> = match metric {
            MetricName::RocAuc | MetricName::F1 => prop_oneof![Just(0.0), Just(1.0)].boxed(),
            MetricName::Accuracy | MetricName::CategorizationAccuracy => {
                (0u8..4).prop_map(f64::from).boxed()
            }
            _ => (-10.0f64..10.0).boxed(),
        };
        let pred_value: BoxedStrategy<f64> = match metric {
            MetricName::RocAuc | MetricName::F1 => (0.0f64..1.0).boxed(),
            MetricName::Accuracy | MetricName::CategorizationAccuracy => (-0.5f64..4.5).boxed(),
            _ => (-10.0f64..10.0).boxed(),
        };
        (
            prop::collection::vec(prop::collection::vec(truth_value, n), width),
            prop::collection::vec(prop::collection::vec(pred_value, n), width),
        )
    })
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("row-{i}")).collect()
}

fn any_metric() -> impl Strategy<Value = MetricName> {
    prop::sample::select(MetricName::ALL.to_vec())
}

fn two_classes(t: &[f64]) -> bool {
    t.contains(&0.0) && t.contains(&1.0)
}

proptest! {
    #[test]
    fn scores_respect_bounds_and_modes((metric, (t, p)) in any_metric().prop_flat_map(|m| (Just(m), case(m)))) {
        prop_assume!(metric != MetricName::RocAuc || two_classes(&t[0]));
        let n = t[0].len();
        let (truth, pred) = (table(&ids(n), &t), table(&ids(n), &p));
        let seq = score_with(metric.into(), &truth, &pred, Execution::Sequential).unwrap();
        let par = score_with(metric.into(), &truth, &pred, Execution::Parallel).unwrap();
        prop_assert_eq!(seq.to_bits(), par.to_bits());
        match metric {
            MetricName::Rmse | MetricName::Mae | MetricName::Mcrmse => prop_assert!(seq >= 0.0),
            MetricName::MeanCosineSimilarity => prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&seq)),
            _ => prop_assert!((0.0..=1.0).contains(&seq)),
        }
    }

    #[test]
    fn shuffling_rows_changes_nothing(
        (metric, (t, p)) in any_metric().prop_flat_map(|m| (Just(m), case(m))),
        seed in any::<u64>(),
    ) {
        prop_assume!(metric != MetricName::RocAuc || two_classes(&t[0]));
        let n = t[0].len();
        let base = score(metric.into(), &table(&ids(n), &t), &table(&ids(n), &p)).unwrap();
        // Deterministic permutation from the seed.
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let shuffled_ids: Vec<String> = order.iter().map(|&i| ids(n)[i].clone()).collect();
        let shuffled: Vec<Vec<f64>> = p.iter().map(|c| order.iter().map(|&i| c[i]).collect()).collect();
        let moved = score(metric.into(), &table(&ids(n), &t), &table(&shuffled_ids, &shuffled)).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12, "{} vs {}", base, moved);
    }

    #[test]
    fn auc_of_negated_scores_is_complement((t, p) in case(MetricName::RocAuc)) {
        prop_assume!(two_classes(&t[0]));
        let mut sorted = p[0].clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
        let n = t[0].len();
        let neg: Vec<Vec<f64>> = vec![p[0].iter().map(|v| -v).collect()];
        let a = score(MetricName::RocAuc.into(), &table(&ids(n), &t), &table(&ids(n), &p)).unwrap();
        let b = score(MetricName::RocAuc.into(), &table(&ids(n), &t), &table(&ids(n), &neg)).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_tables_are_perfect((t, _) in case(MetricName::Rmse)) {
        let n = t[0].len();
        let tt = table(&ids(n), &t);
        prop_assert_eq!(score(MetricName::Rmse.into(), &tt, &tt).unwrap(), 0.0);
        prop_assert_eq!(score(MetricName::Mae.into(), &tt, &tt).unwrap(), 0.0);
    }

    #[test]
    fn percentile_is_monotone(
        board in prop::collection::vec(-100.0f64..100.0, 1..50),
        a in -120.0f64..120.0,
        b in -120.0f64..120.0,
        higher in any::<bool>(),
    ) {
        let dir = if higher { Direction::HigherBetter } else { Direction::LowerBetter };
        let (better, worse) = if dir.is_strictly_better(a, b) { (a, b) } else { (b, a) };
        let pb = percentile(better, &board, dir).unwrap();
        let pw = percentile(worse, &board, dir).unwrap();
        prop_assert!(pb <= pw);
        prop_assert!(pw <= 100);
    }
}

#[test]
fn column_count_must_fit_metric() {
    let ids = ids(2);
    let two = table(&ids, &[vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert!(score(MetricName::Rmse.into(), &two, &two).is_err());
    assert!(score(MetricName::Mcrmse.into(), &two, &two).is_ok());
    let one = table(&ids, &[vec![1.0, 2.0]]);
    assert!(score(MetricName::Mcrmse.into(), &two, &one).is_err());
}
