use super::*;
use crate::dist::RngStream;
use approx::assert_relative_eq;
use proptest::prelude::*;

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                total += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    Ordering::Greater => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Less => 0.0,
                };
            }
        }
    }
    total / pairs
}

fn report(auc_y: f64, m: f64) -> FairnessReport {
    FairnessReport {
        split: SplitTag::Validation,
        threshold: 0.5,
        auc_y: Some(auc_y),
        auc_s: None,
        asd: Some(m),
        aeod: Some(m),
        aod: Some(m),
    }
}

fn point(auc_y: f64, m: f64, seed: u64) -> ParetoPoint {
    ParetoPoint {
        family: Family::FairScalar,
        alpha: 1.0,
        seed,
        run: format!("r{seed}"),
        validation: report(auc_y, m),
        test: FairnessReport {
            split: SplitTag::Test,
            ..report(0.0, 1.0)
        },
    }
}

fn brute_front(points: &[ParetoPoint], m: Metric) -> Vec<ParetoPoint> {
    let key = |p: &ParetoPoint| (p.validation.auc_y.unwrap(), p.validation.metric(m).unwrap());
    let mut out: Vec<ParetoPoint> = Vec::new();
    for p in points {
        let (ap, mp) = key(p);
        let dominated = points.iter().any(|q| {
            let (aq, mq) = key(q);
            aq >= ap && mq <= mp && (aq > ap || mq < mp)
        });
        if dominated {
            continue;
        }
        match out.iter_mut().find(|q| key(q) == (ap, mp)) {
            Some(q) if q.seed > p.seed => *q = p.clone(),
            Some(_) => {}
            None => out.push(p.clone()),
        }
    }
    out.sort_by(|a, b| key(b).0.total_cmp(&key(a).0));
    out
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1]).unwrap(), 0.75);
    assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn fairness_examples() {
    let m = fairness_metrics(&[1, 1, 0, 0], &[1, 0, 1, 0], &[0, 0, 1, 1]).unwrap();
    assert_eq!(m.asd, 1.0);
    let y = [1, 1, 1, 1, 0, 0, 0, 0];
    let s = [0, 0, 1, 1, 0, 0, 1, 1];
    let pred = [1, 0, 1, 1, 0, 0, 1, 0];
    let m = fairness_metrics(&pred, &y, &s).unwrap();
    assert_eq!((m.asd, m.aeod, m.aod), (0.5, 0.5, 0.5));
    let m = fairness_metrics(&y, &y, &s).unwrap();
    assert_eq!((m.aeod, m.aod), (0.0, 0.0));
}

#[test]
fn undefined_rates_name_the_rate() {
    // no negatives in group 1
    let err = aod(&[1, 0, 1, 1], &[1, 0, 1, 1], &[0, 0, 1, 1]).unwrap_err();
    assert!(err.to_string().contains("FPR"), "{err}");
    let err = asd(&[1, 0], &[1, 0], &[0, 0]).unwrap_err();
    assert!(matches!(err, Error::UndefinedMetric(_)));
    let r = FairnessReport::from_scores(&[0.7, 0.2, 0.9, 0.8], None, &[1, 0, 1, 1], &[0, 0, 1, 1], SplitTag::Test, 0.5)
        .unwrap();
    assert!(r.aod.is_none() && r.asd.is_some() && r.auc_s.is_none());
    let json = report_json(&r);
    assert!(!json.contains("aod") && !json.contains("null"));
}

#[test]
fn constant_predictor_is_uninformative_and_parity_fair() {
    let mut rng = RngStream::new(3);
    let y: Vec<u8> = (0..200).map(|_| u8::from(rng.uniform() < 0.4)).collect();
    let s: Vec<u8> = (0..200).map(|_| u8::from(rng.uniform() < 0.6)).collect();
    let r = FairnessReport::from_scores(&[0.5; 200], None, &y, &s, SplitTag::Validation, 0.5).unwrap();
    assert_eq!(r.auc_y, Some(0.5));
    assert_eq!(r.asd, Some(0.0));
}

#[test]
fn oracle_predictor_has_base_rate_parity_gap() {
    let mut rng = RngStream::new(4);
    let n = 4000;
    let s: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
    let y: Vec<u8> = (0..n).map(|i| u8::from(rng.uniform() < if s[i] == 1 { 0.7 } else { 0.4 })).collect();
    let scores: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let r = FairnessReport::from_scores(&scores, None, &y, &s, SplitTag::Test, 0.5).unwrap();
    let g0 = group_rates(&y, &y, &s, 0).positive_rate.unwrap();
    let g1 = group_rates(&y, &y, &s, 1).positive_rate.unwrap();
    assert_eq!(r.auc_y, Some(1.0));
    assert_relative_eq!(r.asd.unwrap(), (g0 - g1).abs(), epsilon = 1e-15);
}

#[test]
fn independent_predictions_are_parity_fair() {
    let mut rng = RngStream::new(5);
    let n = 10_000;
    let s: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
    let y: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
    let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.5)).collect();
    // sd of the gap is about 0.01
    assert!(asd(&pred, &y, &s).unwrap() < 0.045);
}

#[test]
fn pareto_examples() {
    let pts = vec![point(0.9, 0.2, 0), point(0.8, 0.1, 1), point(0.7, 0.3, 2)];
    let front = pareto_front(&pts, Metric::Asd);
    assert_eq!(front.iter().map(|p| p.seed).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(pareto_front(&pts[2..], Metric::Asd), pts[2..].to_vec());
    let dup = vec![point(0.8, 0.1, 7), point(0.8, 0.1, 3)];
    let front = pareto_front(&dup, Metric::Aod);
    assert_eq!(front.len(), 1);
    assert_eq!(front[0].seed, 3);
}

#[test]
fn selection_never_reads_test_reports() {
    let mut rng = RngStream::new(6);
    let pts: Vec<ParetoPoint> = (0..50).map(|i| point(rng.uniform(), rng.uniform(), i)).collect();
    let mut poisoned = pts.clone();
    for p in &mut poisoned {
        p.test.auc_y = Some(f64::NAN);
        p.test.asd = None;
    }
    let a: Vec<u64> = pareto_front(&pts, Metric::Asd).iter().map(|p| p.seed).collect();
    let b: Vec<u64> = pareto_front(&poisoned, Metric::Asd).iter().map(|p| p.seed).collect();
    assert_eq!(a, b);
}

#[test]
fn front_csv_lists_test_numbers_first() {
    let csv = front_csv(&[point(0.9, 0.2, 0)]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), FRONT_CSV_HEADER);
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "FAIR-scalar");
    assert_eq!(row[4], "0.000000");
    assert_eq!(row[9], "0.900000");
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count(v in proptest::collection::vec((0u8..20, 0u8..2), 2..60)) {
        let scores: Vec<f64> = v.iter().map(|(a, _)| f64::from(*a) / 7.0).collect();
        let labels: Vec<u8> = v.iter().map(|(_, l)| *l).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((a - brute_auc(&scores, &labels)).abs() < 1e-12);
        // strictly monotone transform
        let t: Vec<f64> = scores.iter().map(|x| (3.0 * x).exp() - 2.0).collect();
        prop_assert!((auc(&t, &labels).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_group_relabeling(v in proptest::collection::vec((0u8..2, 0u8..2, 0u8..2), 8..80)) {
        let pred: Vec<u8> = v.iter().map(|t| t.0).collect();
        let y: Vec<u8> = v.iter().map(|t| t.1).collect();
        let s: Vec<u8> = v.iter().map(|t| t.2).collect();
        let flipped: Vec<u8> = s.iter().map(|&g| 1 - g).collect();
        for f in [asd, aeod, aod] {
            match (f(&pred, &y, &s), f(&pred, &y, &flipped)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "definedness changed"),
            }
        }
        if let Ok(m) = fairness_metrics(&pred, &y, &s) {
            let g0 = group_rates(&pred, &y, &s, 0);
            let g1 = group_rates(&pred, &y, &s, 1);
            let tpr = (g0.tpr.unwrap() - g1.tpr.unwrap()).abs();
            let fpr = (g0.fpr.unwrap() - g1.fpr.unwrap()).abs();
            prop_assert!(m.aod <= tpr.max(fpr) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&m.asd));
        }
    }

    #[test]
    fn front_matches_brute_force(v in proptest::collection::vec((0u8..30, 0u8..30), 1..120)) {
        let pts: Vec<ParetoPoint> = v.iter().enumerate()
            .map(|(i, (a, m))| point(f64::from(*a) / 30.0, f64::from(*m) / 30.0, (i as u64 * 7919) % 1000))
            .collect();
        let front = pareto_front(&pts, Metric::Aeod);
        prop_assert_eq!(&front, &brute_front(&pts, Metric::Aeod));
        prop_assert_eq!(pareto_front(&front, Metric::Aeod), front);
    }
}
