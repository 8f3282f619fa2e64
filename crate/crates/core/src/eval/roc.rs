use crate::error::{Error, Result};

/// One operating point: everything with distance `<= threshold` is accepted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Points sorted by threshold, from `(0, 0)` at `-inf` to `(1, 1)` at the largest distance.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// TPR = fraction of target distances `<= t`; FPR = fraction of novel distances `<= t`.
///
/// Candidate thresholds are `-inf` and every distinct distance, so the last
/// point is always `(1, 1)`. Infinite distances are allowed.
pub fn roc_curve(target: &[f64], novel: &[f64]) -> Result<RocCurve> {
    if target.is_empty() {
        return Err(Error::EmptyInput("target distances"));
    }
    if novel.is_empty() {
        return Err(Error::EmptyInput("novel distances"));
    }
    if target.iter().chain(novel).any(|d| d.is_nan()) {
        return Err(Error::InvalidConfig("NaN distance in ROC input".into()));
    }
    let mut t = target.to_vec();
    let mut n = novel.to_vec();
    t.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let (nt, nn) = (t.len() as f64, n.len() as f64);

    let mut points = vec![RocPoint { threshold: f64::NEG_INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut i, mut j) = (0, 0);
    while i < t.len() || j < n.len() {
        let next = match (t.get(i), n.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < t.len() && t[i] <= next {
            i += 1;
        }
        while j < n.len() && n[j] <= next {
            j += 1;
        }
        points.push(RocPoint { threshold: next, fpr: j as f64 / nn, tpr: i as f64 / nt });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve over FPR.
pub fn auc(curve: &RocCurve) -> f64 {
    curve.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5).sum()
}

/// ROC where a target sample only counts as a true positive when its nearest
/// prototype also has the right label; misclassified targets are never accepted.
pub fn roc_curve_correct_label(target: &[f64], correct: &[bool], novel: &[f64]) -> Result<RocCurve> {
    if target.len() != correct.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), actual: correct.len() });
    }
    let masked: Vec<f64> =
        target.iter().zip(correct).map(|(&d, &ok)| if ok { d } else { f64::INFINITY }).collect();
    roc_curve(&masked, novel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn pair_statistic(t: &[f64], n: &[f64]) -> f64 {
        let mut s = 0.0;
        for &a in t {
            for &b in n {
                if a < b {
                    s += 1.0;
                } else if a == b {
                    s += 0.5;
                }
            }
        }
        s / (t.len() * n.len()) as f64
    }

    #[test]
    fn perfect_separation() {
        let c = roc_curve(&[0.0], &[1.0]).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&c), 1.0);
    }

    #[test]
    fn shared_value_is_one_diagonal() {
        let c = roc_curve(&[2.0; 4], &[2.0; 3]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(auc(&c), 0.5);
    }

    #[test]
    fn interleaved_example() {
        let c = roc_curve(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        assert_eq!(auc(&c), 0.75);
        assert_eq!(pair_statistic(&[1.0, 3.0], &[2.0, 4.0]), 0.75);
    }

    #[test]
    fn endpoints_and_monotone() {
        let mut rng = Rng::new(2);
        let t: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let n: Vec<f64> = (0..70).map(|_| rng.normal() + 1.0).collect();
        let c = roc_curve(&t, &n).unwrap();
        let first = c.points[0];
        let last = *c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in c.points.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn identical_distributions_near_half() {
        let mut rng = Rng::new(11);
        let t: Vec<f64> = (0..4000).map(|_| rng.uniform()).collect();
        let n: Vec<f64> = (0..4000).map(|_| rng.uniform()).collect();
        let a = auc(&roc_curve(&t, &n).unwrap());
        assert!((a - 0.5).abs() < 0.02, "{a}");
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(roc_curve(&[], &[1.0]).is_err());
        assert!(roc_curve(&[1.0], &[]).is_err());
    }

    #[test]
    fn correct_label_variant() {
        // targets 1 (correct), 3 (wrong label); novels 2, 4
        let c = roc_curve_correct_label(&[1.0, 3.0], &[true, false], &[2.0, 4.0]).unwrap();
        assert_eq!(auc(&c), pair_statistic(&[1.0, f64::INFINITY], &[2.0, 4.0]));
        assert_eq!(auc(&c), 0.5);
        let all = roc_curve_correct_label(&[1.0, 3.0], &[true, true], &[2.0, 4.0]).unwrap();
        assert_eq!(auc(&all), 0.75);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_statistic(
            t in proptest::collection::vec(0u8..20, 1..40),
            n in proptest::collection::vec(0u8..20, 1..40),
        ) {
            // small integer range forces plenty of ties
            let t: Vec<f64> = t.into_iter().map(f64::from).collect();
            let n: Vec<f64> = n.into_iter().map(f64::from).collect();
            let a = auc(&roc_curve(&t, &n).unwrap());
            prop_assert!((a - pair_statistic(&t, &n)).abs() <= 1e-12);
        }

        #[test]
        fn auc_invariant_under_squaring(
            t in proptest::collection::vec(0.0f64..5.0, 1..60),
            n in proptest::collection::vec(0.0f64..5.0, 1..60),
        ) {
            let a = auc(&roc_curve(&t, &n).unwrap());
            let t2: Vec<f64> = t.iter().map(|d| d * d).collect();
            let n2: Vec<f64> = n.iter().map(|d| d * d).collect();
            let b = auc(&roc_curve(&t2, &n2).unwrap());
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
