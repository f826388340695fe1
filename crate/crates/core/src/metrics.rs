//! AUC, custom accuracy, rejection sweeps and Pareto fronts.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Superclass;

/// Area under the ROC curve by the Mann-Whitney statistic, ties counted ½.
///
/// Computed on doubled integer counts so the result is bit-identical to the
/// brute-force pair average.
pub fn auc(scores: &[f64], anomalous: &[bool]) -> Result<f64> {
    if scores.len() != anomalous.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("AUC needs finite scores".into()));
    }
    let n_pos = anomalous.iter().filter(|&&a| a).count() as u64;
    let n_neg = scores.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both anomalous and normal samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of the anomalous samples, ranks starting at 1
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let pos = order[i..=j].iter().filter(|&&k| anomalous[k]).count() as u64;
        rank_sum2 += pos * (i as u64 + 1 + j as u64 + 1);
        i = j + 1;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// How a multilabel prediction is judged against the ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correctness {
    /// Predicted set equals the true set.
    #[default]
    ExactMatch,
    /// Predicted and true sets share at least one class.
    AnyOverlap,
}

impl Correctness {
    pub fn judge(self, predicted: &[Superclass], truth: &[Superclass]) -> bool {
        match self {
            Correctness::ExactMatch => {
                predicted.iter().all(|p| truth.contains(p)) && truth.iter().all(|t| predicted.contains(t))
            }
            Correctness::AnyOverlap => predicted.iter().any(|p| truth.contains(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub should_reject: bool,
    pub rejected: bool,
    /// Ignored for rejected windows.
    pub classified_correctly: bool,
}

impl Outcome {
    pub fn is_correct(&self) -> bool {
        if self.should_reject {
            self.rejected
        } else {
            !self.rejected && self.classified_correctly
        }
    }
}

/// Fraction of outcomes that are correct rejections or correct accepted
/// classifications. 0 for an empty list.
pub fn custom_accuracy(outcomes: &[Outcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.is_correct()).count() as f64 / outcomes.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub rejection_rate: f64,
    pub custom_accuracy: f64,
    /// Windows scoring strictly above this are rejected.
    #[serde(with = "crate::serde_float")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    /// Ordered by decreasing threshold, so rejection rate never decreases.
    pub points: Vec<RejectionPoint>,
    pub optimum: RejectionPoint,
}

/// Custom accuracy when rejecting every window scoring above `threshold`.
pub fn accuracy_at(scores: &[f64], should_reject: &[bool], correct: &[bool], threshold: f64) -> f64 {
    let outcomes: Vec<Outcome> = (0..scores.len())
        .map(|i| Outcome {
            should_reject: should_reject[i],
            rejected: scores[i] > threshold,
            classified_correctly: correct[i],
        })
        .collect();
    custom_accuracy(&outcomes)
}

/// Sweeps the filter threshold over `+inf`, every distinct score in
/// decreasing order, and `-inf`. The optimum is the most accurate point,
/// the lowest rejection rate among equals.
pub fn rejection_sweep(scores: &[f64], should_reject: &[bool], correct: &[bool]) -> Result<RejectionCurve> {
    let n = scores.len();
    if should_reject.len() != n || correct.len() != n {
        return Err(Error::InvalidInput("scores, rejection flags and verdicts must align".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN filter score".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // nothing rejected: only accepted in-distribution windows classified right count
    let mut n_correct = (0..n).filter(|&i| !should_reject[i] && correct[i]).count();
    let mut n_rejected = 0usize;
    let point = |rej: usize, ok: usize, threshold: f64| RejectionPoint {
        rejection_rate: rej as f64 / n as f64,
        custom_accuracy: ok as f64 / n as f64,
        threshold,
    };
    let mut points = Vec::with_capacity(n + 2);
    points.push(point(0, n_correct, f64::INFINITY));
    let mut i = 0;
    while i < n {
        let s = scores[order[i]];
        // threshold s keeps everything scoring s; step past the group above it
        points.push(point(n_rejected, n_correct, s));
        let mut j = i;
        while j < n && scores[order[j]] == s {
            let k = order[j];
            if should_reject[k] {
                n_correct += 1;
            } else if correct[k] {
                n_correct -= 1;
            }
            n_rejected += 1;
            j += 1;
        }
        i = j;
    }
    points.push(point(n_rejected, n_correct, f64::NEG_INFINITY));
    let mut optimum = points[0];
    for p in &points[1..] {
        if p.custom_accuracy > optimum.custom_accuracy {
            optimum = *p;
        }
    }
    Ok(RejectionCurve { points, optimum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub config_id: String,
    pub param_count: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
}

/// `a` dominates `b`: no more parameters, no lower AUC, better in one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.param_count <= b.param_count
        && a.auc_mean >= b.auc_mean
        && (a.param_count < b.param_count || a.auc_mean > b.auc_mean)
}

/// Non-dominated points sorted by parameter count (then config id).
/// Points with a non-finite AUC never enter the front.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut pts: Vec<&ParetoPoint> = points.iter().filter(|p| p.auc_mean.is_finite()).collect();
    pts.sort_by(|a, b| {
        a.param_count
            .cmp(&b.param_count)
            .then(b.auc_mean.total_cmp(&a.auc_mean))
            .then(a.config_id.cmp(&b.config_id))
    });
    let mut front = Vec::new();
    let mut best_below = f64::NEG_INFINITY;
    let mut i = 0;
    while i < pts.len() {
        let params = pts[i].param_count;
        let top = pts[i].auc_mean;
        let mut j = i;
        while j < pts.len() && pts[j].param_count == params {
            if pts[j].auc_mean == top && top > best_below {
                front.push(pts[j].clone());
            }
            j += 1;
        }
        best_below = best_below.max(top);
        i = j;
    }
    front
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use rand::Rng;

    fn brute_auc(scores: &[f64], anomalous: &[bool]) -> f64 {
        let mut twice = 0u64;
        let mut pairs = 0u64;
        for (i, &a) in anomalous.iter().enumerate() {
            for (j, &b) in anomalous.iter().enumerate() {
                if a && !b {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        twice += 2;
                    } else if scores[i] == scores[j] {
                        twice += 1;
                    }
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    fn brute_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
        let mut f: Vec<ParetoPoint> = points
            .iter()
            .filter(|p| p.auc_mean.is_finite() && !points.iter().any(|q| dominates(q, p)))
            .cloned()
            .collect();
        f.sort_by(|a, b| {
            a.param_count
                .cmp(&b.param_count)
                .then(b.auc_mean.total_cmp(&a.auc_mean))
                .then(a.config_id.cmp(&b.config_id))
        });
        f
    }

    fn pt(id: usize, params: usize, auc: f64) -> ParetoPoint {
        ParetoPoint {
            config_id: format!("c{id}"),
            param_count: params,
            auc_mean: auc,
            auc_std: 0.0,
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[2.0, 3.0, 0.0, 1.0], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0, 3.0, 2.0, 2.0], &[true, true, false, false]).unwrap(), 0.5);
        assert!(matches!(auc(&[1.0, 2.0], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(auc(&[f64::NAN, 2.0], &[true, false]).is_err());
    }

    #[test]
    fn auc_matches_pair_counting_exactly() {
        let mut r = crate::rng::seeded(11);
        for inst in 0..200 {
            let n = r.random_range(2..80);
            // coarse grid forces many ties
            let levels = if inst % 2 == 0 { 5 } else { 1000 };
            let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / 7.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels), "instance {inst}");
        }
    }

    #[test]
    fn auc_is_rank_invariant() {
        let s = [0.3, -1.0, 2.5, 0.3, 7.0, 1.1];
        let l = [true, false, true, false, true, false];
        let t: Vec<f64> = s.iter().map(|v| libm::exp(*v) * 3.0 + 1.0).collect();
        assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
    }

    fn o(should_reject: bool, rejected: bool, classified_correctly: bool) -> Outcome {
        Outcome {
            should_reject,
            rejected,
            classified_correctly,
        }
    }

    #[test]
    fn custom_accuracy_rules() {
        assert_eq!(custom_accuracy(&[o(true, true, false), o(false, false, true)]), 1.0);
        assert_eq!(custom_accuracy(&[o(true, false, true)]), 0.0);
        let all: Vec<Outcome> = (0..8).map(|k| o(k & 4 != 0, k & 2 != 0, k & 1 != 0)).collect();
        // correct: (T,T,F), (T,T,T), (F,F,T)
        assert_eq!(custom_accuracy(&all), 3.0 / 8.0);
    }

    #[test]
    fn custom_accuracy_matches_truth_table() {
        let mut r = crate::rng::seeded(5);
        for _ in 0..100 {
            let n = r.random_range(1..40);
            let v: Vec<Outcome> = (0..n).map(|_| o(r.random(), r.random(), r.random())).collect();
            let truth = |sr: bool, rj: bool, cc: bool| match (sr, rj, cc) {
                (true, true, _) => true,
                (false, false, true) => true,
                _ => false,
            };
            let expect = v.iter().filter(|x| truth(x.should_reject, x.rejected, x.classified_correctly)).count();
            assert_eq!(custom_accuracy(&v), expect as f64 / n as f64);
        }
    }

    #[test]
    fn sweep_endpoints_and_monotonicity() {
        let mut r = crate::rng::seeded(3);
        for _ in 0..50 {
            let n = r.random_range(1..60);
            let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..10) as f64).collect();
            let sr: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
            let cc: Vec<bool> = (0..n).map(|_| r.random_bool(0.6)).collect();
            let c = rejection_sweep(&scores, &sr, &cc).unwrap();
            let first = c.points[0];
            let last = *c.points.last().unwrap();
            let baseline = (0..n).filter(|&i| !sr[i] && cc[i]).count() as f64 / n as f64;
            let reject_frac = sr.iter().filter(|&&b| b).count() as f64 / n as f64;
            assert_eq!((first.rejection_rate, first.custom_accuracy), (0.0, baseline));
            assert_eq!((last.rejection_rate, last.custom_accuracy), (1.0, reject_frac));
            assert!(c.points.windows(2).all(|w| w[0].rejection_rate <= w[1].rejection_rate));
            assert!(c.points.windows(2).all(|w| w[0].threshold >= w[1].threshold));
            for p in &c.points {
                assert_eq!(p.custom_accuracy, accuracy_at(&scores, &sr, &cc, p.threshold));
            }
            let mut distinct = scores.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            assert_eq!(c.points.len(), distinct.len() + 2);
        }
    }

    #[test]
    fn perfect_filter_optimum() {
        // should-reject windows score above every in-distribution window
        let scores = [5.0, 6.0, 7.0, 1.0, 2.0, 3.0, 0.5];
        let sr = [true, true, true, false, false, false, false];
        let cc = [true, false, true, true, false, true, true];
        let c = rejection_sweep(&scores, &sr, &cc).unwrap();
        // one accepted in-distribution window is misclassified
        assert_eq!(c.optimum.custom_accuracy, 6.0 / 7.0);
        assert_eq!(c.optimum.rejection_rate, 3.0 / 7.0);
    }

    #[test]
    fn random_filter_stays_near_better_endpoint() {
        let mut r = crate::rng::seeded(8);
        let n = 4000;
        let scores: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let sr: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
        let cc: Vec<bool> = (0..n).map(|_| r.random_bool(0.8)).collect();
        let c = rejection_sweep(&scores, &sr, &cc).unwrap();
        let ends = c.points[0].custom_accuracy.max(c.points.last().unwrap().custom_accuracy);
        assert!(c.optimum.custom_accuracy >= ends);
        assert!(c.optimum.custom_accuracy - ends < 0.03, "{} vs {ends}", c.optimum.custom_accuracy);
    }

    #[test]
    fn pareto_examples() {
        let f = pareto_front(&[pt(0, 100_000, 0.8), pt(1, 200_000, 0.7)]);
        assert_eq!(f, vec![pt(0, 100_000, 0.8)]);
        let f = pareto_front(&[pt(1, 200_000, 0.8), pt(0, 100_000, 0.7)]);
        assert_eq!(f, vec![pt(0, 100_000, 0.7), pt(1, 200_000, 0.8)]);
        assert!(pareto_front(&[]).is_empty());
    }

    #[test]
    fn pareto_matches_quadratic_oracle() {
        for seed in 0..20 {
            let mut r = crate::rng::seeded(100 + seed);
            let pts: Vec<ParetoPoint> = (0..50)
                .map(|i| pt(i, r.random_range(1..40) * 1000, r.random_range(0..30) as f64 / 30.0))
                .collect();
            let f = pareto_front(&pts);
            assert_eq!(f, brute_front(&pts), "seed {seed}");
            for p in &pts {
                let on = f.contains(p);
                assert!(on || f.iter().any(|q| dominates(q, p)));
            }
            for a in &f {
                assert!(!f.iter().any(|b| dominates(b, a)));
            }
        }
    }

    #[test]
    fn correctness_modes() {
        use Superclass::*;
        assert!(Correctness::ExactMatch.judge(&[Mi, Cd], &[Cd, Mi]));
        assert!(!Correctness::ExactMatch.judge(&[Mi], &[Cd, Mi]));
        assert!(Correctness::AnyOverlap.judge(&[Mi], &[Cd, Mi]));
        assert!(!Correctness::AnyOverlap.judge(&[], &[Cd]));
        assert!(Correctness::ExactMatch.judge(&[], &[]));
    }

    #[test]
    fn infinite_thresholds_round_trip_through_serde() {
        let c = rejection_sweep(&[1.0, 2.0], &[true, false], &[true, true]).unwrap();
        let p = c.points[0];
        assert_eq!(p.threshold, f64::INFINITY);
        assert_eq!(crate::serde_float::format(p.threshold), "inf");
    }
}
