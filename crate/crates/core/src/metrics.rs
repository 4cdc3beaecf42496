//! Error regions, δ-FWER estimates and true positive rates over repeated
//! runs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::WeightMap;
use crate::pipeline::empirical_quantile;

/// Two-sided normal quantile for an 80% interval.
pub const Z_80: f64 = 1.2816;

/// Selection of one run together with the ground truth needed to score it.
/// All index sets are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub selected: Vec<usize>,
    pub support: Vec<usize>,
    pub delta_null: Vec<usize>,
    pub alpha: f64,
    pub delta: f64,
}

impl RunOutcome {
    pub fn new(mut selected: Vec<usize>, truth: &WeightMap, alpha: f64, delta: f64) -> Self {
        selected.sort_unstable();
        selected.dedup();
        Self {
            selected,
            support: truth.support(),
            delta_null: truth.delta_null_region(delta),
            alpha,
            delta,
        }
    }

    /// Whether some selected index lies outside the support.
    pub fn has_false_discovery(&self) -> bool {
        self.selected.iter().any(|j| self.support.binary_search(j).is_err())
    }
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut k) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && k < b.len() {
        match a[i].cmp(&b[k]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                k += 1;
            }
        }
    }
    out
}

/// Selected indices inside the δ-null region.
pub fn error_region(outcome: &RunOutcome) -> Vec<usize> {
    intersect_sorted(&outcome.delta_null, &outcome.selected)
}

/// A rate over `n` runs with its 80% normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

impl RateEstimate {
    pub fn from_count(hits: usize, n: usize) -> Self {
        let rate = hits as f64 / n as f64;
        let half = Z_80 * (rate * (1.0 - rate) / n as f64).sqrt();
        Self {
            rate,
            ci_lo: (rate - half).max(0.0),
            ci_hi: (rate + half).min(1.0),
            n,
        }
    }
}

fn check_shared(outcomes: &[RunOutcome]) -> Result<()> {
    let Some(first) = outcomes.first() else {
        return Err(Error::Contract("no outcomes to aggregate".into()));
    };
    if outcomes.iter().any(|o| o.alpha != first.alpha || o.delta != first.delta) {
        return Err(Error::Contract("outcomes do not share alpha and delta".into()));
    }
    Ok(())
}

/// Fraction of runs with a nonempty error region.
pub fn delta_fwer_estimate(outcomes: &[RunOutcome]) -> Result<RateEstimate> {
    check_shared(outcomes)?;
    let hits = outcomes.iter().filter(|o| !error_region(o).is_empty()).count();
    Ok(RateEstimate::from_count(hits, outcomes.len()))
}

/// Fraction of runs selecting anything outside the support.
pub fn fwer_estimate(outcomes: &[RunOutcome]) -> Result<RateEstimate> {
    check_shared(outcomes)?;
    let hits = outcomes.iter().filter(|o| o.has_false_discovery()).count();
    Ok(RateEstimate::from_count(hits, outcomes.len()))
}

/// `|selected ∩ support| / |support|`.
pub fn tpr(outcome: &RunOutcome) -> Result<f64> {
    if outcome.support.is_empty() {
        return Err(Error::UndefinedMetric("true positive rate with an empty support".into()));
    }
    Ok(intersect_sorted(&outcome.selected, &outcome.support).len() as f64 / outcome.support.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n_runs: usize,
    pub delta_fwer: RateEstimate,
    pub fwer: RateEstimate,
    pub tpr_median: f64,
    pub tpr_d10: f64,
    pub tpr_d90: f64,
}

pub fn summarize(outcomes: &[RunOutcome]) -> Result<Summary> {
    let delta_fwer = delta_fwer_estimate(outcomes)?;
    let fwer = fwer_estimate(outcomes)?;
    let tprs = outcomes.iter().map(tpr).collect::<Result<Vec<_>>>()?;
    Ok(Summary {
        n_runs: outcomes.len(),
        delta_fwer,
        fwer,
        tpr_median: empirical_quantile(&tprs, 0.5)?,
        tpr_d10: empirical_quantile(&tprs, 0.1)?,
        tpr_d90: empirical_quantile(&tprs, 0.9)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialDomain;
    use proptest::prelude::*;

    fn line_truth() -> WeightMap {
        // Support {4, 5} on a line of 12.
        let mut beta = vec![0.0; 12];
        beta[4] = 1.0;
        beta[5] = 0.5;
        WeightMap::new(beta, SpatialDomain::line(12).unwrap()).unwrap()
    }

    #[test]
    fn error_region_examples() {
        let truth = line_truth();
        let inside = RunOutcome::new(vec![4, 5], &truth, 0.1, 0.0);
        assert!(error_region(&inside).is_empty());
        let all = RunOutcome::new((0..12).collect(), &truth, 0.1, 0.0);
        assert_eq!(error_region(&all), truth.null_region());
        let near = RunOutcome::new(vec![3, 7], &truth, 0.1, 1.0);
        assert_eq!(error_region(&near), vec![7]);
    }

    #[test]
    fn fwer_examples() {
        let truth = line_truth();
        let clean: Vec<_> = (0..5).map(|_| RunOutcome::new(vec![4], &truth, 0.1, 2.0)).collect();
        assert_eq!(delta_fwer_estimate(&clean).unwrap().rate, 0.0);

        let mut mixed: Vec<_> = (0..90).map(|_| RunOutcome::new(vec![], &truth, 0.1, 0.0)).collect();
        mixed.extend((0..10).map(|_| RunOutcome::new(vec![0], &truth, 0.1, 0.0)));
        let est = delta_fwer_estimate(&mixed).unwrap();
        assert!((est.rate - 0.1).abs() < 1e-15);
        let half = 1.2816 * (0.09f64 / 100.0).sqrt();
        assert!((est.ci_lo - (0.1 - half)).abs() < 1e-12);
        assert!((est.ci_hi - (0.1 + half)).abs() < 1e-12);
        assert!((est.ci_lo - 0.061).abs() < 1e-3 && (est.ci_hi - 0.139).abs() < 1e-3);

        let bad: Vec<_> = (0..3).map(|_| RunOutcome::new(vec![11], &truth, 0.1, 0.0)).collect();
        let all = delta_fwer_estimate(&bad).unwrap();
        assert_eq!((all.rate, all.ci_lo, all.ci_hi), (1.0, 1.0, 1.0));

        assert!(delta_fwer_estimate(&[]).is_err());
        let mismatched = vec![RunOutcome::new(vec![], &truth, 0.1, 0.0), RunOutcome::new(vec![], &truth, 0.05, 0.0)];
        assert!(delta_fwer_estimate(&mismatched).is_err());
    }

    #[test]
    fn tpr_examples() {
        let truth = line_truth();
        assert_eq!(tpr(&RunOutcome::new(vec![4, 5], &truth, 0.1, 0.0)).unwrap(), 1.0);
        assert_eq!(tpr(&RunOutcome::new(vec![0], &truth, 0.1, 0.0)).unwrap(), 0.0);
        assert_eq!(tpr(&RunOutcome::new(vec![5, 9], &truth, 0.1, 0.0)).unwrap(), 0.5);
        let empty = WeightMap::new(vec![0.0; 4], SpatialDomain::line(4).unwrap()).unwrap();
        assert!(matches!(tpr(&RunOutcome::new(vec![], &empty, 0.1, 0.0)), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn summary_examples() {
        let truth = line_truth();
        let one = summarize(&[RunOutcome::new(vec![4], &truth, 0.1, 0.0)]).unwrap();
        assert_eq!((one.tpr_median, one.tpr_d10, one.tpr_d90), (0.5, 0.5, 0.5));
        let three = [vec![], vec![4], vec![4, 5]].map(|s| RunOutcome::new(s, &truth, 0.1, 0.0));
        let s = summarize(&three).unwrap();
        assert_eq!(s.tpr_median, 0.5);
        assert_eq!(s.tpr_d10, 0.0);
        assert_eq!(s.tpr_d90, 1.0);
        assert_eq!(s.n_runs, 3);
    }

    #[test]
    fn zero_tolerance_is_classical_fwer() {
        let truth = line_truth();
        let runs: Vec<_> = [vec![4], vec![3], vec![], vec![5, 11]]
            .into_iter()
            .map(|s| RunOutcome::new(s, &truth, 0.1, 0.0))
            .collect();
        assert_eq!(delta_fwer_estimate(&runs).unwrap(), fwer_estimate(&runs).unwrap());
    }

    proptest! {
        #[test]
        fn delta_fwer_is_nonincreasing_in_delta(
            selections in prop::collection::vec(prop::collection::vec(0usize..12, 0..4), 1..20),
            d1 in 0u8..6,
            extra in 0u8..6,
        ) {
            let truth = line_truth();
            let rate = |d: f64| {
                let runs: Vec<_> = selections.iter().map(|s| RunOutcome::new(s.clone(), &truth, 0.1, d)).collect();
                delta_fwer_estimate(&runs).unwrap().rate
            };
            let lo = d1 as f64;
            let hi = lo + extra as f64;
            prop_assert!(rate(hi) <= rate(lo));
            for s in &selections {
                let a = error_region(&RunOutcome::new(s.clone(), &truth, 0.1, lo));
                let b = error_region(&RunOutcome::new(s.clone(), &truth, 0.1, hi));
                prop_assert!(b.iter().all(|j| a.contains(j)));
            }
        }
    }
}
