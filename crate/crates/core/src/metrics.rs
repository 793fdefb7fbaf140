//! ROC curves, both AUC scalars, and box-plot statistics of detection maps.

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::cube::AnomalyMask;
use crate::detect::DetectionMap;
use crate::{Error, Result};

/// `(tau, Pd, Pf)` over a descending threshold sweep.
///
/// The first point is an anchor at `tau = +inf` with `Pd = Pf = 0`; the last
/// is `tau = 0`, where every pixel of a normalized map is detected.
#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub thresholds: Vec<f64>,
    pub pd: Vec<f64>,
    pub pf: Vec<f64>,
    /// Area under `(Pf, Pd)`; higher is better.
    pub auc_pd_pf: f64,
    /// Area under `(tau, Pf)` for `tau` in `[0, 1]`; lower is better.
    pub auc_pf_tau: f64,
}

fn split_classes(map: &DetectionMap, mask: &AnomalyMask) -> Result<(Vec<f64>, Vec<f64>)> {
    if map.height != mask.height() || map.width != mask.width() {
        return Err(Error::Shape(format!(
            "map is {}x{}, mask is {}x{}",
            map.height,
            map.width,
            mask.height(),
            mask.width()
        )));
    }
    let (mut anomaly, mut background) = (Vec::new(), Vec::new());
    for (&s, &label) in map.scores.iter().zip(mask.labels()) {
        if label {
            anomaly.push(s);
        } else {
            background.push(s);
        }
    }
    if anomaly.is_empty() {
        return Err(Error::EmptyClass("anomaly"));
    }
    if background.is_empty() {
        return Err(Error::EmptyClass("background"));
    }
    Ok((anomaly, background))
}

/// Sweeps every distinct score plus `{0, 1}`, counting `score >= tau` as detected.
pub fn roc(map: &DetectionMap, mask: &AnomalyMask) -> Result<RocSummary> {
    let (anomaly, background) = split_classes(map, mask)?;
    if let Some(&s) = map.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidArgument(format!(
            "ROC expects scores normalized to [0, 1], found {s}"
        )));
    }
    let mut order: Vec<(f64, bool)> = map.scores.iter().copied().zip(mask.labels().iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (n_anom, n_back) = (anomaly.len() as f64, background.len() as f64);
    let mut thresholds = alloc::vec![f64::INFINITY];
    let mut pd = alloc::vec![0.0];
    let mut pf = alloc::vec![0.0];
    let (mut hits, mut false_alarms) = (0usize, 0usize);
    let push = |tau: f64, hits: usize, fa: usize, t: &mut Vec<f64>, d: &mut Vec<f64>, f: &mut Vec<f64>| {
        t.push(tau);
        d.push(hits as f64 / n_anom);
        f.push(fa as f64 / n_back);
    };
    if order[0].0 < 1.0 {
        push(1.0, 0, 0, &mut thresholds, &mut pd, &mut pf);
    }
    let mut i = 0;
    while i < order.len() {
        let tau = order[i].0;
        while i < order.len() && order[i].0 == tau {
            if order[i].1 {
                hits += 1;
            } else {
                false_alarms += 1;
            }
            i += 1;
        }
        push(tau, hits, false_alarms, &mut thresholds, &mut pd, &mut pf);
    }
    if thresholds[thresholds.len() - 1] > 0.0 {
        push(0.0, hits, false_alarms, &mut thresholds, &mut pd, &mut pf);
    }

    let auc_pd_pf = (1..pd.len())
        .map(|k| (pf[k] - pf[k - 1]) * (pd[k] + pd[k - 1]) / 2.0)
        .sum();
    // Pf is a step function of tau: on (tau_{k+1}, tau_k] it equals Pf(tau_k).
    let auc_pf_tau = (1..thresholds.len() - 1)
        .map(|k| (thresholds[k] - thresholds[k + 1]) * pf[k])
        .sum::<f64>();
    Ok(RocSummary {
        thresholds,
        pd,
        pf,
        auc_pd_pf,
        auc_pf_tau,
    })
}

/// Trapezoid estimate of the `(tau, Pf)` area on a uniform grid of `points` thresholds.
pub fn auc_pf_tau_on_grid(map: &DetectionMap, mask: &AnomalyMask, points: usize) -> Result<f64> {
    let (_, background) = split_classes(map, mask)?;
    let n = background.len() as f64;
    let pf = |tau: f64| background.iter().filter(|&&s| s >= tau).count() as f64 / n;
    let step = 1.0 / (points - 1) as f64;
    let values: Vec<f64> = (0..points).map(|i| pf(i as f64 * step)).collect();
    Ok(values.windows(2).map(|w| step * (w[0] + w[1]) / 2.0).sum())
}

/// Five-number summary plus mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean: values.iter().sum::<f64>() / values.len() as f64,
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear interpolation between closest ranks at position `p (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityStats {
    pub anomaly: BoxStats,
    pub background: BoxStats,
    /// Anomaly first quartile minus background third quartile.
    pub gap: f64,
}

pub fn separability(map: &DetectionMap, mask: &AnomalyMask) -> Result<SeparabilityStats> {
    let (anomaly, background) = split_classes(map, mask)?;
    let anomaly = BoxStats::from_values(&anomaly);
    let background = BoxStats::from_values(&background);
    Ok(SeparabilityStats {
        anomaly,
        background,
        gap: anomaly.q1 - background.q3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn setup(scores: Vec<f64>, labels: Vec<bool>) -> (DetectionMap, AnomalyMask) {
        let n = scores.len();
        (
            DetectionMap::new(1, n, scores).unwrap(),
            AnomalyMask::new(1, n, labels).unwrap(),
        )
    }

    #[test]
    fn perfect_and_inverted() {
        let (m, k) = setup(vec![0.9, 0.1, 0.8, 0.2], vec![true, false, true, false]);
        let r = roc(&m, &k).unwrap();
        assert_eq!(r.auc_pd_pf, 1.0);
        assert_eq!((r.pd[0], r.pf[0]), (0.0, 0.0));
        assert_eq!((*r.pd.last().unwrap(), *r.pf.last().unwrap()), (1.0, 1.0));
        let (m, k) = setup(vec![0.9, 0.1, 0.8, 0.2], vec![false, true, false, true]);
        assert_eq!(roc(&m, &k).unwrap().auc_pd_pf, 0.0);
    }

    #[test]
    fn ties_count_half() {
        let (m, k) = setup(vec![0.5, 0.5], vec![true, false]);
        assert_eq!(roc(&m, &k).unwrap().auc_pd_pf, 0.5);
    }

    #[test]
    fn pf_tau_area_is_background_mean() {
        let (m, k) = setup(vec![0.3, 0.0, 1.0, 0.25, 0.6], vec![false, false, true, false, false]);
        let r = roc(&m, &k).unwrap();
        assert!((r.auc_pf_tau - (0.3 + 0.0 + 0.25 + 0.6) / 4.0).abs() < 1e-15);
        let grid = auc_pf_tau_on_grid(&m, &k, 1001).unwrap();
        assert!((grid - r.auc_pf_tau).abs() < 1e-3);
    }

    #[test]
    fn empty_classes_and_unnormalized_maps_rejected() {
        let (m, k) = setup(vec![0.2, 0.4], vec![false, false]);
        assert!(matches!(roc(&m, &k), Err(Error::EmptyClass("anomaly"))));
        let (m, k) = setup(vec![0.2, 0.4], vec![true, true]);
        assert!(matches!(separability(&m, &k), Err(Error::EmptyClass("background"))));
        let (m, k) = setup(vec![0.2, 4.0], vec![true, false]);
        assert!(roc(&m, &k).is_err());
    }

    #[test]
    fn separability_examples() {
        let (m, k) = setup(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0], vec![false, true, false, true, false, true]);
        let s = separability(&m, &k).unwrap();
        assert_eq!(s.gap, 1.0);
        let (m, k) = setup(vec![0.1, 0.1, 0.5, 0.5, 0.9, 0.9], vec![true, false, true, false, true, false]);
        assert!(separability(&m, &k).unwrap().gap <= 0.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 2.5);
        assert_eq!(quantile_sorted(&sorted, 0.25), 1.75);
        assert_eq!(quantile_sorted(&sorted, 0.75), 3.25);
        assert_eq!(quantile_sorted(&[7.0], 0.75), 7.0);
        let b = BoxStats::from_values(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((b.min, b.max, b.mean), (1.0, 4.0, 2.5));
    }
}
