use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROC summary with OoD as the positive class (higher score = more OoD).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub auroc: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub n_id: usize,
    pub n_ood: usize,
}

/// Operating point at a target true-positive rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    /// Decision threshold; `None` for counts pooled across thresholds.
    pub threshold: Option<f64>,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Empty("both ID and OoD scores are required".into()));
    }
    if id.iter().chain(ood).any(|x| x.is_nan()) {
        return Err(Error::NonFinite("score is NaN".into()));
    }
    Ok(())
}

/// Average 1-based ranks, ties sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// AUROC as the Mann–Whitney statistic: P(OoD > ID) + ½·P(tie).
pub fn roc(id_scores: &[f64], ood_scores: &[f64]) -> Result<RocReport> {
    check_scores(id_scores, ood_scores)?;
    let (n, m) = (id_scores.len(), ood_scores.len());
    let all: Vec<f64> = ood_scores.iter().chain(id_scores).copied().collect();
    let ranks = midranks(&all);
    let rank_sum: f64 = ranks[..m].iter().sum();
    let u = rank_sum - (m * (m + 1)) as f64 / 2.0;
    let auroc = u / (n as f64 * m as f64);

    let mut sorted: Vec<(f64, bool)> = ood_scores
        .iter()
        .map(|&s| (s, true))
        .chain(id_scores.iter().map(|&s| (s, false)))
        .collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n as f64, tp as f64 / m as f64));
    }
    Ok(RocReport {
        auroc,
        roc_points: points,
        n_id: n,
        n_ood: m,
    })
}

/// Threshold is the largest value with at least `target_tpr` of OoD scores
/// strictly above it; samples above the threshold are flagged OoD.
pub fn point_metrics(id_scores: &[f64], ood_scores: &[f64], target_tpr: f64) -> Result<PointMetrics> {
    check_scores(id_scores, ood_scores)?;
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::invalid(format!("target TPR must be in (0, 1], got {target_tpr}")));
    }
    let m = ood_scores.len();
    let k = ((target_tpr * m as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut desc = ood_scores.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let threshold = desc[k.min(m) - 1].next_down();
    Ok(metrics_at(id_scores, ood_scores, threshold))
}

/// Confusion counts and derived rates at a fixed threshold.
pub fn metrics_at(id_scores: &[f64], ood_scores: &[f64], threshold: f64) -> PointMetrics {
    let tp = ood_scores.iter().filter(|&&s| s > threshold).count();
    let fp = id_scores.iter().filter(|&&s| s > threshold).count();
    from_counts(Some(threshold), tp, fp, id_scores.len() - fp, ood_scores.len() - tp)
}

fn from_counts(threshold: Option<f64>, tp: usize, fp: usize, tn: usize, fn_: usize) -> PointMetrics {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let tpr = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + tpr > 0.0 {
        2.0 * precision * tpr / (precision + tpr)
    } else {
        0.0
    };
    PointMetrics {
        threshold,
        tpr,
        fpr: ratio(fp, fp + tn),
        precision,
        f1,
        tp,
        fp,
        tn,
        fn_,
    }
}

/// Pool confusion counts over classes, weighting every decision equally.
pub fn micro_average(per_class: &[PointMetrics]) -> Result<PointMetrics> {
    if per_class.is_empty() {
        return Err(Error::Empty("no per-class metrics to pool".into()));
    }
    let sum = |f: fn(&PointMetrics) -> usize| per_class.iter().map(f).sum::<usize>();
    Ok(from_counts(
        None,
        sum(|p| p.tp),
        sum(|p| p.fp),
        sum(|p| p.tn),
        sum(|p| p.fn_),
    ))
}

/// Spearman rank correlation (Pearson correlation of midranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("rank correlation needs two equally long series"));
    }
    let (ra, rb) = (midranks(a), midranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean).powi(2);
        sbb += (y - mean).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(if saa == sbb { 1.0 } else { 0.0 });
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(roc(&[1.0, 2.0], &[3.0, 4.0]).unwrap().auroc, 1.0);
        assert_eq!(roc(&[5.0; 4], &[5.0; 3]).unwrap().auroc, 0.5);
        assert_eq!(roc(&[1.0, 3.0], &[2.0, 4.0]).unwrap().auroc, 0.75);
        assert!(roc(&[], &[1.0]).is_err());
    }

    #[test]
    fn roc_curve_endpoints() {
        let r = roc(&[0.1, 0.4, 0.4], &[0.4, 0.9]).unwrap();
        assert_eq!(r.roc_points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.roc_points.last(), Some(&(1.0, 1.0)));
        for w in r.roc_points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn point_metrics_example() {
        let ood: Vec<f64> = (1..=20).map(f64::from).collect();
        let p = point_metrics(&[0.1; 30], &ood, 0.95).unwrap();
        assert!(p.tpr >= 0.95);
        assert_eq!(p.precision, 1.0);
        assert!((p.f1 - 2.0 * 0.95 / 1.95).abs() < 1e-12);
        let full = point_metrics(&[0.1; 30], &ood, 1.0).unwrap();
        assert!(full.threshold.unwrap() < 1.0 && full.tpr == 1.0);
    }

    #[test]
    fn micro_average_pools_counts() {
        let a = metrics_at(&[0.0, 2.0], &[3.0, 0.5], 1.0);
        let b = metrics_at(&[0.0], &[3.0], 1.0);
        let m = micro_average(&[a, b]).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (2, 1, 2, 1));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_of_monotone_series_is_one() {
        let a = [1.0, 5.0, 2.0, 8.0];
        let b: Vec<f64> = a.iter().map(|x: &f64| x.exp()).collect();
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((spearman(&a, &c).unwrap() + 1.0).abs() < 1e-15);
    }
}
