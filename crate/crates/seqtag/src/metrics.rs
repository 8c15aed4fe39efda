//! Evaluation metrics: last-tag accuracy, confusion matrices with optional
//! tag-subset views, per-tag precision/recall, and the Mann-Whitney
//! rank-sum significance test used to compare runs across seeds.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Fraction of correct predictions; errors on empty input.
pub fn last_tag_accuracy(predictions: &[usize], golds: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != golds.len() {
        return Err(Error::data(format!(
            "accuracy: {} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    let correct = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Row = gold tag, column = predicted tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn build(predictions: &[usize], golds: &[usize], labels: &[String]) -> Result<Self> {
        if predictions.len() != golds.len() {
            return Err(Error::data("confusion matrix: length mismatch"));
        }
        let n = labels.len();
        let mut counts = vec![0usize; n * n];
        for (&p, &g) in predictions.iter().zip(golds) {
            if p >= n || g >= n {
                return Err(Error::data(format!("confusion matrix: tag id {} out of range", p.max(g))));
            }
            counts[g * n + p] += 1;
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            counts,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, gold: usize, predicted: usize) -> usize {
        self.counts[gold * self.n() + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.n()).map(|i| self.count(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Gold count per tag (row sums).
    pub fn gold_counts(&self) -> Vec<usize> {
        (0..self.n())
            .map(|g| (0..self.n()).map(|p| self.count(g, p)).sum())
            .collect()
    }

    /// Restrict both axes to the listed tags, dropping pairs where either
    /// side falls outside the subset. Unknown tags are an error.
    pub fn subset(&self, tags: &[String]) -> Result<ConfusionMatrix> {
        let idx: Vec<usize> = tags
            .iter()
            .map(|t| {
                self.labels
                    .iter()
                    .position(|l| l == t)
                    .ok_or_else(|| Error::data(format!("unknown tag in subset list: {t:?}")))
            })
            .collect::<Result<_>>()?;
        let n = idx.len();
        let mut counts = vec![0usize; n * n];
        for (gi, &g) in idx.iter().enumerate() {
            for (pi, &p) in idx.iter().enumerate() {
                counts[gi * n + pi] = self.count(g, p);
            }
        }
        Ok(ConfusionMatrix {
            labels: tags.to_vec(),
            counts,
        })
    }

    /// Comma-separated grid: header row of tag names, then one row per gold
    /// tag prefixed by its name.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, ",{}", self.labels.join(","));
        for g in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|p| self.count(g, p).to_string()).collect();
            let _ = writeln!(s, "{},{}", self.labels[g], row.join(","));
        }
        s
    }

    /// Precision and recall per tag (0 when undefined).
    pub fn precision_recall(&self) -> Vec<(f64, f64)> {
        let n = self.n();
        (0..n)
            .map(|t| {
                let tp = self.count(t, t);
                let predicted: usize = (0..n).map(|g| self.count(g, t)).sum();
                let gold: usize = (0..n).map(|p| self.count(t, p)).sum();
                let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
                let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
                (precision, recall)
            })
            .collect()
    }
}

/// A full evaluation: accuracy, per-tag precision/recall, confusion matrix.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub evaluated: usize,
}

impl EvalReport {
    pub fn build(predictions: &[usize], golds: &[usize], labels: &[String]) -> Result<Self> {
        let accuracy = last_tag_accuracy(predictions, golds)?;
        let confusion = ConfusionMatrix::build(predictions, golds, labels)?;
        Ok(EvalReport {
            accuracy,
            confusion,
            evaluated: predictions.len(),
        })
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "evaluated\t{}", self.evaluated);
        let _ = writeln!(s, "last_tag_accuracy\t{:.6}", self.accuracy);
        let _ = writeln!(s, "tag\tprecision\trecall\tgold_count");
        let golds = self.confusion.gold_counts();
        for (i, (p, r)) in self.confusion.precision_recall().iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{}",
                self.confusion.labels[i], p, r, golds[i]
            );
        }
        s
    }
}

/// Abramowitz & Stegun 7.1.26 rational approximation of erf, accurate to
/// about 1.5e-7, plenty for reporting p-values.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_sf(z: f64) -> f64 {
    0.5 * (1.0 - erf(z / std::f64::consts::SQRT_2))
}

/// Mann-Whitney rank-sum test. Returns (U for sample a, two-sided p from
/// the tie-corrected normal approximation). Fully tied samples report
/// p = 1.
pub fn rank_sum_test(sample_a: &[f64], sample_b: &[f64]) -> Result<(f64, f64)> {
    let (na, nb) = (sample_a.len(), sample_b.len());
    if na < 2 || nb < 2 {
        return Err(Error::data("rank-sum test requires at least 2 values per sample"));
    }
    // U_a counts pairs where a beats b, plus half-credit for ties.
    let mut u_a = 0.0;
    for &a in sample_a {
        for &b in sample_b {
            u_a += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }

    // Tie correction over the pooled sample.
    let mut pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let n = (na + nb) as f64;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }

    let mean = na as f64 * nb as f64 / 2.0;
    let var = (na as f64 * nb as f64 / 12.0) * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        // Every value equal: no separation whatsoever.
        return Ok((u_a, 1.0));
    }
    let z = (u_a - mean).abs() / var.sqrt();
    let p = (2.0 * normal_sf(z)).min(1.0);
    Ok((u_a, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(last_tag_accuracy(&[0, 1, 2, 2], &[0, 1, 2, 0]).unwrap(), 0.75);
        assert_eq!(last_tag_accuracy(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert!(last_tag_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn accuracy_is_order_invariant() {
        let preds = vec![0, 1, 2, 1];
        let golds = vec![0, 2, 2, 1];
        let a = last_tag_accuracy(&preds, &golds).unwrap();
        let b = last_tag_accuracy(
            &preds.iter().rev().copied().collect::<Vec<_>>(),
            &golds.iter().rev().copied().collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn perfect_predictions_make_a_diagonal_matrix() {
        let golds = vec![0, 1, 2, 1, 0];
        let m = ConfusionMatrix::build(&golds, &golds, &labels(3)).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                if g != p {
                    assert_eq!(m.count(g, p), 0);
                }
            }
        }
        assert_eq!(m.trace(), 5);
        assert_eq!(m.accuracy(), 1.0);
    }

    #[test]
    fn single_error_lands_off_diagonal() {
        // gold sd (0), predicted sv (1)
        let m = ConfusionMatrix::build(&[1], &[0], &labels(2)).unwrap();
        assert_eq!(m.count(0, 1), 1);
        assert_eq!(m.trace(), 0);
    }

    #[test]
    fn row_sums_match_gold_counts_and_accuracy_is_recomputable() {
        let preds = vec![0, 1, 1, 2, 0, 2, 2];
        let golds = vec![0, 1, 2, 2, 1, 2, 0];
        let m = ConfusionMatrix::build(&preds, &golds, &labels(3)).unwrap();
        let gold_counts = m.gold_counts();
        for t in 0..3 {
            assert_eq!(gold_counts[t], golds.iter().filter(|&&g| g == t).count());
        }
        let acc = last_tag_accuracy(&preds, &golds).unwrap();
        assert!((m.accuracy() - acc).abs() < 1e-15);
    }

    #[test]
    fn subset_view_shrinks_totals() {
        let preds = vec![0, 1, 2, 1, 0];
        let golds = vec![0, 2, 2, 1, 1];
        let m = ConfusionMatrix::build(&preds, &golds, &labels(3)).unwrap();
        let sub = m.subset(&labels(2)).unwrap();
        assert!(sub.total() <= m.total());
        assert!(m.subset(&["missing".to_string()]).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = ConfusionMatrix::build(&[0, 1], &[0, 0], &labels(2)).unwrap();
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], ",t0,t1");
        assert_eq!(lines[1], "t0,1,1");
        assert_eq!(lines[2], "t1,0,0");
    }

    #[test]
    fn rank_sum_separated_samples() {
        // Every a below every b: U_a counts a > b pairs, so 0.
        let (u, p) = rank_sum_test(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(u, 0.0);
        assert!(p <= 1.0);
    }

    #[test]
    fn rank_sum_identical_samples_report_no_separation() {
        let (_, p) = rank_sum_test(&[5.0, 5.0, 5.0], &[5.0, 5.0]).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn u_statistics_are_complementary() {
        let a = [0.82, 0.79, 0.85, 0.90];
        let b = [0.80, 0.83, 0.78];
        let (ua, _) = rank_sum_test(&a, &b).unwrap();
        let (ub, _) = rank_sum_test(&b, &a).unwrap();
        assert!((ua + ub - (a.len() * b.len()) as f64).abs() < 1e-12);
    }

    #[test]
    fn clearly_different_samples_get_small_p() {
        let a: Vec<f64> = (0..10).map(|i| 0.9 + i as f64 * 1e-3).collect();
        let b: Vec<f64> = (0..10).map(|i| 0.5 + i as f64 * 1e-3).collect();
        let (_, p) = rank_sum_test(&a, &b).unwrap();
        assert!(p < 0.01, "p {p}");
    }

    #[test]
    fn erf_known_values() {
        assert!((erf(0.0) - 0.0).abs() < 1e-7);
        assert!((erf(1.0) - 0.8427007929).abs() < 1e-6);
        assert!((erf(-1.0) + 0.8427007929).abs() < 1e-6);
        assert!((erf(2.0) - 0.9953222650).abs() < 1e-6);
    }
}
