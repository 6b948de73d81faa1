//! Classification evaluation: confusion matrices, per-class and weighted
//! F1, accuracy, and the per-dimension min-max normalization used for
//! feature heatmap exports.
//!
//! Convention, printed in every report header: confusion rows are gold
//! labels, columns are predictions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::LabelSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gold × predicted count matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    label_set: LabelSet,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    /// Count at (gold, predicted).
    pub fn at(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.n_classes() + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Gold-count (row sum) per class.
    pub fn support(&self, class: usize) -> u64 {
        (0..self.n_classes()).map(|p| self.at(class, p)).sum()
    }

    /// Predicted-count (column sum) per class.
    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.n_classes()).map(|g| self.at(g, class)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.at(c, c)).sum()
    }

    /// Merge counts from another matrix over the same label set.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        debug_assert_eq!(self.label_set, other.label_set);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn empty(label_set: LabelSet) -> Self {
        let m = label_set.len();
        ConfusionMatrix {
            counts: vec![0; m * m],
            label_set,
        }
    }

    pub fn record(&mut self, gold: usize, pred: usize) {
        let m = self.n_classes();
        self.counts[gold * m + pred] += 1;
    }
}

/// Count (gold, predicted) pairs into a confusion matrix.
pub fn confusion(
    golds: &[usize],
    preds: &[usize],
    label_set: &LabelSet,
) -> Result<ConfusionMatrix> {
    if golds.len() != preds.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: vec![golds.len()],
            rhs: vec![preds.len()],
        });
    }
    let m = label_set.len();
    let mut cm = ConfusionMatrix::empty(label_set.clone());
    for (&g, &p) in golds.iter().zip(preds) {
        if g >= m || p >= m {
            return Err(Error::LabelOutOfRange {
                label: g.max(p),
                n_classes: m,
            });
        }
        cm.record(g, p);
    }
    Ok(cm)
}

/// Per-class precision/recall/F1 plus support.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Full evaluation summary derived from a confusion matrix.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_class: Vec<ClassScores>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Compute per-class and support-weighted scores. Classes with no
/// predictions and no gold examples get zero scores by convention.
pub fn f1_scores(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput {
            msg: "confusion matrix has no observations".into(),
        });
    }
    let m = cm.n_classes();
    let mut per_class = Vec::with_capacity(m);
    let mut weighted_terms = Vec::with_capacity(m);
    for c in 0..m {
        let tp = cm.at(c, c) as f64;
        let support = cm.support(c);
        let predicted = cm.predicted(c);
        let precision = if predicted > 0 {
            tp / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted_terms.push(f1 * support as f64);
        per_class.push(ClassScores {
            label: cm.label_set().labels()[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    // Summing in sorted order makes the weighted score bit-identical
    // under any label permutation.
    weighted_terms.sort_by(f64::total_cmp);
    let weighted_f1 = weighted_terms.iter().sum::<f64>() / total as f64;
    Ok(EvalReport {
        per_class,
        weighted_f1,
        accuracy: cm.trace() as f64 / total as f64,
        confusion: cm.clone(),
    })
}

impl EvalReport {
    /// Aligned plain-text table: one F1 column per class plus the
    /// weighted average, mirroring the usual results-table layout.
    pub fn render_table(&self) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for c in &self.per_class {
            header.push_str(&format!("{:>12}", c.label));
            row.push_str(&format!("{:>12.4}", c.f1));
        }
        header.push_str(&format!("{:>12}", "Average"));
        row.push_str(&format!("{:>12.4}", self.weighted_f1));
        format!(
            "F1 per class (weighted average over gold support)\n{header}\n{row}\naccuracy {:.4}  weighted-F1 {:.4}\n",
            self.accuracy, self.weighted_f1
        )
    }

    /// Confusion matrix in the gold-rows / predicted-columns layout.
    pub fn render_confusion(&self) -> String {
        let cm = &self.confusion;
        let labels = cm.label_set().labels();
        let mut out = String::from("Confusion matrix (rows = gold, columns = predicted)\n");
        out.push_str(&format!("{:>12}", ""));
        for l in labels {
            out.push_str(&format!("{:>10}", l));
        }
        out.push('\n');
        for (g, l) in labels.iter().enumerate() {
            out.push_str(&format!("{:>12}", l));
            for p in 0..labels.len() {
                out.push_str(&format!("{:>10}", cm.at(g, p)));
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable tab-separated copy: per-class rows then summary
    /// lines.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("label\tprecision\trecall\tf1\tsupport\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        out.push_str(&format!("accuracy\t{}\n", self.accuracy));
        out.push_str(&format!("weighted_f1\t{}\n", self.weighted_f1));
        out
    }
}

/// Per-dimension min-max normalization of a stack of equal-length
/// vectors into [0,1]; constant dimensions map to 0.5.
pub fn heatmap_normalize(vectors: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let first = vectors.first().ok_or_else(|| Error::EmptyInput {
        msg: "heatmap export needs at least one vector".into(),
    })?;
    let dim = first.numel();
    for v in vectors {
        if v.numel() != dim {
            return Err(Error::ShapeMismatch {
                op: "heatmap_normalize",
                lhs: first.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
    }
    let mut mins = vec![f64::INFINITY; dim];
    let mut maxs = vec![f64::NEG_INFINITY; dim];
    for v in vectors {
        for (i, x) in v.values().iter().enumerate() {
            mins[i] = mins[i].min(*x);
            maxs[i] = maxs[i].max(*x);
        }
    }
    Ok(vectors
        .iter()
        .map(|v| {
            v.values()
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    if maxs[i] > mins[i] {
                        (x - mins[i]) / (maxs[i] - mins[i])
                    } else {
                        0.5
                    }
                })
                .collect()
        })
        .collect())
}

/// Normalize and write as a tab-separated matrix, one vector per row.
/// Values are written in full round-trip precision.
pub fn heatmap_export(vectors: &[Tensor], path: &Path) -> Result<()> {
    let rows = heatmap_normalize(vectors)?;
    let mut out = BufWriter::new(File::create(path)?);
    for row in rows {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn binary_set() -> LabelSet {
        LabelSet::new("binary", vec!["no".into(), "yes".into()]).unwrap()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = confusion(&[0, 1, 1, 0], &[0, 1, 1, 0], &binary_set()).unwrap();
        assert_eq!(cm.at(0, 0), 2);
        assert_eq!(cm.at(1, 1), 2);
        assert_eq!(cm.at(0, 1) + cm.at(1, 0), 0);
        let report = f1_scores(&cm).unwrap();
        assert_eq!(report.weighted_f1, 1.0);
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn hand_counted_two_class_matrix() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], &binary_set()).unwrap();
        assert_eq!(
            [cm.at(0, 0), cm.at(0, 1), cm.at(1, 0), cm.at(1, 1)],
            [1, 1, 0, 1]
        );
    }

    #[test]
    fn hand_computed_f1_case() {
        // cm = [[1,1],[0,1]]: both classes get F1 = 2/3, weighted = 2/3.
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], &binary_set()).unwrap();
        let report = f1_scores(&cm).unwrap();
        assert!((report.per_class[0].precision - 1.0).abs() < 1e-15);
        assert!((report.per_class[0].recall - 0.5).abs() < 1e-15);
        assert!((report.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((report.per_class[1].precision - 0.5).abs() < 1e-15);
        assert!((report.per_class[1].recall - 1.0).abs() < 1e-15);
        assert!((report.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((report.weighted_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_wrong_single_class_predictions_have_zero_f1() {
        let cm = confusion(&[0, 0, 0], &[1, 1, 1], &binary_set()).unwrap();
        let report = f1_scores(&cm).unwrap();
        assert_eq!(report.weighted_f1, 0.0);
        assert_eq!(report.accuracy, 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(confusion(&[0, 1], &[0], &binary_set()).is_err());
    }

    #[test]
    fn meld_evaluation_yields_seven_by_seven() {
        let golds: Vec<usize> = (0..49).map(|i| i % 7).collect();
        let preds: Vec<usize> = (0..49).map(|i| (i * 3) % 7).collect();
        let cm = confusion(&golds, &preds, &LabelSet::meld()).unwrap();
        assert_eq!(cm.n_classes(), 7);
        let rendered = f1_scores(&cm).unwrap().render_confusion();
        assert!(rendered.contains("rows = gold"));
        for label in LabelSet::meld().labels() {
            assert!(rendered.contains(label.as_str()));
        }
    }

    #[test]
    fn support_sums_to_total_and_accuracy_is_trace_over_total() {
        let golds = [0usize, 1, 1, 0, 1];
        let preds = [0usize, 1, 0, 0, 1];
        let cm = confusion(&golds, &preds, &binary_set()).unwrap();
        let report = f1_scores(&cm).unwrap();
        let support_sum: u64 = (0..2).map(|c| cm.support(c)).sum();
        assert_eq!(support_sum, cm.total());
        assert_eq!(report.accuracy, cm.trace() as f64 / cm.total() as f64);
    }

    #[test]
    fn heatmap_min_max_maps_extremes_to_zero_and_one() {
        let rows =
            heatmap_normalize(&[Tensor::vector(vec![0.0]), Tensor::vector(vec![10.0])]).unwrap();
        assert_eq!(rows[0][0], 0.0);
        assert_eq!(rows[1][0], 1.0);
    }

    #[test]
    fn heatmap_constant_dimension_maps_to_half() {
        let rows = heatmap_normalize(&[
            Tensor::vector(vec![3.0, 1.0]),
            Tensor::vector(vec![3.0, 2.0]),
            Tensor::vector(vec![3.0, 3.0]),
        ])
        .unwrap();
        for r in &rows {
            assert_eq!(r[0], 0.5);
        }
        assert_eq!(rows[0][1], 0.0);
        assert_eq!(rows[2][1], 1.0);
    }

    #[test]
    fn heatmap_matches_direct_formula_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let vectors: Vec<Tensor> = (0..3)
            .map(|_| Tensor::vector((0..4).map(|_| rng.gen_range(-5.0..5.0)).collect()))
            .collect();
        let rows = heatmap_normalize(&vectors).unwrap();
        for col in 0..4 {
            let vals: Vec<f64> = vectors.iter().map(|v| v.values()[col]).collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (r, v) in vals.iter().enumerate() {
                let expect = (v - min) / (max - min);
                assert!((rows[r][col] - expect).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&rows[r][col]));
            }
        }
    }

    #[test]
    fn heatmap_rejects_empty_input() {
        assert!(heatmap_normalize(&[]).is_err());
    }
}
