//! Confusion matrices, the evaluation metric suite and a nearest-centroid
//! baseline classifier.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureRow};
use crate::foldover::Axis;

pub const NUM_CLASSES: usize = 3;

/// Default class names, in class-index order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["poor", "good", "excellent"];

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("predictions and truth differ in length ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("label {0} is outside the known classes")]
    UnknownLabel(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("feature vector {index} has {found} dimensions, expected {expected}")]
    InconsistentDims { index: usize, expected: usize, found: usize },
    #[error("no training sample for class {0}")]
    MissingClass(usize),
    #[error("i/o failure: {0}")]
    IoFailure(String),
}

impl From<io::Error> for ClassifyError {
    fn from(e: io::Error) -> Self {
        ClassifyError::IoFailure(e.to_string())
    }
}

pub fn class_index(name: &str) -> Result<usize, ClassifyError> {
    CLASS_NAMES
        .iter()
        .position(|c| *c == name.trim())
        .ok_or_else(|| ClassifyError::UnknownLabel(name.to_string()))
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self {
            counts,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(pred: &[usize], truth: &[usize]) -> Result<ConfusionMatrix, ClassifyError> {
    if pred.len() != truth.len() {
        return Err(ClassifyError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in pred.iter().zip(truth) {
        for l in [p, t] {
            if l >= NUM_CLASSES {
                return Err(ClassifyError::UnknownLabel(l.to_string()));
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    /// Mean squared deviation of the per-class recalls from `macro_r`.
    pub variance: f64,
    pub confusion: ConfusionMatrix,
}

fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest rates per class plus macro averages. Undefined ratios are 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, ClassifyError> {
    let total = cm.total();
    if total == 0 {
        return Err(ClassifyError::EmptyMatrix);
    }
    let per_class: Vec<ClassMetrics> = (0..NUM_CLASSES)
        .map(|k| {
            let tp = cm.counts[k][k];
            let row: u64 = cm.counts[k].iter().sum();
            let col: u64 = (0..NUM_CLASSES).map(|t| cm.counts[t][k]).sum();
            let fn_ = row - tp;
            let fp = col - tp;
            let tn = total - tp - fn_ - fp;
            ClassMetrics {
                tp,
                tn,
                fp,
                fn_,
                precision: rate(tp, tp + fp),
                recall: rate(tp, tp + fn_),
                specificity: rate(tn, tn + fp),
                f1: rate(2 * tp, 2 * tp + fp + fn_),
            }
        })
        .collect();
    let n = NUM_CLASSES as f64;
    let macro_p = per_class.iter().map(|c| c.precision).sum::<f64>() / n;
    let macro_r = per_class.iter().map(|c| c.recall).sum::<f64>() / n;
    let macro_f1 = if macro_p + macro_r > 0.0 {
        2.0 * macro_p * macro_r / (macro_p + macro_r)
    } else {
        0.0
    };
    let variance = per_class.iter().map(|c| (c.recall - macro_r).powi(2)).sum::<f64>() / n;
    Ok(MetricsReport {
        accuracy: rate(cm.trace(), total),
        per_class,
        macro_p,
        macro_r,
        macro_f1,
        variance,
        confusion: cm.clone(),
    })
}

/// Plain-text table with columns
/// `Acc Pre1..3 Mac_P Rec1..3 Mac_R Spe1..3 F1-mea1..3 Mac_F1 Var`, in percent.
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut heads = vec!["Feature".to_string(), "Acc".to_string()];
    heads.extend((1..=3).map(|i| format!("Pre{i}")));
    heads.push("Mac_P".into());
    heads.extend((1..=3).map(|i| format!("Rec{i}")));
    heads.push("Mac_R".into());
    heads.extend((1..=3).map(|i| format!("Spe{i}")));
    heads.extend((1..=3).map(|i| format!("F1-mea{i}")));
    heads.push("Mac_F1".into());
    heads.push("Var".into());

    let mut table: Vec<Vec<String>> = vec![heads];
    for (name, r) in rows {
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        let mut line = vec![name.to_string(), pct(r.accuracy)];
        line.extend(r.per_class.iter().map(|c| pct(c.precision)));
        line.push(pct(r.macro_p));
        line.extend(r.per_class.iter().map(|c| pct(c.recall)));
        line.push(pct(r.macro_r));
        line.extend(r.per_class.iter().map(|c| pct(c.specificity)));
        line.extend(r.per_class.iter().map(|c| pct(c.f1)));
        line.push(pct(r.macro_f1));
        line.push(pct(r.variance));
        table.push(line);
    }
    let ncol = table[0].len();
    let widths: Vec<usize> = (0..ncol).map(|c| table.iter().map(|r| r[c].len()).max().unwrap()).collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Nearest class mean after z-scoring with training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    dims: usize,
    kept: Vec<usize>,
    mean: Vec<f64>,
    std: Vec<f64>,
    centroids: Vec<Vec<f64>>,
}

fn check_dims(samples: &[Vec<f64>], expected: usize) -> Result<(), ClassifyError> {
    for (index, s) in samples.iter().enumerate() {
        if s.len() != expected {
            return Err(ClassifyError::InconsistentDims {
                index,
                expected,
                found: s.len(),
            });
        }
    }
    Ok(())
}

impl NearestCentroid {
    /// Fits on `train` with labels in `0..n_classes`; every class needs a sample.
    pub fn fit(train: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Self, ClassifyError> {
        if train.len() != labels.len() {
            return Err(ClassifyError::LengthMismatch {
                pred: train.len(),
                truth: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(ClassifyError::UnknownLabel(l.to_string()));
        }
        for c in 0..n_classes {
            if !labels.contains(&c) {
                return Err(ClassifyError::MissingClass(c));
            }
        }
        let dims = train[0].len();
        check_dims(train, dims)?;

        let n = train.len() as f64;
        let mut mean = vec![0.0; dims];
        for s in train {
            mean.iter_mut().zip(s).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; dims];
        for s in train {
            var.iter_mut().zip(s.iter().zip(&mean)).for_each(|(acc, (v, m))| *acc += (v - m).powi(2) / n);
        }
        let kept: Vec<usize> = (0..dims).filter(|&i| var[i] > 1e-24 * (1.0 + mean[i] * mean[i])).collect();
        let std: Vec<f64> = kept.iter().map(|&i| var[i].sqrt()).collect();
        let mean: Vec<f64> = kept.iter().map(|&i| mean[i]).collect();

        let mut model = Self {
            dims,
            kept,
            mean,
            std,
            centroids: vec![],
        };
        let mut sums = vec![vec![0.0; model.kept.len()]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (s, &l) in train.iter().zip(labels) {
            let z = model.standardize(s);
            sums[l].iter_mut().zip(&z).for_each(|(a, b)| *a += b);
            counts[l] += 1;
        }
        model.centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect();
        Ok(model)
    }

    fn standardize(&self, s: &[f64]) -> Vec<f64> {
        self.kept
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&i, (m, sd))| (s[i] - m) / sd)
            .collect()
    }

    pub fn predict_one(&self, sample: &[f64]) -> usize {
        let z = self.standardize(sample);
        let mut best = (f64::INFINITY, 0usize);
        for (c, centroid) in self.centroids.iter().enumerate() {
            let d: f64 = centroid.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }

    pub fn predict(&self, test: &[Vec<f64>]) -> Result<Vec<usize>, ClassifyError> {
        check_dims(test, self.dims)?;
        Ok(test.iter().map(|s| self.predict_one(s)).collect())
    }
}

pub fn nearest_centroid(
    train: &[Vec<f64>],
    labels: &[usize],
    test: &[Vec<f64>],
    n_classes: usize,
) -> Result<Vec<usize>, ClassifyError> {
    NearestCentroid::fit(train, labels, n_classes)?.predict(test)
}

/// Seeded 50/50 split of `ids` into (train, test), both sorted.
pub fn seeded_split(ids: &[u32], seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut ids: Vec<u32> = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = ids.len() / 2;
    let mut train = ids[..half].to_vec();
    let mut test = ids[half..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains on the `axis` rows whose track is in `train`, scores the labelled
/// rest. Rows without a label are ignored.
pub fn evaluate_rows(
    rows: &[FeatureRow],
    labels: &BTreeMap<u32, usize>,
    train: &BTreeSet<u32>,
    axis: Axis,
) -> Result<MetricsReport, ClassifyError> {
    let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in rows.iter().filter(|r| r.axis == axis) {
        let Some(&label) = labels.get(&r.track_id) else { continue };
        if train.contains(&r.track_id) {
            xtr.push(r.values.clone());
            ytr.push(label);
        } else {
            xte.push(r.values.clone());
            yte.push(label);
        }
    }
    let pred = nearest_centroid(&xtr, &ytr, &xte, NUM_CLASSES)?;
    metrics(&confusion(&pred, &yte)?)
}

/// Writes the feature CSV with a label column.
pub fn export_csv(rows: &[FeatureRow], labels: &BTreeMap<u32, String>, path: &Path) -> Result<(), ClassifyError> {
    let labelled: Vec<FeatureRow> = rows
        .iter()
        .map(|r| FeatureRow {
            label: labels.get(&r.track_id).cloned().or_else(|| r.label.clone()),
            ..r.clone()
        })
        .collect();
    features::write_features_csv(path, &labelled, true)?;
    Ok(())
}

pub fn import_csv(path: &Path) -> Result<Vec<FeatureRow>, ClassifyError> {
    Ok(features::read_features_csv(path)?)
}

/// `track_id,label` rows.
pub fn labels_to_csv(labels: &BTreeMap<u32, String>) -> String {
    let mut out = String::from("track_id,label\n");
    for (id, l) in labels {
        out.push_str(&format!("{id},{l}\n"));
    }
    out
}

pub fn parse_labels_csv(text: &str) -> io::Result<BTreeMap<u32, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad label row {}", n + 1)))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, format!("bad track id on row {}", n + 1)))?;
        out.insert(id, label.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HAND: [[u64; 3]; 3] = [[8, 2, 0], [1, 6, 1], [0, 2, 4]];

    #[test]
    fn confusion_shapes() {
        let x: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let cm = confusion(&x, &x).unwrap();
        assert_eq!(cm.trace(), 10);
        assert_eq!(cm.total(), 10);
        let ones = vec![1usize; 6];
        let cm = confusion(&ones, &[0, 1, 2, 0, 1, 2]).unwrap();
        for t in 0..3 {
            assert_eq!(cm.counts[t][0] + cm.counts[t][2], 0);
        }
        assert_eq!(
            confusion(&[0; 5], &[0; 6]),
            Err(ClassifyError::LengthMismatch { pred: 5, truth: 6 })
        );
        assert!(matches!(confusion(&[3], &[0]), Err(ClassifyError::UnknownLabel(_))));
    }

    #[test]
    fn perfect_split_sizes() {
        let r = metrics(&ConfusionMatrix::from_counts([[488, 0, 0], [0, 124, 0], [0, 0, 75]])).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|c| c.f1 == 1.0));
        assert_eq!(r.variance, 0.0);
    }

    #[test]
    fn hand_matrix() {
        let r = metrics(&ConfusionMatrix::from_counts(HAND)).unwrap();
        assert!((r.accuracy - 0.75).abs() < 1e-12);
        let c0 = r.per_class[0];
        assert_eq!((c0.tp, c0.fn_, c0.fp, c0.tn), (8, 2, 1, 13));
        assert!((c0.precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((c0.recall - 0.8).abs() < 1e-12);
        assert!((c0.specificity - 13.0 / 14.0).abs() < 1e-12);
        assert!((c0.f1 - 16.0 / 19.0).abs() < 1e-12);
        let c1 = r.per_class[1];
        assert!((c1.precision - 0.6).abs() < 1e-12);
        assert!((c1.specificity - 12.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn empty_column_and_empty_matrix() {
        let r = metrics(&ConfusionMatrix::from_counts([[3, 0, 1], [2, 0, 0], [0, 0, 4]])).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert_eq!(
            metrics(&ConfusionMatrix::from_counts([[0; 3]; 3])),
            Err(ClassifyError::EmptyMatrix)
        );
    }

    #[test]
    fn nearest_centroid_geometry_and_ties() {
        let train = vec![vec![0.0, 0.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![10.0, 10.0], vec![9.0, 11.0], vec![11.0, 9.0]];
        let labels = vec![0, 0, 0, 1, 1, 1];
        let pred = nearest_centroid(&train, &labels, &[vec![1.0, 1.0], vec![5.0, 5.0], vec![9.0, 9.0]], 2).unwrap();
        assert_eq!(pred, vec![0, 0, 1]);
        assert_eq!(
            nearest_centroid(&train, &[0; 6], &[vec![0.0, 0.0]], 2),
            Err(ClassifyError::MissingClass(1))
        );
        assert!(matches!(
            nearest_centroid(&train, &labels, &[vec![0.0]], 2),
            Err(ClassifyError::InconsistentDims { .. })
        ));
    }

    #[test]
    fn constant_dimensions_are_dropped() {
        let train = vec![vec![0.0, 5.0], vec![10.0, 5.0]];
        let model = NearestCentroid::fit(&train, &[0, 1], 2).unwrap();
        assert_eq!(model.kept, vec![0]);
        assert_eq!(model.predict(&[vec![8.0, -100.0]]).unwrap(), vec![1]);
    }

    #[test]
    fn table_has_all_columns() {
        let r = metrics(&ConfusionMatrix::from_counts(HAND)).unwrap();
        let t = render_table(&[("F^Z", &r)]);
        let head: Vec<&str> = t.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(head.len(), 18);
        assert_eq!(head[1], "Acc");
        assert_eq!(head[17], "Var");
        assert!(t.lines().nth(1).unwrap().contains("75.00"));
    }

    #[test]
    fn split_is_seeded_and_complete() {
        let ids: Vec<u32> = (1..=11).collect();
        let (a, b) = seeded_split(&ids, 3);
        assert_eq!((a.len(), b.len()), (5, 6));
        let mut all = [a.clone(), b.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(seeded_split(&ids, 3), (a, b));
    }

    #[test]
    fn labels_csv_round_trip() {
        let m: BTreeMap<u32, String> = [(1, "poor".into()), (7, "excellent".into())].into();
        assert_eq!(parse_labels_csv(&labels_to_csv(&m)).unwrap(), m);
        assert_eq!(class_index("good"), Ok(1));
        assert!(class_index("great").is_err());
    }
}
