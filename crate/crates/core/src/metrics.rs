//! Confusion-matrix segmentation metrics: per-class pixel accuracy (recall)
//! and Dice, pooled over every scored pixel.

use std::fmt::Write as _;

use crate::annotations::{SegmentationMask, IGNORE_LABEL};
use crate::error::{Error, Result};

/// `K × K` pixel counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize, n: u64) {
        self.counts[truth * self.k + pred] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class * self.k..(class + 1) * self.k]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, class)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Count every pixel whose ground truth is not ignored.
    pub fn accumulate(&mut self, pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
        if pred.height != gt.height || pred.width != gt.width {
            return Err(Error::Shape(format!(
                "prediction is {}x{}, ground truth {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        let k = self.k;
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == IGNORE_LABEL {
                continue;
            }
            let (g, p) = (usize::from(g), usize::from(p));
            if g >= k || p >= k {
                return Err(Error::Data(format!(
                    "label pair (truth {g}, prediction {p}) outside {k} classes"
                )));
            }
            self.counts[g * k + p] += 1;
        }
        Ok(())
    }

    /// Per-class recall; `None` for classes with no ground-truth pixels.
    pub fn classwise_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|c| {
                let row = self.row_sum(c);
                (row > 0).then(|| self.get(c, c) as f64 / row as f64)
            })
            .collect()
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.total();
        let diag: u64 = (0..self.k).map(|c| self.get(c, c)).sum();
        (total > 0).then(|| diag as f64 / total as f64)
    }

    /// Per-class Dice and their mean over classes present in the ground
    /// truth or the prediction.
    pub fn dice(&self) -> (Vec<Option<f64>>, Option<f64>) {
        let per_class: Vec<Option<f64>> = (0..self.k)
            .map(|c| {
                let denom = self.row_sum(c) + self.col_sum(c);
                (denom > 0).then(|| 2.0 * self.get(c, c) as f64 / denom as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean =
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        (per_class, mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub accuracy: Vec<Option<f64>>,
    pub dice: Vec<Option<f64>>,
    pub mean_dice: Option<f64>,
    pub overall_accuracy: Option<f64>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", v * 100.0))
}

fn ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

impl MetricsReport {
    pub fn from_confusion(class_names: Vec<String>, confusion: ConfusionMatrix) -> Self {
        let accuracy = confusion.classwise_accuracy();
        let (dice, mean_dice) = confusion.dice();
        let overall_accuracy = confusion.overall_accuracy();
        Self {
            class_names,
            confusion,
            accuracy,
            dice,
            mean_dice,
            overall_accuracy,
        }
    }

    /// Aligned text table: class, pixel accuracy in percent, Dice.
    pub fn render_table(&self) -> String {
        let name_w = self
            .class_names
            .iter()
            .map(|n| n.len())
            .chain(std::iter::once("Class".len()))
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>12}  {:>6}",
            "Class", "Accuracy (%)", "Dice"
        );
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>12}  {:>6}",
                name,
                pct(self.accuracy[i]),
                ratio(self.dice[i])
            );
        }
        let _ = writeln!(out, "Mean Dice: {}", ratio(self.mean_dice));
        let _ = writeln!(
            out,
            "Overall pixel accuracy (%): {}",
            pct(self.overall_accuracy)
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,accuracy_pct,dice\n");
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{}",
                name,
                pct(self.accuracy[i]),
                ratio(self.dice[i])
            );
        }
        let _ = writeln!(out, "mean,,{}", ratio(self.mean_dice));
        let _ = writeln!(out, "overall,{},", pct(self.overall_accuracy));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(labels: &[u8]) -> SegmentationMask {
        SegmentationMask::new(1, labels.len(), labels.to_vec()).unwrap()
    }

    #[test]
    fn identical_masks_on_one_class() {
        let mut cm = ConfusionMatrix::new(5);
        cm.accumulate(&mask(&[1, 1, 1, 1]), &mask(&[1, 1, 1, 1]))
            .unwrap();
        assert_eq!(cm.get(1, 1), 4);
        assert_eq!(cm.total(), 4);
        let (dice, mean) = cm.dice();
        assert_eq!(dice[1], Some(1.0));
        assert_eq!(dice[0], None);
        assert_eq!(mean, Some(1.0));
    }

    #[test]
    fn ignored_truth_is_skipped() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&mask(&[0, 1]), &mask(&[255, 1])).unwrap();
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn accumulation_is_additive() {
        let (p1, g1) = (mask(&[0, 1, 1]), mask(&[0, 0, 1]));
        let (p2, g2) = (mask(&[2, 2]), mask(&[1, 2]));
        let mut split = ConfusionMatrix::new(3);
        split.accumulate(&p1, &g1).unwrap();
        split.accumulate(&p2, &g2).unwrap();
        let mut joint = ConfusionMatrix::new(3);
        joint
            .accumulate(&mask(&[0, 1, 1, 2, 2]), &mask(&[0, 0, 1, 1, 2]))
            .unwrap();
        assert_eq!(split, joint);
    }

    #[test]
    fn size_mismatch_is_shape_error() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(
            cm.accumulate(&mask(&[0]), &mask(&[0, 1])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn row_accuracy_and_diagonal() {
        let mut cm = ConfusionMatrix::new(5);
        cm.add(0, 0, 2);
        cm.add(0, 1, 2);
        assert_eq!(cm.classwise_accuracy()[0], Some(0.5));
        assert_eq!(cm.classwise_accuracy()[3], None);

        let mut diag = ConfusionMatrix::new(3);
        for c in 0..3 {
            diag.add(c, c, 7);
        }
        assert!(diag.classwise_accuracy().iter().all(|a| *a == Some(1.0)));
    }

    #[test]
    fn dice_hand_count() {
        // truth: 4 pixels of class 0; prediction: 2 right, 2 as class 1
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&mask(&[0, 0, 1, 1]), &mask(&[0, 0, 0, 0]))
            .unwrap();
        let (dice, _) = cm.dice();
        assert!((dice[0].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice[1], Some(0.0));
    }

    #[test]
    fn constant_predictor_on_balanced_mask() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&mask(&[0, 0, 0, 0]), &mask(&[0, 0, 1, 1]))
            .unwrap();
        assert_eq!(cm.classwise_accuracy(), vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn report_mirrors_class_table() {
        let mut cm = ConfusionMatrix::new(5);
        // Glomerulus: 8289 of 10000 correct
        cm.add(2, 2, 8289);
        cm.add(2, 0, 1711);
        let names = crate::annotations::ClassCatalog::default().names().to_vec();
        let report = MetricsReport::from_confusion(names, cm);
        let table = report.render_table();
        let glom = table.lines().find(|l| l.starts_with("Glomerulus")).unwrap();
        assert!(glom.contains("82.89"), "{glom}");
        assert!(table
            .lines()
            .find(|l| l.starts_with("Arteriole"))
            .unwrap()
            .contains("n/a"));
        assert_eq!(table.lines().count(), 1 + 5 + 2);
        let csv = report.to_csv();
        assert!(csv.contains("\nGlomerulus,82.89,"));
        assert!(csv.starts_with("class,accuracy_pct,dice\n"));
    }
}
