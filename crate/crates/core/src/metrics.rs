//! Classification and calibration metrics.
//!
//! Inputs are per-sample probability rows (`N×K`) and true class ids; pixels
//! carrying the ignore label must be filtered out before calling in.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes with no ground-truth support and no predictions.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub n_bins: usize,
    pub reliability_bins: Vec<ReliabilityBin>,
    pub n_samples: usize,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
}

fn check_rows(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<usize> {
    let (n, k) = probs.dim();
    if n == 0 {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    if n != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{n} probability rows for {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(k)
}

/// Index and value of the row maximum; the first maximum wins ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub fn predicted_labels(probs: ArrayView2<'_, f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()).0)
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidInput(
            "accuracy of an empty prediction set".into(),
        ));
    }
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(
            "prediction and label lengths differ".into(),
        ));
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pred.len() as f64)
}

pub fn confusion_matrix(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(
            "prediction and label lengths differ".into(),
        ));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::InvalidInput(format!(
                "class id out of range for {n_classes} classes"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// `TP / (TP + FP + FN)` for class `k`; `None` when the class never occurs.
pub fn iou(confusion: &[Vec<u64>], k: usize) -> Option<f64> {
    let tp = confusion[k][k];
    let fn_: u64 = confusion[k].iter().sum::<u64>() - tp;
    let fp: u64 = confusion.iter().map(|row| row[k]).sum::<u64>() - tp;
    let denom = tp + fp + fn_;
    (denom > 0).then(|| tp as f64 / denom as f64)
}

/// Mean IoU over classes with ground-truth support.
pub fn miou(confusion: &[Vec<u64>]) -> Result<f64> {
    let supported: Vec<f64> = (0..confusion.len())
        .filter(|&k| confusion[k].iter().sum::<u64>() > 0)
        .map(|k| iou(confusion, k).unwrap_or(0.0))
        .collect();
    if supported.is_empty() {
        return Err(Error::InvalidInput(
            "no class has ground-truth support".into(),
        ));
    }
    Ok(supported.iter().sum::<f64>() / supported.len() as f64)
}

/// Top-label ECE over equal-width confidence bins `[i/n, (i+1)/n)`, last bin closed.
pub fn ece(
    probs: ArrayView2<'_, f64>,
    labels: &[usize],
    n_bins: usize,
) -> Result<(f64, Vec<ReliabilityBin>)> {
    check_rows(probs, labels)?;
    if n_bins == 0 {
        return Err(Error::InvalidInput("ECE needs at least one bin".into()));
    }
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (row, &t) in probs.rows().into_iter().zip(labels) {
        let (pred, conf) = argmax(row.iter().copied());
        let b = ((conf * n_bins as f64).floor() as usize).min(n_bins - 1);
        conf_sum[b] += conf;
        count[b] += 1;
        correct[b] += (pred == t) as usize;
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (mean_confidence, acc) = if count[b] > 0 {
                (
                    conf_sum[b] / count[b] as f64,
                    correct[b] as f64 / count[b] as f64,
                )
            } else {
                (0.0, 0.0)
            };
            total += count[b] as f64 / n * (acc - mean_confidence).abs();
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                mean_confidence,
                accuracy: acc,
                count: count[b],
            }
        })
        .collect();
    Ok((total, bins))
}

pub fn nll(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check_rows(probs, labels)?;
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &t)| -probs[[i, t]].max(NLL_FLOOR).ln())
        .sum();
    Ok(sum / labels.len() as f64)
}

pub fn brier(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check_rows(probs, labels)?;
    let sum: f64 = probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &t)| {
            row.iter()
                .enumerate()
                .map(|(k, &p)| {
                    let d = p - if k == t { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum / labels.len() as f64)
}

pub fn evaluate(
    probs: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    n_bins: usize,
) -> Result<EvalReport> {
    let k = check_rows(probs, labels)?;
    if k != n_classes {
        return Err(Error::InvalidInput(format!(
            "{k} probability columns for {n_classes} classes"
        )));
    }
    let pred = predicted_labels(probs);
    let confusion = confusion_matrix(&pred, labels, n_classes)?;
    let (ece, reliability_bins) = ece(probs, labels, n_bins)?;
    Ok(EvalReport {
        accuracy: accuracy(&pred, labels)?,
        per_class_iou: (0..n_classes).map(|c| iou(&confusion, c)).collect(),
        miou: miou(&confusion)?,
        ece,
        nll: nll(probs, labels)?,
        brier: brier(probs, labels)?,
        n_bins,
        reliability_bins,
        n_samples: labels.len(),
        confusion,
    })
}

impl EvalReport {
    /// Overall IoU: pooled `TP / (TP + FP + FN)` across classes.
    pub fn pooled_iou(&self) -> f64 {
        let tp: u64 = (0..self.confusion.len())
            .map(|k| self.confusion[k][k])
            .sum();
        let total: u64 = self.confusion.iter().flatten().sum();
        // every error is one FP and one FN
        let errors = total - tp;
        tp as f64 / (tp + 2 * errors) as f64
    }

    pub fn reliability_csv(&self) -> String {
        let mut out = String::from("lower,upper,mean_confidence,accuracy,count\n");
        for b in &self.reliability_bins {
            out.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{}\n",
                b.lower, b.upper, b.mean_confidence, b.accuracy, b.count
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 2, 1]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn iou_cases() {
        let m = confusion_matrix(&[0, 0, 0], &[0, 0, 0], 1).unwrap();
        assert_eq!(iou(&m, 0), Some(1.0));
        let m = confusion_matrix(&[1, 1], &[0, 0], 2).unwrap();
        assert_eq!(iou(&m, 0), Some(0.0));
        // TP = 2, FP = 1, FN = 1 for class 0
        let m = confusion_matrix(&[0, 0, 0, 1], &[0, 0, 1, 0], 2).unwrap();
        assert_eq!(iou(&m, 0), Some(0.5));
        // class 2 absent from truth and predictions
        let m = confusion_matrix(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(iou(&m, 2), None);
        assert_eq!(miou(&m).unwrap(), 1.0);
    }

    #[test]
    fn miou_skips_unsupported_but_predicted_class() {
        // class 1 is predicted once but never true
        let m = confusion_matrix(&[0, 1, 0], &[0, 0, 0], 2).unwrap();
        assert_eq!(iou(&m, 1), Some(0.0));
        assert!((miou(&m).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ece_cases() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(ece(p.view(), &[0, 1], 15).unwrap().0, 0.0);

        let p = array![[0.9, 0.1], [0.9, 0.1]];
        let (e, bins) = ece(p.view(), &[0, 1], 15).unwrap();
        assert!((e - 0.4).abs() < 1e-12);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 2);
        assert_eq!(bins[13].count, 2);

        // uniform over K = 4 with exactly one in four correct; ties predict class 0
        let p = Array2::from_elem((4, 4), 0.25);
        assert!(ece(p.view(), &[0, 1, 2, 3], 15).unwrap().0.abs() < 1e-15);
    }

    #[test]
    fn nll_cases() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(nll(p.view(), &[0, 1]).unwrap(), 0.0);
        let e = (-1.0f64).exp();
        let p = array![[e, 1.0 - e], [1.0 - e, e]];
        assert!((nll(p.view(), &[0, 1]).unwrap() - 1.0).abs() < 1e-12);
        let p = array![[0.5, 0.5], [0.75, 0.25]];
        let expected = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((nll(p.view(), &[0, 1]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.0397).abs() < 1e-4);
        let p = array![[1.0, 0.0]];
        assert!((nll(p.view(), &[1]).unwrap() + NLL_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn brier_cases() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(brier(p.view(), &[0, 1]).unwrap(), 0.0);
        let p = array![[0.5, 0.5]];
        assert_eq!(brier(p.view(), &[1]).unwrap(), 0.5);
        let p = array![[0.7, 0.3]];
        assert!((brier(p.view(), &[0]).unwrap() - 0.18).abs() < 1e-12);
    }

    #[test]
    fn perfect_report() {
        let p = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let r = evaluate(p.view(), &[0, 1, 2], 3, 15).unwrap();
        assert_eq!(
            (r.accuracy, r.miou, r.ece, r.nll, r.brier),
            (1.0, 1.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(r.pooled_iou(), 1.0);
    }

    #[test]
    fn report_matches_standalone_calls() {
        let p = array![
            [0.6, 0.3, 0.1],
            [0.2, 0.5, 0.3],
            [0.1, 0.1, 0.8],
            [0.4, 0.45, 0.15]
        ];
        let y = [0, 2, 2, 0];
        let r = evaluate(p.view(), &y, 3, 10).unwrap();
        let pred = predicted_labels(p.view());
        assert_eq!(r.accuracy, accuracy(&pred, &y).unwrap());
        assert_eq!(r.ece, ece(p.view(), &y, 10).unwrap().0);
        assert_eq!(r.nll, nll(p.view(), &y).unwrap());
        assert_eq!(r.brier, brier(p.view(), &y).unwrap());
        assert_eq!(r.miou, miou(&r.confusion).unwrap());
        assert_eq!(
            r.reliability_bins.iter().map(|b| b.count).sum::<usize>(),
            r.n_samples
        );
        assert!(r
            .reliability_csv()
            .starts_with("lower,upper,mean_confidence,accuracy,count\n"));
    }

    #[test]
    fn input_errors() {
        let p = array![[0.5, 0.5]];
        assert!(nll(p.view(), &[0, 1]).is_err());
        assert!(brier(p.view(), &[2]).is_err());
        assert!(ece(Array2::<f64>::zeros((0, 2)).view(), &[], 15).is_err());
        assert!(evaluate(p.view(), &[0], 3, 15).is_err());
    }
}
