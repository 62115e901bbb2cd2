//! Fidelity, forecasting and classification metrics, and the F1-optimal threshold sweep.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Argument("metric over empty sequences".into()));
    }
    Ok(())
}

/// Percent root-mean-square difference of `synthetic` from `real`.
pub fn prd(real: &[f64], synthetic: &[f64]) -> Result<f64> {
    check_lengths(real, synthetic)?;
    let energy: f64 = real.iter().map(|x| x * x).sum();
    if energy == 0.0 {
        return Err(Error::Division("PRD of an all-zero real sequence".into()));
    }
    let diff: f64 = real.iter().zip(synthetic).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(100.0 * (diff / energy).sqrt())
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    if truth.contains(&0.0) {
        return Err(Error::Division("MAPE with a zero true value".into()));
    }
    let sum: f64 = truth.iter().zip(pred).map(|(x, p)| ((x - p) / x).abs()).sum();
    Ok(100.0 * sum / truth.len() as f64)
}

/// Coefficient of variation of the RMSE, in percent.
pub fn cvrmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    let e = rmse(truth, pred)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    if mean == 0.0 {
        return Err(Error::Division("CVRMSE with zero mean".into()));
    }
    Ok(100.0 * e / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub v: f64,
}

fn dist(a: CurvePoint, b: CurvePoint) -> f64 {
    (a.t - b.t).hypot(a.v - b.v)
}

/// Discrete Fréchet distance with Euclidean ground distance.
pub fn frechet_distance(p: &[CurvePoint], q: &[CurvePoint]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Argument("Fréchet distance of an empty curve".into()));
    }
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &pi) in p.iter().enumerate() {
        for (j, &qj) in q.iter().enumerate() {
            let d = dist(pi, qj);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Builds the two curves compared by the fidelity FD: times min-max scaled over
/// `times`, values min-max scaled jointly over both sequences.
pub fn scaled_curves(
    times: &[f64],
    a: &[f64],
    b: &[f64],
) -> Result<(Vec<CurvePoint>, Vec<CurvePoint>)> {
    check_lengths(a, b)?;
    check_lengths(times, a)?;
    let span = |xs: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
        let range = hi - lo;
        (lo, if range > 0.0 { range } else { 1.0 })
    };
    let (t0, tr) = span(&mut times.iter().copied());
    let (v0, vr) = span(&mut a.iter().chain(b).copied());
    let curve = |xs: &[f64]| {
        times
            .iter()
            .zip(xs)
            .map(|(t, v)| CurvePoint {
                t: (t - t0) / tr,
                v: (v - v0) / vr,
            })
            .collect()
    };
    Ok((curve(a), curve(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub prd: f64,
    pub rmse: f64,
    pub fd: f64,
}

/// Corpus-level fidelity of `synthetic` against `real`.
///
/// Each synthetic sequence is paired with its Euclidean nearest real sequence and the
/// three metrics are averaged over the pairs.
pub fn corpus_fidelity(real: &[Vec<f64>], synthetic: &[Vec<f64>], times: &[f64]) -> Result<Fidelity> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::Argument("fidelity needs non-empty corpora".into()));
    }
    let mut acc = Fidelity {
        prd: 0.0,
        rmse: 0.0,
        fd: 0.0,
    };
    for s in synthetic {
        let mut best = (f64::INFINITY, 0);
        for (k, r) in real.iter().enumerate() {
            check_lengths(r, s)?;
            let d: f64 = r.iter().zip(s).map(|(x, y)| (x - y).powi(2)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        let r = &real[best.1];
        acc.prd += prd(r, s)?;
        acc.rmse += rmse(r, s)?;
        let (p, q) = scaled_curves(times, r, s)?;
        acc.fd += frechet_distance(&p, &q)?;
    }
    let n = synthetic.len() as f64;
    Ok(Fidelity {
        prd: acc.prd / n,
        rmse: acc.rmse / n,
        fd: acc.fd / n,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    /// Tallies predictions against truth; `true` means anomalous.
    pub fn from_labels(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape("prediction and label counts differ".into()));
        }
        let mut c = Self::default();
        for (p, t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

pub fn classification_scores(c: &ConfusionCounts) -> Result<ClassificationScores> {
    if c.total() == 0 {
        return Err(Error::Argument("no classified samples".into()));
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClassificationScores {
        precision,
        recall,
        f1,
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        precision_undefined,
        recall_undefined,
    })
}

/// F1 from precision and recall alone.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub points: usize,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self { points: 512 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub counts: ConfusionCounts,
    pub scores: ClassificationScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub theta: f64,
    pub best: SweepRow,
    pub table: Vec<SweepRow>,
}

/// Counts for the rule "score > θ means anomalous".
pub fn confusion_at(normal: &[f64], anomalous: &[f64], theta: f64) -> ConfusionCounts {
    let tp = anomalous.iter().filter(|s| **s > theta).count() as u64;
    let fp = normal.iter().filter(|s| **s > theta).count() as u64;
    ConfusionCounts {
        tp,
        fp,
        fn_: anomalous.len() as u64 - tp,
        tn: normal.len() as u64 - fp,
    }
}

/// Sweeps θ over an even grid on `[min score, max score]` and picks the F1 maximum,
/// preferring the smallest θ among ties.
pub fn tune_threshold(
    normal: &[f64],
    anomalous: &[f64],
    grid: ThresholdGrid,
) -> Result<ThresholdSweep> {
    if normal.is_empty() || anomalous.is_empty() {
        return Err(Error::Argument("threshold tuning needs both score classes".into()));
    }
    if grid.points < 2 {
        return Err(Error::Argument("threshold grid needs at least 2 points".into()));
    }
    if normal.iter().chain(anomalous).any(|s| !s.is_finite()) {
        return Err(Error::Data("non-finite anomaly score".into()));
    }
    let (lo, hi) = normal
        .iter()
        .chain(anomalous)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(*s), hi.max(*s))
        });
    let step = (hi - lo) / (grid.points - 1) as f64;
    let mut table = Vec::with_capacity(grid.points);
    for k in 0..grid.points {
        let theta = if k + 1 == grid.points { hi } else { lo + step * k as f64 };
        let counts = confusion_at(normal, anomalous, theta);
        table.push(SweepRow {
            theta,
            counts,
            scores: classification_scores(&counts)?,
        });
    }
    let best = table
        .iter()
        .fold(table[0], |best, row| if row.scores.f1 > best.scores.f1 { *row } else { best });
    Ok(ThresholdSweep {
        theta: best.theta,
        best,
        table,
    })
}

impl ThresholdSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "theta,tp,fp,fn,tn,precision,recall,f1,accuracy,precision_undefined,recall_undefined\n",
        );
        for r in &self.table {
            let c = r.counts;
            let s = r.scores;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.theta,
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                s.precision,
                s.recall,
                s.f1,
                s.accuracy,
                s.precision_undefined,
                s.recall_undefined
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub dataset: String,
    pub seed: u64,
}

impl MetricRecord {
    pub fn new(metric: impl Into<String>, value: f64, dataset: impl Into<String>, seed: u64) -> Self {
        Self {
            metric: metric.into(),
            value,
            dataset: dataset.into(),
            seed,
        }
    }
}

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from("metric,value,dataset,seed\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.metric, r.value, r.dataset, r.seed);
    }
    out
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[(f64, f64)]) -> Vec<CurvePoint> {
        xs.iter().map(|&(t, v)| CurvePoint { t, v }).collect()
    }

    #[test]
    fn hand_values() {
        assert_eq!(prd(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 100.0);
        assert!((prd(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 70.71067811865476).abs() < 1e-12);
        assert!(matches!(prd(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Division(_))));
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.5355339059327378).abs() < 1e-15);
        assert_eq!(rmse(&[2.0], &[-1.5]).unwrap(), 3.5);
        assert!((mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(mape(&[0.0], &[1.0]), Err(Error::Division(_))));
        assert_eq!(cvrmse(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 100.0);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn frechet_reference() {
        let p = pts(&[(0.0, 0.0), (1.0, 1.0)]);
        let q = pts(&[(0.0, 0.0), (1.0, 3.0)]);
        assert_eq!(frechet_distance(&p, &q).unwrap(), 2.0);
        assert_eq!(frechet_distance(&p, &p).unwrap(), 0.0);
        assert!(frechet_distance(&p, &[]).is_err());
    }

    #[test]
    fn scores_and_undefined_flags() {
        let s = classification_scores(&ConfusionCounts { tp: 9, fp: 1, fn_: 1, tn: 9 }).unwrap();
        for v in [s.precision, s.recall, s.f1, s.accuracy] {
            assert!((v - 0.9).abs() < 1e-15);
        }
        let s = classification_scores(&ConfusionCounts { tp: 0, fp: 0, fn_: 3, tn: 5 }).unwrap();
        assert!(s.precision_undefined && !s.recall_undefined && s.f1 == 0.0);
        assert!(classification_scores(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn separable_sweep() {
        let sweep = tune_threshold(&[0.01, 0.012], &[0.03, 0.04], ThresholdGrid::default()).unwrap();
        assert_eq!(sweep.best.scores.f1, 1.0);
        assert!(sweep.theta >= 0.012 && sweep.theta < 0.03);
        let first = sweep.table.iter().position(|r| r.scores.f1 == 1.0).unwrap();
        assert_eq!(sweep.table[first].theta, sweep.theta);
        assert_eq!(sweep.table.len(), 512);
        assert_eq!(sweep.to_csv().lines().count(), 513);
    }
}
