//! Pixel-wise confusion accounting and the five detection metrics:
//! accuracy, precision, recall, F-score (in its 2TP^2 form), and IOU.
//!
//! Split-level evaluation micro-averages: confusion counts pool over all
//! frames before the metrics are computed; a per-frame table is kept for
//! diagnosis.

use thiserror::Error;

use crate::dataset::Sample;
use crate::model::{ModelError, OffNet, CLASS_TRAVERSABLE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: prediction has {pred} pixels, ground truth {gt}")]
    ShapeMismatch { pred: usize, gt: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// TP/FP/FN/TN pixel tallies; positive class = traversable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Counts merge by addition, so any reduction order is valid.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }
}

pub fn confusion_counts(pred: &[bool], gt: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// The five metrics. `degenerate` flags any 0/0 denominator, which reports
/// as value 0 so that ordering for checkpoint selection stays total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub iou: f64,
    pub degenerate: bool,
}

pub fn metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(EvalError::Degenerate(
            "metrics over zero evaluated pixels".into(),
        ));
    }
    let (tp, fp, fn_, tn) = (
        c.true_pos as f64,
        c.false_pos as f64,
        c.false_neg as f64,
        c.true_neg as f64,
    );
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let accuracy = ratio(tp + tn, tp + tn + fp + fn_);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f_score = ratio(2.0 * tp * tp, 2.0 * tp * tp + tp * (fp + fn_));
    let iou = ratio(tp, tp + fp + fn_);
    Ok(MetricReport {
        accuracy,
        precision,
        recall,
        f_score,
        iou,
        degenerate,
    })
}

#[derive(Debug, Clone)]
pub struct FrameEvaluation {
    pub sequence_id: String,
    pub frame_id: String,
    pub counts: ConfusionCounts,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct SplitEvaluation {
    pub pooled_counts: ConfusionCounts,
    pub pooled: MetricReport,
    pub frames: Vec<FrameEvaluation>,
}

/// Threshold the traversable-class probabilities of one forward pass.
pub fn threshold_prediction(probs: &[f32], pixels: usize, threshold: f32) -> Vec<bool> {
    probs[CLASS_TRAVERSABLE * pixels..(CLASS_TRAVERSABLE + 1) * pixels]
        .iter()
        .map(|&p| p >= threshold)
        .collect()
}

/// Evaluate prepared samples: per-frame counts plus micro-averaged metrics.
pub fn evaluate_samples(
    model: &OffNet,
    samples: &[Sample],
    threshold: f32,
) -> Result<SplitEvaluation> {
    if samples.is_empty() {
        return Err(EvalError::Degenerate("evaluation split is empty".into()));
    }
    let mut pooled_counts = ConfusionCounts::default();
    let mut frames = Vec::with_capacity(samples.len());
    for sample in samples {
        let probs = model.forward(&sample.image, &sample.normals)?;
        let pixels = sample.gt.width * sample.gt.height;
        let pred = threshold_prediction(&probs.data(), pixels, threshold);
        let counts = confusion_counts(&pred, sample.gt.binary())?;
        pooled_counts.merge(&counts);
        frames.push(FrameEvaluation {
            sequence_id: sample.sequence_id.clone(),
            frame_id: sample.frame_id.clone(),
            counts,
            report: metrics(&counts)?,
        });
    }
    Ok(SplitEvaluation {
        pooled_counts,
        pooled: metrics(&pooled_counts)?,
        frames,
    })
}

/// Aligned plain-text table: pooled metrics plus one row per frame.
pub fn format_report(eval: &SplitEvaluation) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "frame", "accuracy", "precision", "recall", "f_score", "iou"
    ));
    let row = |name: &str, m: &MetricReport| {
        format!(
            "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}{}\n",
            name,
            m.accuracy,
            m.precision,
            m.recall,
            m.f_score,
            m.iou,
            if m.degenerate { " (degenerate)" } else { "" }
        )
    };
    for f in &eval.frames {
        out.push_str(&row(
            &format!("{}/{}", f.sequence_id, f.frame_id),
            &f.report,
        ));
    }
    out.push_str(&row("ALL (micro)", &eval.pooled));
    out
}

/// Machine-readable CSV: one line per frame plus a pooled `ALL` line.
pub fn to_csv(eval: &SplitEvaluation) -> String {
    let mut out = String::from("frame_id,tp,fp,fn,tn,accuracy,precision,recall,f_score,iou\n");
    let line = |name: &str, c: &ConfusionCounts, m: &MetricReport| {
        format!(
            "{name},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            c.true_pos,
            c.false_pos,
            c.false_neg,
            c.true_neg,
            m.accuracy,
            m.precision,
            m.recall,
            m.f_score,
            m.iou
        )
    };
    for f in &eval.frames {
        out.push_str(&line(
            &format!("{}/{}", f.sequence_id, f.frame_id),
            &f.counts,
            &f.report,
        ));
    }
    out.push_str(&line("ALL", &eval.pooled_counts, &eval.pooled));
    out
}
