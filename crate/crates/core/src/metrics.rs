//! Scoring of frame-level predictions.
//!
//! Edit score and F1@k follow the definitions used by the common temporal
//! action segmentation evaluation scripts: segments are maximal label runs,
//! optionally with background segments dropped before comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PredictionSet;
use crate::manipulate::ManipulationRecord;
use crate::report::{csv_field, fmt_num};
use crate::types::{segments_of, Dataset, LabelId, LabelVocab, Segment};

/// Overlap thresholds reported by default.
pub const F1_THRESHOLDS: [u32; 3] = [10, 25, 50];

fn check_lengths(pred: &[LabelId], gt: &[LabelId]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::SequenceLength {
            left: pred.len(),
            right: gt.len(),
        });
    }
    Ok(())
}

/// Percentage of frames whose predicted label equals the ground truth.
pub fn frame_accuracy(pred: &[LabelId], gt: &[LabelId]) -> Result<f64> {
    check_lengths(pred, gt)?;
    if gt.is_empty() {
        return Err(Error::EmptyLabelSequence);
    }
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(100.0 * correct as f64 / gt.len() as f64)
}

/// Frame counts `(correct, scored)`; frames whose ground truth is `ignore`
/// are not scored.
pub fn frame_counts(pred: &[LabelId], gt: &[LabelId], ignore: Option<LabelId>) -> Result<(u64, u64)> {
    check_lengths(pred, gt)?;
    let mut correct = 0;
    let mut scored = 0;
    for (p, g) in pred.iter().zip(gt) {
        if Some(*g) == ignore {
            continue;
        }
        scored += 1;
        correct += u64::from(p == g);
    }
    Ok((correct, scored))
}

/// Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(x != y);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn scored_segments(labels: &[LabelId], ignore: Option<LabelId>) -> Vec<Segment> {
    segments_of(labels)
        .unwrap_or_default()
        .into_iter()
        .filter(|s| Some(s.label) != ignore)
        .collect()
}

/// `100 × (1 − lev / max(|pred segs|, |gt segs|))`. Two empty segment
/// sequences score 100.
pub fn edit_score(pred: &[LabelId], gt: &[LabelId], ignore: Option<LabelId>) -> f64 {
    let p: Vec<LabelId> = scored_segments(pred, ignore).iter().map(|s| s.label).collect();
    let g: Vec<LabelId> = scored_segments(gt, ignore).iter().map(|s| s.label).collect();
    let longest = p.len().max(g.len());
    if longest == 0 {
        return 100.0;
    }
    let score = 100.0 * (1.0 - levenshtein(&p, &g) as f64 / longest as f64);
    score.clamp(0.0, 100.0)
}

/// True positives, false positives and false negatives at overlap `k/100`.
pub fn overlap_counts(pred: &[LabelId], gt: &[LabelId], k: u32, ignore: Option<LabelId>) -> Result<(u64, u64, u64)> {
    if !(1..=100).contains(&k) {
        return Err(Error::InvalidArgument(format!("overlap threshold {k} not in 1..=100")));
    }
    let threshold = f64::from(k) / 100.0;
    let p = scored_segments(pred, ignore);
    let g = scored_segments(gt, ignore);
    let mut hit = vec![false; g.len()];
    let (mut tp, mut fp) = (0u64, 0u64);
    for seg in &p {
        let mut best: Option<(usize, f64)> = None;
        for (i, truth) in g.iter().enumerate().filter(|(_, t)| t.label == seg.label) {
            let inter = seg.end.min(truth.end) as f64 - seg.start.max(truth.start) as f64;
            let union = seg.end.max(truth.end) as f64 - seg.start.min(truth.start) as f64;
            let iou = inter / union;
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        match best {
            Some((i, iou)) if iou >= threshold && !hit[i] => {
                hit[i] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    let fn_ = hit.iter().filter(|h| !**h).count() as u64;
    Ok((tp, fp, fn_))
}

/// Segmental F1 at overlap threshold `k/100`, as a percentage. Two empty
/// segment sequences score 100.
pub fn f1_at_k(pred: &[LabelId], gt: &[LabelId], k: u32, ignore: Option<LabelId>) -> Result<f64> {
    let (tp, fp, fn_) = overlap_counts(pred, gt, k, ignore)?;
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * (2 * tp) as f64 / denom as f64)
}

/// Whether background frames and segments take part in scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub include_background: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            include_background: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VideoScores {
    pub accuracy: f64,
    pub edit: f64,
    #[serde(rename = "f1@10")]
    pub f1_10: f64,
    #[serde(rename = "f1@25")]
    pub f1_25: f64,
    #[serde(rename = "f1@50")]
    pub f1_50: f64,
}

impl VideoScores {
    fn values(&self) -> [f64; 5] {
        [self.accuracy, self.edit, self.f1_10, self.f1_25, self.f1_50]
    }

    fn from_values(v: [f64; 5]) -> Self {
        VideoScores {
            accuracy: v[0],
            edit: v[1],
            f1_10: v[2],
            f1_25: v[3],
            f1_50: v[4],
        }
    }

    pub fn mean<'a>(scores: impl IntoIterator<Item = &'a VideoScores>) -> Option<VideoScores> {
        let mut sum = [0.0; 5];
        let mut n = 0usize;
        for s in scores {
            for (acc, v) in sum.iter_mut().zip(s.values()) {
                *acc += v;
            }
            n += 1;
        }
        (n > 0).then(|| VideoScores::from_values(sum.map(|v| v / n as f64)))
    }
}

pub fn score_video(pred: &[LabelId], gt: &[LabelId], ignore: Option<LabelId>) -> Result<(VideoScores, u64, u64)> {
    let (correct, scored) = frame_counts(pred, gt, ignore)?;
    let accuracy = if scored == 0 {
        100.0
    } else {
        100.0 * correct as f64 / scored as f64
    };
    Ok((
        VideoScores {
            accuracy,
            edit: edit_score(pred, gt, ignore),
            f1_10: f1_at_k(pred, gt, F1_THRESHOLDS[0], ignore)?,
            f1_25: f1_at_k(pred, gt, F1_THRESHOLDS[1], ignore)?,
            f1_50: f1_at_k(pred, gt, F1_THRESHOLDS[2], ignore)?,
        },
        correct,
        scored,
    ))
}

/// Per-video and averaged scores for one evaluation (usually one fold).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold: Option<String>,
    pub per_video: BTreeMap<String, VideoScores>,
    /// Unweighted mean over evaluated videos (over folds after aggregation).
    pub aggregate: VideoScores,
    pub frames_scored: u64,
    pub frames_correct: u64,
    /// Accuracy pooled over all scored frames.
    pub frame_weighted_accuracy: f64,
    /// Requested videos that had no prediction.
    pub missing: Vec<String>,
}

impl EvalReport {
    pub fn per_video_csv(&self) -> String {
        let mut out = String::from("video_id,accuracy,edit,f1@10,f1@25,f1@50\n");
        for (id, s) in &self.per_video {
            out.push_str(&csv_field(id));
            for v in s.values() {
                out.push(',');
                out.push_str(&fmt_num(v));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores the predictions of `videos` (all dataset videos when `None`).
pub fn evaluate(
    dataset: &Dataset,
    predictions: &PredictionSet,
    videos: Option<&[String]>,
    fold: Option<&str>,
    options: MetricOptions,
) -> Result<EvalReport> {
    let ignore = if options.include_background {
        None
    } else {
        dataset.vocab().background()
    };
    let ids: Vec<&str> = match videos {
        Some(ids) => ids.iter().map(String::as_str).collect(),
        None => dataset.videos().iter().map(|v| v.video_id()).collect(),
    };
    let mut per_video = BTreeMap::new();
    let mut missing = Vec::new();
    let (mut correct, mut scored) = (0u64, 0u64);
    for id in ids {
        let gt = dataset.video(id).ok_or_else(|| Error::UnknownVideo(id.to_string()))?;
        let Some(pred) = predictions.get(id) else {
            missing.push(id.to_string());
            continue;
        };
        if pred.len() != gt.len() {
            return Err(Error::LengthMismatch {
                video_id: id.to_string(),
                pred: pred.len(),
                gt: gt.len(),
            });
        }
        let (scores, c, s) = score_video(pred, gt.frame_labels(), ignore)?;
        correct += c;
        scored += s;
        per_video.insert(id.to_string(), scores);
    }
    let aggregate = VideoScores::mean(per_video.values())
        .ok_or_else(|| Error::InvalidArgument("no predictions to evaluate".into()))?;
    missing.sort();
    Ok(EvalReport {
        fold: fold.map(str::to_string),
        per_video,
        aggregate,
        frames_scored: scored,
        frames_correct: correct,
        frame_weighted_accuracy: if scored == 0 { 100.0 } else { 100.0 * correct as f64 / scored as f64 },
        missing,
    })
}

/// Unweighted mean of fold aggregates.
pub fn cv_aggregate(folds: &[EvalReport]) -> Result<EvalReport> {
    let aggregate = VideoScores::mean(folds.iter().map(|r| &r.aggregate))
        .ok_or_else(|| Error::InvalidArgument("no fold reports to aggregate".into()))?;
    let mut per_video = BTreeMap::new();
    let mut missing = Vec::new();
    for r in folds {
        per_video.extend(r.per_video.iter().map(|(k, v)| (k.clone(), *v)));
        missing.extend(r.missing.iter().cloned());
    }
    missing.sort();
    missing.dedup();
    let frames_scored: u64 = folds.iter().map(|r| r.frames_scored).sum();
    let frames_correct: u64 = folds.iter().map(|r| r.frames_correct).sum();
    Ok(EvalReport {
        fold: match folds {
            [single] => single.fold.clone(),
            _ => None,
        },
        per_video,
        aggregate,
        frames_scored,
        frames_correct,
        frame_weighted_accuracy: if frames_scored == 0 {
            100.0
        } else {
            100.0 * frames_correct as f64 / frames_scored as f64
        },
        missing,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedCounts {
    pub frames_total: u64,
    pub predicted_no_action: u64,
    pub predicted_original_label: u64,
    pub predicted_other: u64,
}

impl MaskedCounts {
    fn add(&mut self, other: &MaskedCounts) {
        self.frames_total += other.frames_total;
        self.predicted_no_action += other.predicted_no_action;
        self.predicted_original_label += other.predicted_original_label;
        self.predicted_other += other.predicted_other;
    }

    /// Share of masked frames predicted as the label that was masked out.
    pub fn original_label_fraction(&self) -> f64 {
        if self.frames_total == 0 {
            0.0
        } else {
            self.predicted_original_label as f64 / self.frames_total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInterval {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
    pub original_label: LabelId,
    pub counts: MaskedCounts,
}

/// Per-label frame counts inside masked regions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub original: u64,
    pub masked_gt: u64,
    pub predicted: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedRegionReport {
    pub intervals: Vec<MaskedInterval>,
    pub totals: MaskedCounts,
    pub label_counts: BTreeMap<LabelId, LabelCounts>,
}

impl MaskedRegionReport {
    pub fn merge(mut self, other: MaskedRegionReport) -> MaskedRegionReport {
        self.totals.add(&other.totals);
        self.intervals.extend(other.intervals);
        for (label, c) in other.label_counts {
            let e = self.label_counts.entry(label).or_default();
            e.original += c.original;
            e.masked_gt += c.masked_gt;
            e.predicted += c.predicted;
        }
        self
    }

    pub fn intervals_csv(&self, vocab: &LabelVocab) -> String {
        let mut out = String::from(
            "video_id,start,end,original_label,frames_total,predicted_no_action,predicted_original_label,predicted_other\n",
        );
        for i in &self.intervals {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(&i.video_id),
                i.start,
                i.end,
                csv_field(vocab.name(i.original_label)),
                i.counts.frames_total,
                i.counts.predicted_no_action,
                i.counts.predicted_original_label,
                i.counts.predicted_other
            ));
        }
        out
    }

    /// One row per label: counts in the original labels, the masked ground
    /// truth and the predictions, all restricted to masked frames.
    pub fn labels_csv(&self, vocab: &LabelVocab) -> String {
        let mut out = String::from("label,original_count,masked_gt_count,predicted_count\n");
        for id in vocab.ids() {
            let c = self.label_counts.get(&id).copied().unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(vocab.name(id)),
                c.original,
                c.masked_gt,
                c.predicted
            ));
        }
        out
    }
}

/// Breaks down predictions inside the masked intervals of `record`.
pub fn masked_region_report(
    pred: &[LabelId],
    original_gt: &[LabelId],
    masked_gt: &[LabelId],
    record: &ManipulationRecord,
) -> Result<MaskedRegionReport> {
    check_lengths(pred, original_gt)?;
    check_lengths(pred, masked_gt)?;
    let mut report = MaskedRegionReport::default();
    for seg in record.masked_segments() {
        if seg.end > pred.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: masked interval [{}, {}) exceeds {} frames",
                record.video_id,
                seg.start,
                seg.end,
                pred.len()
            )));
        }
        let mut counts = MaskedCounts::default();
        for t in seg.range() {
            counts.frames_total += 1;
            if pred[t] == masked_gt[t] {
                counts.predicted_no_action += 1;
            } else if pred[t] == original_gt[t] {
                counts.predicted_original_label += 1;
            } else {
                counts.predicted_other += 1;
            }
            report.label_counts.entry(original_gt[t]).or_default().original += 1;
            report.label_counts.entry(masked_gt[t]).or_default().masked_gt += 1;
            report.label_counts.entry(pred[t]).or_default().predicted += 1;
        }
        report.totals.add(&counts);
        report.intervals.push(MaskedInterval {
            video_id: record.video_id.clone(),
            start: seg.start,
            end: seg.end,
            original_label: seg.label,
            counts,
        });
    }
    Ok(report)
}

/// Masked-region breakdown over every record whose video has a prediction.
/// Original labels are restored from the records.
pub fn masked_region_report_for(
    masked: &Dataset,
    predictions: &PredictionSet,
    records: &[ManipulationRecord],
) -> Result<MaskedRegionReport> {
    let mut report = MaskedRegionReport::default();
    for record in records {
        let gt = masked
            .video(&record.video_id)
            .ok_or_else(|| Error::UnknownVideo(record.video_id.clone()))?;
        let Some(pred) = predictions.get(&record.video_id) else {
            continue;
        };
        let original = record.restore_labels(gt.frame_labels())?;
        report = report.merge(masked_region_report(pred, &original, gt.frame_labels(), record)?);
    }
    Ok(report)
}

/// Frame counts per label id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram(pub Vec<u64>);

impl LabelHistogram {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.0.iter().map(|&n| n as f64 / total).collect()
    }
}

pub fn label_distribution(labels: &[LabelId], k: usize) -> LabelHistogram {
    let mut counts = vec![0u64; k];
    for l in labels {
        counts[l.index()] += 1;
    }
    LabelHistogram(counts)
}

pub fn dataset_label_distribution(dataset: &Dataset) -> LabelHistogram {
    let k = dataset.vocab().len();
    let mut counts = vec![0u64; k];
    for v in dataset.videos() {
        for l in v.frame_labels() {
            counts[l.index()] += 1;
        }
    }
    LabelHistogram(counts)
}

/// Total-variation distance between two normalized histograms.
pub fn distribution_distance(p: &LabelHistogram, q: &LabelHistogram) -> Result<f64> {
    if p.0.len() != q.0.len() {
        return Err(Error::DimensionMismatch {
            expected: p.0.len(),
            actual: q.0.len(),
        });
    }
    if p.total() == 0 || q.total() == 0 {
        return Err(Error::EmptyHistogram);
    }
    let (p, q) = (p.normalized(), q.normalized());
    Ok(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}
