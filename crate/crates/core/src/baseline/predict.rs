use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::markov::MarkovModel;
use crate::error::{Error, Result};
use crate::types::{Dataset, FeatureMatrix, LabelId, Segment, VideoAnnotation};

/// Per-label mean feature vector. `None` marks labels without training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub dim: usize,
    pub centroids: Vec<Option<Vec<f64>>>,
}

impl CentroidModel {
    pub fn validate(&self) -> Result<()> {
        for c in self.centroids.iter().flatten() {
            if c.len() != self.dim {
                return Err(Error::Model("centroid length differs from dim".into()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model("non-finite centroid".into()));
            }
        }
        if self.centroids.iter().all(Option::is_none) {
            return Err(Error::Model("no label has a centroid".into()));
        }
        Ok(())
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: features.cols(),
            });
        }
        Ok(())
    }

    /// Negative Euclidean distance to each centroid; `-inf` for absent labels.
    fn frame_scores(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.centroids) {
            *o = match c {
                Some(c) => -x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                None => f64::NEG_INFINITY,
            };
        }
    }

    /// Mean per-frame score over `seg`.
    fn segment_scores(&self, features: &FeatureMatrix, seg: &Segment) -> Vec<f64> {
        let k = self.centroids.len();
        let mut sum = vec![0.0; k];
        let mut frame = vec![0.0; k];
        for t in seg.range() {
            self.frame_scores(features.row(t), &mut frame);
            for (s, f) in sum.iter_mut().zip(&frame) {
                *s += f;
            }
        }
        let n = seg.len() as f64;
        sum.iter().map(|s| s / n).collect()
    }
}

/// Per-label feature means over every training frame.
pub fn fit_centroid(train: &Dataset) -> Result<CentroidModel> {
    let k = train.vocab().len();
    let mut dim = None;
    for v in train.videos() {
        let f = v
            .features()
            .ok_or_else(|| Error::Features(format!("video {} has no features", v.video_id())))?;
        match dim {
            None => dim = Some(f.cols()),
            Some(d) if d != f.cols() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: f.cols(),
                })
            }
            _ => {}
        }
    }
    let dim = dim.ok_or_else(|| Error::Model("cannot fit on an empty training set".into()))?;
    // per-video partial sums, combined in video order so the result is
    // independent of scheduling
    let partials: Vec<(Vec<Vec<f64>>, Vec<u64>)> = train
        .videos()
        .par_iter()
        .map(|v| {
            let f = v.features().expect("checked above");
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0u64; k];
            for (t, l) in v.frame_labels().iter().enumerate() {
                counts[l.index()] += 1;
                for (s, x) in sums[l.index()].iter_mut().zip(f.row(t)) {
                    *s += x;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0u64; k];
    for (s, c) in partials {
        for l in 0..k {
            counts[l] += c[l];
            for (a, b) in sums[l].iter_mut().zip(&s[l]) {
                *a += b;
            }
        }
    }
    let centroids = sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    let model = CentroidModel { dim, centroids };
    model.validate()?;
    Ok(model)
}

/// How the first segment is labelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstLabel {
    /// Argmax of the initial distribution (combined with visual evidence in the hybrid).
    #[default]
    Argmax,
    /// The ground-truth label of the first segment.
    GroundTruth,
    Given(LabelId),
}

/// Which label the transition prior conditions on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// The label predicted for the previous segment.
    #[default]
    Predicted,
    /// The ground-truth label of the previous segment.
    GroundTruth,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub first: FirstLabel,
    pub conditioning: Conditioning,
}

/// Index of the largest score, lowest index on ties. NaN never wins.
fn argmax(scores: &[f64]) -> LabelId {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    LabelId::from_index(best)
}

fn fill(segments: &[Segment], labels: &[LabelId], frames: usize) -> Result<Vec<LabelId>> {
    let mut out = Vec::with_capacity(frames);
    let mut t = 0;
    for (seg, &l) in segments.iter().zip(labels) {
        if seg.start != t {
            return Err(Error::NonTiling(format!("segment starts at {} instead of {t}", seg.start)));
        }
        out.extend(std::iter::repeat_n(l, seg.len()));
        t = seg.end;
    }
    if t != frames || segments.is_empty() {
        return Err(Error::NonTiling(format!("segments cover {t} of {frames} frames")));
    }
    Ok(out)
}

/// Shared decoder: `prior` receives the conditioning label (or `None` for the
/// first segment) and `visual` the segment index.
fn decode(
    segments: &[Segment],
    frames: usize,
    k: usize,
    options: DecodeOptions,
    mut prior: impl FnMut(Option<LabelId>, &mut [f64]),
    mut visual: impl FnMut(usize, &mut [f64]),
) -> Result<Vec<LabelId>> {
    let mut labels = Vec::with_capacity(segments.len());
    let mut scores = vec![0.0; k];
    for (j, seg) in segments.iter().enumerate() {
        let label = if j == 0 {
            match options.first {
                FirstLabel::GroundTruth => Some(seg.label),
                FirstLabel::Given(l) => Some(l),
                FirstLabel::Argmax => None,
            }
        } else {
            None
        };
        let label = match label {
            Some(l) => {
                if l.index() >= k {
                    return Err(Error::UnknownLabelId { id: l.0, k });
                }
                l
            }
            None => {
                let cond = (j > 0).then(|| match options.conditioning {
                    Conditioning::Predicted => labels[j - 1],
                    Conditioning::GroundTruth => segments[j - 1].label,
                });
                scores.fill(0.0);
                prior(cond, &mut scores);
                visual(j, &mut scores);
                argmax(&scores)
            }
        };
        labels.push(label);
    }
    fill(segments, &labels, frames)
}

fn log_prior(markov: &MarkovModel, cond: Option<LabelId>, weight: f64, scores: &mut [f64]) {
    let probs = match cond {
        Some(prev) => &markov.transition[prev.index()],
        None => &markov.initial,
    };
    for (s, p) in scores.iter_mut().zip(probs) {
        *s += weight * p.ln();
    }
}

fn check_markov(markov: &MarkovModel, segments: &[Segment]) -> Result<()> {
    for seg in segments {
        if seg.label.index() >= markov.k {
            return Err(Error::UnknownLabelId { id: seg.label.0, k: markov.k });
        }
    }
    Ok(())
}

/// Labels each ground-truth segment by the most probable successor of the
/// previous label, never looking at features.
pub fn predict_ordinal(
    markov: &MarkovModel,
    segments: &[Segment],
    frames: usize,
    options: DecodeOptions,
) -> Result<Vec<LabelId>> {
    check_markov(markov, segments)?;
    decode(
        segments,
        frames,
        markov.k,
        options,
        |cond, s| log_prior(markov, cond, 1.0, s),
        |_, _| {},
    )
}

/// Nearest centroid per frame.
pub fn predict_visual(centroid: &CentroidModel, features: &FeatureMatrix) -> Result<Vec<LabelId>> {
    centroid.check_dim(features)?;
    let mut scores = vec![0.0; centroid.centroids.len()];
    Ok((0..features.rows())
        .map(|t| {
            centroid.frame_scores(features.row(t), &mut scores);
            argmax(&scores)
        })
        .collect())
}

/// Per segment, the label with the best mean visual score.
pub fn predict_visual_segments(
    centroid: &CentroidModel,
    features: &FeatureMatrix,
    segments: &[Segment],
) -> Result<Vec<LabelId>> {
    centroid.check_dim(features)?;
    check_rows(features, segments)?;
    let k = centroid.centroids.len();
    let options = DecodeOptions::default();
    decode(segments, features.rows(), k, options, |_, _| {}, |j, s| {
        s.copy_from_slice(&centroid.segment_scores(features, &segments[j]));
    })
}

fn check_rows(features: &FeatureMatrix, segments: &[Segment]) -> Result<()> {
    match segments.last() {
        Some(last) if last.end == features.rows() => Ok(()),
        _ => Err(Error::NonTiling(format!(
            "segments do not cover the {} feature rows",
            features.rows()
        ))),
    }
}

/// Per segment, argmax of `alpha·log P(ℓ | prev) + (1 − alpha)·visual(ℓ)`.
/// `alpha = 1` reproduces [`predict_ordinal`] and `alpha = 0`
/// [`predict_visual_segments`] exactly.
pub fn predict_hybrid(
    markov: &MarkovModel,
    centroid: &CentroidModel,
    alpha: f64,
    features: &FeatureMatrix,
    segments: &[Segment],
    options: DecodeOptions,
) -> Result<Vec<LabelId>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in [0, 1]")));
    }
    if markov.k != centroid.centroids.len() {
        return Err(Error::DimensionMismatch {
            expected: markov.k,
            actual: centroid.centroids.len(),
        });
    }
    centroid.check_dim(features)?;
    check_rows(features, segments)?;
    check_markov(markov, segments)?;
    // a zero weight drops its term entirely so that 0·(−inf) never occurs
    decode(
        segments,
        features.rows(),
        markov.k,
        options,
        |cond, s| {
            if alpha > 0.0 {
                log_prior(markov, cond, alpha, s)
            }
        },
        |j, s| {
            if alpha < 1.0 {
                let visual = centroid.segment_scores(features, &segments[j]);
                for (a, v) in s.iter_mut().zip(visual) {
                    *a += (1.0 - alpha) * v;
                }
            }
        },
    )
}

/// A fitted predictor ready to run over videos.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Ordinal {
        markov: &'a MarkovModel,
        options: DecodeOptions,
    },
    Visual {
        centroid: &'a CentroidModel,
    },
    Hybrid {
        markov: &'a MarkovModel,
        centroid: &'a CentroidModel,
        alpha: f64,
        options: DecodeOptions,
    },
}

impl Predictor<'_> {
    pub fn predict(&self, video: &VideoAnnotation) -> Result<Vec<LabelId>> {
        let features = || {
            video
                .features()
                .ok_or_else(|| Error::Features(format!("video {} has no features", video.video_id())))
        };
        match *self {
            Predictor::Ordinal { markov, options } => {
                predict_ordinal(markov, video.segments(), video.len(), options)
            }
            Predictor::Visual { centroid } => predict_visual(centroid, features()?),
            Predictor::Hybrid {
                markov,
                centroid,
                alpha,
                options,
            } => predict_hybrid(markov, centroid, alpha, features()?, video.segments(), options),
        }
    }

    /// Predictions for every video of `dataset`, computed in parallel.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<BTreeMap<String, Vec<LabelId>>> {
        dataset
            .videos()
            .par_iter()
            .map(|v| Ok((v.video_id().to_string(), self.predict(v)?)))
            .collect()
    }
}
