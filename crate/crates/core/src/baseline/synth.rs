//! Synthetic datasets with planted ordinal bias.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, FeatureMatrix, FloatDtype, LabelId, LabelVocab, SeedSpec, Split, VideoAnnotation};

/// Name of the reserved label 0. It never occurs in generated walks and is
/// the target of masking.
pub const SYNTH_BACKGROUND: &str = "background";

/// `prev` is followed by `next` with probability `follow_prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub prev: String,
    pub next: String,
    pub follow_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Label count including the background label.
    pub labels: usize,
    pub videos: usize,
    /// Inclusive range of segments per video.
    pub segments_per_video: (usize, usize),
    pub duration_mean: f64,
    pub duration_sigma: f64,
    pub dominant_pairs: Vec<PlantedPair>,
    pub feature_dim: usize,
    /// Distance between any two class centroids.
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub folds: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            labels: 8,
            videos: 400,
            segments_per_video: (6, 10),
            duration_mean: 20.0,
            duration_sigma: 5.0,
            dominant_pairs: vec![PlantedPair {
                prev: "A".into(),
                next: "B".into(),
                follow_prob: 0.95,
            }],
            feature_dim: 16,
            class_separation: 40.0,
            noise_sigma: 1.0,
            seed: 0,
            folds: 4,
        }
    }
}

/// Names used by the generator: background, then `A`, `B`, …
pub fn synth_label_names(labels: usize) -> Vec<String> {
    std::iter::once(SYNTH_BACKGROUND.to_string())
        .chain((1..labels).map(|i| {
            if labels <= 27 {
                char::from(b'A' + (i - 1) as u8).to_string()
            } else {
                format!("L{i}")
            }
        }))
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.labels < 3 {
            return bad(format!("need at least 3 labels, got {}", self.labels));
        }
        if self.feature_dim < 2 {
            return bad(format!("feature dimension must be at least 2, got {}", self.feature_dim));
        }
        if self.videos == 0 {
            return bad("need at least one video".into());
        }
        let (lo, hi) = self.segments_per_video;
        if lo == 0 || lo > hi {
            return bad(format!("invalid segments-per-video range {lo}..={hi}"));
        }
        if !(self.duration_mean >= 1.0 && self.duration_mean.is_finite()) {
            return bad(format!("duration mean must be at least 1, got {}", self.duration_mean));
        }
        if !(self.duration_sigma >= 0.0 && self.duration_sigma.is_finite()) {
            return bad(format!("invalid duration sigma {}", self.duration_sigma));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("invalid noise sigma {}", self.noise_sigma));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return bad(format!("invalid class separation {}", self.class_separation));
        }
        if self.folds < 2 || self.folds > self.videos {
            return bad(format!("folds must be in 2..={}, got {}", self.videos, self.folds));
        }
        self.resolve_pairs().map(|_| ())
    }

    /// Dominant successor per label id.
    fn resolve_pairs(&self) -> Result<BTreeMap<LabelId, (LabelId, f64)>> {
        let names = synth_label_names(self.labels);
        let vocab = LabelVocab::new(names)?;
        let mut out = BTreeMap::new();
        for p in &self.dominant_pairs {
            let lookup = |name: &str| {
                vocab
                    .id(name)
                    .filter(|id| id.0 != 0)
                    .ok_or_else(|| Error::InvalidArgument(format!("label {name} is not one of the {} walk labels", self.labels - 1)))
            };
            let (a, b) = (lookup(&p.prev)?, lookup(&p.next)?);
            if a == b {
                return Err(Error::InvalidArgument(format!("pair ({}, {}) repeats a label", p.prev, p.next)));
            }
            if !(0.0..=1.0).contains(&p.follow_prob) {
                return Err(Error::InvalidArgument(format!("follow probability {} not in [0, 1]", p.follow_prob)));
            }
            if out.insert(a, (b, p.follow_prob)).is_some() {
                return Err(Error::InvalidArgument(format!("label {} has two planted successors", p.prev)));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTally {
    pub prev: String,
    pub next: String,
    pub count: u64,
}

/// What the generator actually drew.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthBookkeeping {
    pub config: SynthConfig,
    /// Segment bigram counts, sorted by pair.
    pub pair_counts: Vec<PairTally>,
    pub segments: u64,
    pub frames: u64,
    pub centroids: Vec<Vec<f64>>,
}

/// Centroids at pairwise distance `class_separation`: scaled axes when
/// `D ≥ K`, otherwise seeded random directions on the same sphere.
fn centroids(config: &SynthConfig) -> Vec<Vec<f64>> {
    let k = config.labels;
    let d = config.feature_dim;
    let radius = config.class_separation / std::f64::consts::SQRT_2;
    if d >= k {
        return (0..k)
            .map(|i| (0..d).map(|j| if i == j { radius } else { 0.0 }).collect())
            .collect();
    }
    let mut rng = SeedSpec::new(config.seed).rng("\0centroids");
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| radius * x / norm).collect()
        })
        .collect()
}

struct Walk {
    labels: Vec<LabelId>,
    pairs: Vec<(LabelId, LabelId)>,
}

fn walk(
    config: &SynthConfig,
    planted: &BTreeMap<LabelId, (LabelId, f64)>,
    rng: &mut impl Rng,
) -> Result<Walk> {
    let walk_labels: Vec<LabelId> = (1..config.labels).map(LabelId::from_index).collect();
    let (lo, hi) = config.segments_per_video;
    let n = rng.random_range(lo..=hi);
    let durations = Normal::new(config.duration_mean, config.duration_sigma)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut labels = Vec::new();
    let mut pairs = Vec::with_capacity(n);
    let mut prev: Option<LabelId> = None;
    for _ in 0..n {
        let label = match prev {
            None => walk_labels[rng.random_range(0..walk_labels.len())],
            Some(a) => {
                let planted_next = planted.get(&a).copied();
                match planted_next {
                    Some((b, p)) if rng.random::<f64>() < p => b,
                    _ => {
                        let avoid = planted_next.map(|(b, _)| b);
                        let choices: Vec<LabelId> = walk_labels
                            .iter()
                            .copied()
                            .filter(|&l| l != a && Some(l) != avoid)
                            .collect();
                        if choices.is_empty() {
                            avoid.expect("at least two walk labels")
                        } else {
                            choices[rng.random_range(0..choices.len())]
                        }
                    }
                }
            }
        };
        if let Some(a) = prev {
            pairs.push((a, label));
        }
        let len = loop {
            let d = durations.sample(rng).round();
            if d >= 1.0 {
                break d as usize;
            }
        };
        labels.extend(std::iter::repeat_n(label, len));
        prev = Some(label);
    }
    Ok(Walk { labels, pairs })
}

/// Generates the dataset and the generator's own tallies.
pub fn gen_synthetic(config: &SynthConfig) -> Result<(Dataset, SynthBookkeeping)> {
    config.validate()?;
    let planted = config.resolve_pairs()?;
    let vocab = LabelVocab::new(synth_label_names(config.labels))?.with_background(Some(LabelId(0)))?;
    let centroids = centroids(config);
    let seeds = SeedSpec::new(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let ids: Vec<String> = (0..config.videos).map(|i| format!("synth_{i:04}")).collect();
    let generated: Vec<(VideoAnnotation, Vec<(LabelId, LabelId)>)> = ids
        .par_iter()
        .map(|id| {
            let mut rng = seeds.rng(id);
            let w = walk(config, &planted, &mut rng)?;
            let d = config.feature_dim;
            let mut values = Vec::with_capacity(w.labels.len() * d);
            for l in &w.labels {
                for c in &centroids[l.index()] {
                    values.push(c + noise.sample(&mut rng));
                }
            }
            let features = FeatureMatrix::new(w.labels.len(), d, values, FloatDtype::F32)?;
            let video = VideoAnnotation::new(id.as_str(), w.labels, &vocab)?.with_features(Some(Arc::new(features)))?;
            Ok((video, w.pairs))
        })
        .collect::<Result<_>>()?;

    let mut counts: BTreeMap<(LabelId, LabelId), u64> = BTreeMap::new();
    let mut videos = Vec::with_capacity(generated.len());
    for (video, pairs) in generated {
        for p in pairs {
            *counts.entry(p).or_default() += 1;
        }
        videos.push(video);
    }
    let splits = (0..config.folds)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = ids.iter().enumerate().partition(|(i, _)| i % config.folds == f);
            Split {
                name: format!("split{}", f + 1),
                train: train.into_iter().map(|(_, id)| id.clone()).collect(),
                test: test.into_iter().map(|(_, id)| id.clone()).collect(),
            }
        })
        .collect();
    let dataset = Dataset::new("synthetic", vocab.clone(), videos, splits)?;
    let bookkeeping = SynthBookkeeping {
        config: config.clone(),
        pair_counts: counts
            .into_iter()
            .map(|((a, b), count)| PairTally {
                prev: vocab.name(a).to_string(),
                next: vocab.name(b).to_string(),
                count,
            })
            .collect(),
        segments: dataset.total_segments() as u64,
        frames: dataset.total_frames() as u64,
        centroids,
    };
    Ok((dataset, bookkeeping))
}

/// Two-segment videos `[a, b]`, one per requested pair occurrence, so that
/// the bigram histogram equals `pairs` exactly.
pub fn planted_pair_dataset(names: &[&str], pairs: &[((usize, usize), u64)]) -> Result<Dataset> {
    let vocab = LabelVocab::new(names.iter().copied())?;
    let mut videos = Vec::new();
    for &((a, b), n) in pairs {
        if a == b {
            return Err(Error::InvalidArgument(format!("pair ({a}, {b}) repeats a label")));
        }
        for i in 0..n {
            let labels = vec![LabelId::from_index(a), LabelId::from_index(b)];
            videos.push(VideoAnnotation::new(format!("pair_{a}_{b}_{i:05}"), labels, &vocab)?);
        }
    }
    Dataset::new("planted-pairs", vocab, videos, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::follow_share;

    fn small() -> SynthConfig {
        SynthConfig {
            videos: 40,
            ..Default::default()
        }
    }

    #[test]
    fn names() {
        assert_eq!(synth_label_names(4), vec!["background", "A", "B", "C"]);
        assert_eq!(synth_label_names(30)[29], "L29");
    }

    #[test]
    fn rejects_infeasible() {
        let mut c = small();
        c.dominant_pairs[0].next = "Z".into();
        assert!(gen_synthetic(&c).is_err());
        for f in [
            |c: &mut SynthConfig| c.labels = 2,
            |c: &mut SynthConfig| c.feature_dim = 1,
            |c: &mut SynthConfig| c.dominant_pairs[0].follow_prob = 1.5,
            |c: &mut SynthConfig| c.segments_per_video = (3, 2),
            |c: &mut SynthConfig| c.folds = 1,
            |c: &mut SynthConfig| c.dominant_pairs[0].prev = "background".into(),
        ] {
            let mut c = small();
            f(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn deterministic_and_tallied() {
        let (a, book) = gen_synthetic(&small()).unwrap();
        let (b, _) = gen_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let tallied: u64 = book.pair_counts.iter().map(|p| p.count).sum();
        assert_eq!(tallied as usize, a.total_segments() - a.videos().len());
        assert!(a.videos().iter().all(|v| !v.frame_labels().contains(&LabelId(0))));
        assert_eq!(a.splits().len(), 4);
        assert_eq!(a.split("split1").unwrap().test.len(), 10);
    }

    #[test]
    fn certain_follow() {
        let mut c = small();
        c.dominant_pairs[0].follow_prob = 1.0;
        let (d, _) = gen_synthetic(&c).unwrap();
        assert_eq!(follow_share(&d, LabelId(1), LabelId(2)), Some(1.0));
    }

    #[test]
    fn planted_pairs_count_exactly() {
        let d = planted_pair_dataset(&["x", "y", "z"], &[((0, 1), 3), ((2, 0), 2)]).unwrap();
        let h = crate::stats::bigram_counts(&d, true);
        assert_eq!(h.get(LabelId(0), LabelId(1)), 3);
        assert_eq!(h.get(LabelId(2), LabelId(0)), 2);
        assert_eq!(h.total(), 5);
    }
}
