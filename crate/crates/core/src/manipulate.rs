//! Dataset manipulations: pair masking, random masking, sequence shuffling,
//! limited shuffling and combined-set construction.
//!
//! Every randomized operation draws from a per-video stream derived from the
//! master seed and the video id, so results do not depend on iteration order
//! or thread count.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, FeatureMatrix, LabelId, SeedSpec, Segment, Split, VideoAnnotation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MaskPair,
    MaskRandom,
    Shuffle,
    LimitedShuffle,
}

/// What happened to one original segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Replacement {
    /// Relabelled background over the same interval, features masked.
    Masked,
    /// Moved, with its frames and features, to a new interval.
    Moved(Segment),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectedSegment {
    pub original: Segment,
    pub replacement: Replacement,
}

/// Audit trail for one manipulated video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManipulationRecord {
    pub video_id: String,
    pub method: Method,
    pub affected: Vec<AffectedSegment>,
    pub sub_seed: Option<u64>,
}

impl ManipulationRecord {
    /// Intervals relabelled background, with their original segment.
    pub fn masked_segments(&self) -> impl Iterator<Item = &Segment> {
        self.affected
            .iter()
            .filter(|a| a.replacement == Replacement::Masked)
            .map(|a| &a.original)
    }

    /// Reconstructs the pre-manipulation frame labels from the manipulated ones.
    pub fn restore_labels(&self, labels: &[LabelId]) -> Result<Vec<LabelId>> {
        let mut out = labels.to_vec();
        for a in &self.affected {
            if a.original.end > labels.len() {
                return Err(Error::InvalidArgument(format!(
                    "{}: record interval [{}, {}) exceeds {} frames",
                    self.video_id,
                    a.original.start,
                    a.original.end,
                    labels.len()
                )));
            }
            match a.replacement {
                Replacement::Masked => out[a.original.range()].fill(a.original.label),
                Replacement::Moved(_) => {}
            }
        }
        let moved: Vec<_> = self
            .affected
            .iter()
            .filter_map(|a| match a.replacement {
                Replacement::Moved(to) => Some((a.original, to)),
                Replacement::Masked => None,
            })
            .collect();
        if !moved.is_empty() {
            for (from, to) in moved {
                if to.end > labels.len() || to.len() != from.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{}: inconsistent move record",
                        self.video_id
                    )));
                }
                out[from.range()].copy_from_slice(&labels[to.range()]);
            }
        }
        Ok(out)
    }
}

/// Mask applied to the feature rows of a masked segment.
fn mask_features(features: &FeatureMatrix, segment: &Segment) -> FeatureMatrix {
    features.with_masked_rows(segment.range())
}

fn mask_segments(
    video: &VideoAnnotation,
    dataset: &Dataset,
    targets: &[usize],
    background: LabelId,
) -> Result<(VideoAnnotation, Vec<AffectedSegment>)> {
    if targets.is_empty() {
        return Ok((video.clone(), Vec::new()));
    }
    let mut labels = video.frame_labels().to_vec();
    let mut features = video.features().map(|f| FeatureMatrix::clone(f));
    let mut affected = Vec::with_capacity(targets.len());
    for &j in targets {
        let seg = video.segments()[j];
        labels[seg.range()].fill(background);
        if let Some(f) = features.as_mut() {
            *f = mask_features(f, &seg);
        }
        affected.push(AffectedSegment {
            original: seg,
            replacement: Replacement::Masked,
        });
    }
    let out = VideoAnnotation::new(video.video_id(), labels, dataset.vocab())?
        .with_features(features.map(Arc::new))?;
    Ok((out, affected))
}

fn collect(
    dataset: &Dataset,
    results: Vec<(VideoAnnotation, Option<ManipulationRecord>)>,
) -> Result<(Dataset, Vec<ManipulationRecord>)> {
    let (videos, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((dataset.with_videos(videos)?, records.into_iter().flatten().collect()))
}

fn check_pair(dataset: &Dataset, pair: (LabelId, LabelId)) -> Result<()> {
    dataset.vocab().check(pair.0)?;
    dataset.vocab().check(pair.1)
}

/// Relabels every `b` segment that directly follows an `a` segment as
/// background and masks its features.
pub fn mask_pair(dataset: &Dataset, pair: (LabelId, LabelId)) -> Result<(Dataset, Vec<ManipulationRecord>)> {
    let background = dataset.vocab().require_background()?;
    check_pair(dataset, pair)?;
    let (a, b) = pair;
    if a == background || b == background {
        return Err(Error::InvalidArgument(
            "neither label of a masked pair may be the background label".into(),
        ));
    }
    let results = dataset
        .videos()
        .par_iter()
        .map(|video| {
            let targets: Vec<usize> = video
                .segments()
                .windows(2)
                .enumerate()
                .filter(|(_, w)| w[0].label == a && w[1].label == b)
                .map(|(i, _)| i + 1)
                .collect();
            let (out, affected) = mask_segments(video, dataset, &targets, background)?;
            let record = (!affected.is_empty()).then(|| ManipulationRecord {
                video_id: video.video_id().to_string(),
                method: Method::MaskPair,
                affected,
                sub_seed: None,
            });
            Ok((out, record))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(dataset, results)
}

/// Masks each non-background segment independently with probability `p`.
pub fn mask_random(dataset: &Dataset, p: f64, seed: SeedSpec) -> Result<(Dataset, Vec<ManipulationRecord>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("mask probability {p} not in [0, 1]")));
    }
    let background = dataset.vocab().require_background()?;
    let results = dataset
        .videos()
        .par_iter()
        .map(|video| {
            let sub_seed = seed.sub_seed(video.video_id());
            let mut rng = seed.rng(video.video_id());
            let targets: Vec<usize> = video
                .segments()
                .iter()
                .enumerate()
                .filter(|(_, s)| s.label != background)
                .filter(|_| rng.random::<f64>() < p)
                .map(|(i, _)| i)
                .collect();
            let (out, affected) = mask_segments(video, dataset, &targets, background)?;
            let record = (!affected.is_empty()).then(|| ManipulationRecord {
                video_id: video.video_id().to_string(),
                method: Method::MaskRandom,
                affected,
                sub_seed: Some(sub_seed),
            });
            Ok((out, record))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(dataset, results)
}

/// Concatenates the video's segments in `order`, carrying feature blocks along.
fn reorder_segments(
    video: &VideoAnnotation,
    dataset: &Dataset,
    order: &[usize],
) -> Result<(VideoAnnotation, Vec<AffectedSegment>)> {
    let segments = video.segments();
    let mut labels = Vec::with_capacity(video.len());
    let mut rows = Vec::with_capacity(video.len());
    let mut affected = Vec::new();
    for &i in order {
        let seg = segments[i];
        let start = labels.len();
        labels.extend(std::iter::repeat_n(seg.label, seg.len()));
        rows.extend(seg.range());
        let placed = Segment {
            label: seg.label,
            start,
            end: labels.len(),
        };
        if placed != seg {
            affected.push(AffectedSegment {
                original: seg,
                replacement: Replacement::Moved(placed),
            });
        }
    }
    let features = match video.features() {
        Some(f) if !affected.is_empty() => Some(Arc::new(f.gather_rows(rows)?)),
        Some(f) => Some(Arc::clone(f)),
        None => None,
    };
    let out = VideoAnnotation::new(video.video_id(), labels, dataset.vocab())?.with_features(features)?;
    Ok((out, affected))
}

fn reorder_all<F>(dataset: &Dataset, method: Method, seed: SeedSpec, choose_order: F) -> Result<(Dataset, Vec<ManipulationRecord>)>
where
    F: Fn(&VideoAnnotation, &mut rand_chacha::ChaCha8Rng) -> Vec<usize> + Sync,
{
    let results = dataset
        .videos()
        .par_iter()
        .map(|video| {
            let sub_seed = seed.sub_seed(video.video_id());
            let mut rng = seed.rng(video.video_id());
            let order = choose_order(video, &mut rng);
            let (out, affected) = reorder_segments(video, dataset, &order)?;
            let record = (!affected.is_empty()).then(|| ManipulationRecord {
                video_id: video.video_id().to_string(),
                method,
                affected,
                sub_seed: Some(sub_seed),
            });
            Ok((out, record))
        })
        .collect::<Result<Vec<_>>>()?;
    collect(dataset, results)
}

/// Uniformly permutes each video's segments, keeping frame order inside
/// every segment.
pub fn shuffle_sequences(dataset: &Dataset, seed: SeedSpec) -> Result<(Dataset, Vec<ManipulationRecord>)> {
    reorder_all(dataset, Method::Shuffle, seed, |video, rng| {
        let mut order: Vec<usize> = (0..video.segments().len()).collect();
        order.shuffle(rng);
        order
    })
}

/// For each `b` segment directly following an `a` segment, swaps `b` with a
/// uniformly chosen other segment of the same video.
pub fn limited_shuffle(
    dataset: &Dataset,
    pair: (LabelId, LabelId),
    seed: SeedSpec,
) -> Result<(Dataset, Vec<ManipulationRecord>)> {
    check_pair(dataset, pair)?;
    let (a, b) = pair;
    reorder_all(dataset, Method::LimitedShuffle, seed, |video, rng| {
        let segs = video.segments();
        let n = segs.len();
        let mut order: Vec<usize> = (0..n).collect();
        if n < 2 {
            return order;
        }
        let occurrences: Vec<usize> = (1..n)
            .filter(|&j| segs[j - 1].label == a && segs[j].label == b)
            .collect();
        for j in occurrences {
            let pos = order.iter().position(|&i| i == j).expect("segment index present");
            let pick = rng.random_range(0..n - 1);
            let partner = if pick >= pos { pick + 1 } else { pick };
            order.swap(pos, partner);
        }
        order
    })
}

/// Union of datasets with `<id>#<suffix>` video ids. Folds are rebuilt so
/// each fold's train (test) set is the union of the inputs' train (test) sets.
pub fn combine(parts: &[(&Dataset, &str)]) -> Result<Dataset> {
    let Some(&(first, _)) = parts.first() else {
        return Err(Error::InvalidArgument("combine needs at least one dataset".into()));
    };
    let suffixes: BTreeSet<&str> = parts.iter().map(|(_, s)| *s).collect();
    if suffixes.len() != parts.len() {
        return Err(Error::InvalidArgument("combine suffixes must be distinct".into()));
    }
    for (other, _) in &parts[1..] {
        if other.vocab() != first.vocab() {
            return Err(Error::VocabMismatch(describe_vocab_difference(first, other)));
        }
        let names = |d: &Dataset| d.splits().iter().map(|s| s.name.clone()).collect::<Vec<_>>();
        if names(first) != names(other) {
            return Err(Error::Dataset(format!(
                "fold names differ: {:?} vs {:?}",
                names(first),
                names(other)
            )));
        }
    }
    let rename = |id: &str, suffix: &str| format!("{id}#{suffix}");
    let mut videos = Vec::new();
    for (dataset, suffix) in parts {
        videos.extend(
            dataset
                .videos()
                .iter()
                .map(|v| v.clone().renamed(rename(v.video_id(), suffix))),
        );
    }
    let splits = first
        .splits()
        .iter()
        .enumerate()
        .map(|(i, split)| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (dataset, suffix) in parts {
                let s = &dataset.splits()[i];
                train.extend(s.train.iter().map(|id| rename(id, suffix)));
                test.extend(s.test.iter().map(|id| rename(id, suffix)));
            }
            Split {
                name: split.name.clone(),
                train,
                test,
            }
        })
        .collect();
    let name = parts
        .iter()
        .map(|(d, _)| d.name())
        .collect::<Vec<_>>()
        .join("+");
    Dataset::new(name, first.vocab().clone(), videos, splits)
}

fn describe_vocab_difference(a: &Dataset, b: &Dataset) -> String {
    let left: BTreeSet<&String> = a.vocab().names().iter().collect();
    let right: BTreeSet<&String> = b.vocab().names().iter().collect();
    let only_left: Vec<_> = left.difference(&right).collect();
    let only_right: Vec<_> = right.difference(&left).collect();
    if only_left.is_empty() && only_right.is_empty() {
        if a.vocab().names() != b.vocab().names() {
            return format!("{} and {} order their labels differently", a.name(), b.name());
        }
        return format!("{} and {} disagree on the background label", a.name(), b.name());
    }
    format!(
        "only in {}: {only_left:?}; only in {}: {only_right:?}",
        a.name(),
        b.name()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FloatDtype, LabelVocab};

    const BG: LabelId = LabelId(0);
    const A: LabelId = LabelId(1);
    const B: LabelId = LabelId(2);
    const C: LabelId = LabelId(3);

    fn vocab() -> LabelVocab {
        LabelVocab::new(["bg", "A", "B", "C"]).unwrap().with_background(Some(BG)).unwrap()
    }

    /// Feature row t is [t, t + 0.5].
    fn video(id: &str, labels: &[LabelId]) -> VideoAnnotation {
        let t = labels.len();
        let values = (0..t).flat_map(|i| [i as f64, i as f64 + 0.5]).collect();
        let f = FeatureMatrix::new(t, 2, values, FloatDtype::F64).unwrap();
        VideoAnnotation::new(id, labels.to_vec(), &vocab())
            .unwrap()
            .with_features(Some(Arc::new(f)))
            .unwrap()
    }

    fn dataset(videos: Vec<VideoAnnotation>) -> Dataset {
        Dataset::new("t", vocab(), videos, vec![]).unwrap()
    }

    fn first_feature_column(v: &VideoAnnotation) -> Vec<f64> {
        let f = v.features().unwrap();
        (0..f.rows()).map(|t| f.row(t)[0]).collect()
    }

    #[test]
    fn mask_pair_direct_rule() {
        let ds = dataset(vec![video("v", &[A, A, B, B, C])]);
        let (out, records) = mask_pair(&ds, (A, B)).unwrap();
        let v = &out.videos()[0];
        assert_eq!(v.frame_labels(), &[A, A, BG, BG, C]);
        let f = v.features().unwrap();
        assert_eq!(f.row(2), &[0.0, 0.0]);
        assert_eq!(f.row(3), &[0.0, 0.0]);
        assert_eq!(f.row(1), &[1.0, 1.5]);
        assert_eq!(f.row(4), &[4.0, 4.5]);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].affected, vec![AffectedSegment {
            original: Segment { label: B, start: 2, end: 4 },
            replacement: Replacement::Masked,
        }]);
        assert_eq!(records[0].restore_labels(v.frame_labels()).unwrap(), vec![A, A, B, B, C]);
    }

    #[test]
    fn mask_pair_needs_order() {
        let ds = dataset(vec![video("v", &[B, B, A, A])]);
        let (out, records) = mask_pair(&ds, (A, B)).unwrap();
        assert_eq!(out, ds);
        assert!(records.is_empty());
    }

    #[test]
    fn mask_pair_is_idempotent_and_merges_runs() {
        let ds = dataset(vec![video("v", &[A, B, BG, A, B, C])]);
        let (once, _) = mask_pair(&ds, (A, B)).unwrap();
        let v = &once.videos()[0];
        assert_eq!(v.frame_labels(), &[A, BG, BG, A, BG, C]);
        assert_eq!(v.segments().len(), 5);
        let (twice, records) = mask_pair(&once, (A, B)).unwrap();
        assert_eq!(twice, once);
        assert!(records.is_empty());
    }

    #[test]
    fn mask_pair_errors() {
        let no_bg = LabelVocab::new(["A", "B"]).unwrap();
        let v = VideoAnnotation::new("v", vec![LabelId(0), LabelId(1)], &no_bg).unwrap();
        let ds = Dataset::new("t", no_bg, vec![v], vec![]).unwrap();
        assert!(matches!(mask_pair(&ds, (LabelId(0), LabelId(1))), Err(Error::MissingBackground)));
        assert!(matches!(mask_random(&ds, 0.5, SeedSpec::new(1)), Err(Error::MissingBackground)));

        let ds = dataset(vec![video("v", &[A, B])]);
        assert!(mask_pair(&ds, (A, BG)).is_err());
        assert!(mask_pair(&ds, (A, LabelId(9))).is_err());
    }

    #[test]
    fn mask_random_extremes() {
        let ds = dataset(vec![video("v1", &[A, B, BG, C]), video("v2", &[C, C, A])]);
        let (none, records) = mask_random(&ds, 0.0, SeedSpec::new(3)).unwrap();
        assert_eq!(none, ds);
        assert!(records.is_empty());
        let (all, records) = mask_random(&ds, 1.0, SeedSpec::new(3)).unwrap();
        assert!(all.videos().iter().all(|v| v.frame_labels().iter().all(|&l| l == BG)));
        assert_eq!(records.iter().map(|r| r.affected.len()).sum::<usize>(), 5);
        assert!(mask_random(&ds, 1.5, SeedSpec::new(3)).is_err());
    }

    #[test]
    fn shuffle_single_segment_is_identity() {
        let ds = dataset(vec![video("v", &[A, A, A])]);
        for seed in 0..20 {
            let (out, records) = shuffle_sequences(&ds, SeedSpec::new(seed)).unwrap();
            assert_eq!(out, ds);
            assert!(records.is_empty());
        }
    }

    #[test]
    fn shuffle_two_segments_forced_layout() {
        let ds = dataset(vec![video("v", &[A, A, B, B, B])]);
        let swapped = (0..64)
            .map(|s| shuffle_sequences(&ds, SeedSpec::new(s)).unwrap())
            .find(|(out, _)| out.videos()[0].frame_labels()[0] == B)
            .expect("some seed swaps the two segments");
        let v = &swapped.0.videos()[0];
        assert_eq!(v.frame_labels(), &[B, B, B, A, A]);
        assert_eq!(first_feature_column(v), vec![2.0, 3.0, 4.0, 0.0, 1.0]);
        let record = &swapped.1[0];
        assert_eq!(record.restore_labels(v.frame_labels()).unwrap(), vec![A, A, B, B, B]);
    }

    #[test]
    fn limited_shuffle_two_segment_case() {
        let ds = dataset(vec![video("v", &[A, B, B])]);
        for seed in 0..10 {
            let (out, records) = limited_shuffle(&ds, (A, B), SeedSpec::new(seed)).unwrap();
            assert_eq!(out.videos()[0].frame_labels(), &[B, B, A]);
            assert_eq!(first_feature_column(&out.videos()[0]), vec![1.0, 2.0, 0.0]);
            assert_eq!(records.len(), 1);
        }
    }

    #[test]
    fn limited_shuffle_leaves_other_videos() {
        let ds = dataset(vec![video("v", &[B, A, C, A])]);
        let (out, records) = limited_shuffle(&ds, (A, B), SeedSpec::new(5)).unwrap();
        assert_eq!(out, ds);
        assert!(records.is_empty());
    }

    #[test]
    fn combine_single_and_triple() {
        let split = Split { name: "split1".into(), train: vec!["v1".into()], test: vec!["v2".into()] };
        let ds = Dataset::new("d", vocab(), vec![video("v1", &[A, B]), video("v2", &[C])], vec![split]).unwrap();
        let one = combine(&[(&ds, "orig")]).unwrap();
        assert_eq!(one.videos().len(), 2);
        assert!(one.video("v1#orig").is_some());

        let (masked, _) = mask_pair(&ds, (A, B)).unwrap();
        let (shuffled, _) = shuffle_sequences(&ds, SeedSpec::new(1)).unwrap();
        let all = combine(&[(&ds, "orig"), (&masked, "mask"), (&shuffled, "shuf")]).unwrap();
        assert_eq!(all.videos().len(), 6);
        let s = all.split("split1").unwrap();
        assert_eq!(s.train, vec!["v1#orig", "v1#mask", "v1#shuf"]);
        assert_eq!(s.test, vec!["v2#orig", "v2#mask", "v2#shuf"]);
    }

    #[test]
    fn combine_rejects_vocab_mismatch() {
        let ds = dataset(vec![video("v", &[A])]);
        let other_vocab = LabelVocab::new(["bg", "A", "B", "D"]).unwrap().with_background(Some(BG)).unwrap();
        let v = VideoAnnotation::new("v", vec![A], &other_vocab).unwrap();
        let other = Dataset::new("o", other_vocab, vec![v], vec![]).unwrap();
        let err = combine(&[(&ds, "x"), (&other, "y")]).unwrap_err().to_string();
        assert!(err.contains("\"C\"") && err.contains("\"D\""), "{err}");
    }
}
