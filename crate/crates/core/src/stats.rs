//! Action-pair statistics: segment bigram histograms, long-tail coverage,
//! dominant-pair search, heatmaps and positional distributions.
//!
//! Pairs are formed by consecutive segments of the same video; video
//! boundaries never form a pair.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::report::{csv_field, fmt_num};
use crate::types::{Dataset, LabelId, LabelVocab, VideoAnnotation};

/// Counts of ordered `(prev, next)` segment-label pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairHistogram {
    counts: BTreeMap<(LabelId, LabelId), u64>,
    total: u64,
}

impl PairHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, prev: LabelId, next: LabelId, n: u64) {
        if n == 0 {
            return;
        }
        *self.counts.entry((prev, next)).or_insert(0) += n;
        self.total += n;
    }

    pub fn merge(mut self, other: &PairHistogram) -> PairHistogram {
        for (&(a, b), &n) in &other.counts {
            self.add(a, b, n);
        }
        self
    }

    pub fn get(&self, prev: LabelId, next: LabelId) -> u64 {
        self.counts.get(&(prev, next)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct pairs.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((LabelId, LabelId), u64)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }

    /// Pairs by descending count; ties by ascending `(prev, next)`.
    pub fn ranked(&self) -> Vec<((LabelId, LabelId), u64)> {
        let mut out: Vec<_> = self.iter().collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// `prev,next,count,share` rows in rank order.
    pub fn to_csv(&self, vocab: &LabelVocab) -> String {
        let mut out = String::from("prev,next,count,share\n");
        for ((a, b), n) in self.ranked() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(vocab.name(a)),
                csv_field(vocab.name(b)),
                n,
                fmt_num(n as f64 / self.total as f64)
            ));
        }
        out
    }
}

fn video_pairs(video: &VideoAnnotation, skip: Option<LabelId>) -> PairHistogram {
    let mut hist = PairHistogram::new();
    for w in video.segments().windows(2) {
        let (a, b) = (w[0].label, w[1].label);
        if skip.is_some_and(|bg| a == bg || b == bg) {
            continue;
        }
        hist.add(a, b, 1);
    }
    hist
}

/// Segment bigram histogram. With `include_background = false`, pairs that
/// touch the background label are skipped.
pub fn bigram_counts(dataset: &Dataset, include_background: bool) -> PairHistogram {
    let skip = if include_background {
        None
    } else {
        dataset.vocab().background()
    };
    dataset
        .videos()
        .par_iter()
        .map(|v| video_pairs(v, skip))
        .reduce(PairHistogram::new, |a, b| a.merge(&b))
}

/// Smallest number of top-ranked pairs whose counts reach `fraction` of the total.
pub fn coverage_rank(hist: &PairHistogram, fraction: f64) -> Result<usize> {
    if hist.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "coverage fraction {fraction} not in (0, 1]"
        )));
    }
    // 0.3 * 10 is 3.0000000000000004 in binary floating point
    let target = fraction * hist.total() as f64 * (1.0 - 1e-12);
    let mut cumulative = 0u64;
    for (rank, (_, n)) in hist.ranked().into_iter().enumerate() {
        cumulative += n;
        if cumulative as f64 >= target {
            return Ok(rank + 1);
        }
    }
    Ok(hist.len())
}

/// Cumulative share of the total covered by the top `i + 1` pairs.
pub fn coverage_curve(hist: &PairHistogram) -> Vec<f64> {
    let total = hist.total() as f64;
    let mut cumulative = 0u64;
    hist.ranked()
        .into_iter()
        .map(|(_, n)| {
            cumulative += n;
            cumulative as f64 / total
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DominantPairCriteria {
    /// Minimum share of all segments carrying the former label.
    pub min_initial_share: f64,
    /// Minimum share of the former label's non-terminal occurrences that the
    /// latter label follows.
    pub min_follow_share: f64,
    pub exclude_no_action_follower: bool,
}

impl Default for DominantPairCriteria {
    fn default() -> Self {
        DominantPairCriteria {
            min_initial_share: 0.01,
            min_follow_share: 0.8,
            exclude_no_action_follower: true,
        }
    }
}

impl DominantPairCriteria {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("min_initial_share", self.min_initial_share),
            ("min_follow_share", self.min_follow_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominantPair {
    pub prev: LabelId,
    pub next: LabelId,
    /// Share of all segments labelled `prev`.
    pub initial_share: f64,
    /// Share of all frames labelled `prev`.
    pub initial_frame_share: f64,
    /// Share of `prev`'s non-terminal occurrences followed by `next`.
    pub follow_share: f64,
    pub follow_count: u64,
    pub prev_occurrences: u64,
}

#[derive(Default)]
struct LabelTally {
    segments: Vec<u64>,
    frames: Vec<u64>,
    non_terminal: Vec<u64>,
    pairs: PairHistogram,
}

impl LabelTally {
    fn new(k: usize) -> Self {
        LabelTally {
            segments: vec![0; k],
            frames: vec![0; k],
            non_terminal: vec![0; k],
            pairs: PairHistogram::new(),
        }
    }

    fn add_video(mut self, video: &VideoAnnotation) -> Self {
        let segs = video.segments();
        for (i, s) in segs.iter().enumerate() {
            self.segments[s.label.index()] += 1;
            self.frames[s.label.index()] += s.len() as u64;
            if let Some(next) = segs.get(i + 1) {
                self.non_terminal[s.label.index()] += 1;
                self.pairs.add(s.label, next.label, 1);
            }
        }
        self
    }

    fn merge(mut self, other: LabelTally) -> Self {
        for (a, b) in [
            (&mut self.segments, &other.segments),
            (&mut self.frames, &other.frames),
            (&mut self.non_terminal, &other.non_terminal),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.pairs = self.pairs.merge(&other.pairs);
        self
    }
}

/// Pairs `(a, b)` where `a` is common enough and `b` follows it often enough,
/// sorted by descending follow share.
pub fn dominant_pair(dataset: &Dataset, criteria: &DominantPairCriteria) -> Result<Vec<DominantPair>> {
    criteria.validate()?;
    let background = if criteria.exclude_no_action_follower {
        Some(dataset.vocab().require_background()?)
    } else {
        None
    };
    let k = dataset.vocab().len();
    let tally = dataset
        .videos()
        .par_iter()
        .fold(|| LabelTally::new(k), LabelTally::add_video)
        .reduce(|| LabelTally::new(k), LabelTally::merge);
    let total_segments: u64 = tally.segments.iter().sum();
    let total_frames: u64 = tally.frames.iter().sum();
    let mut out: Vec<DominantPair> = tally
        .pairs
        .iter()
        .filter(|&((_, b), _)| Some(b) != background)
        .filter_map(|((a, b), n)| {
            let initial_share = tally.segments[a.index()] as f64 / total_segments as f64;
            let occurrences = tally.non_terminal[a.index()];
            let follow_share = n as f64 / occurrences as f64;
            (initial_share >= criteria.min_initial_share && follow_share >= criteria.min_follow_share).then(|| {
                DominantPair {
                    prev: a,
                    next: b,
                    initial_share,
                    initial_frame_share: tally.frames[a.index()] as f64 / total_frames as f64,
                    follow_share,
                    follow_count: n,
                    prev_occurrences: occurrences,
                }
            })
        })
        .collect();
    out.sort_by(|x, y| {
        y.follow_share
            .total_cmp(&x.follow_share)
            .then((x.prev, x.next).cmp(&(y.prev, y.next)))
    });
    Ok(out)
}

/// Share of `prev`'s non-terminal occurrences followed by `next`; `None` when
/// `prev` never has a successor.
pub fn follow_share(dataset: &Dataset, prev: LabelId, next: LabelId) -> Option<f64> {
    let mut occurrences = 0u64;
    let mut hits = 0u64;
    for video in dataset.videos() {
        for w in video.segments().windows(2) {
            if w[0].label == prev {
                occurrences += 1;
                hits += u64::from(w[1].label == next);
            }
        }
    }
    (occurrences > 0).then(|| hits as f64 / occurrences as f64)
}

/// `K × K` pair counts; rows are the former label, columns the latter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HeatMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl HeatMatrix {
    pub fn from_histogram(hist: &PairHistogram, k: usize) -> Self {
        let mut counts = vec![0; k * k];
        for ((a, b), n) in hist.iter() {
            counts[a.index() * k + b.index()] += n;
        }
        HeatMatrix { k, counts }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, prev: LabelId, next: LabelId) -> u64 {
        self.counts[prev.index() * self.k + next.index()]
    }

    pub fn row(&self, prev: LabelId) -> &[u64] {
        &self.counts[prev.index() * self.k..(prev.index() + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.k.max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|c| (0..self.k).map(|r| self.counts[r * self.k + c]).sum())
            .collect()
    }

    /// Header row and column carry label names.
    pub fn to_csv(&self, vocab: &LabelVocab) -> String {
        let mut out = String::from("prev\\next");
        for name in vocab.names() {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push('\n');
        for (r, name) in vocab.names().iter().enumerate() {
            out.push_str(&csv_field(name));
            for c in 0..self.k {
                out.push_str(&format!(",{}", self.counts[r * self.k + c]));
            }
            out.push('\n');
        }
        out
    }
}

/// Heatmap over all pairs, background included.
pub fn pair_heatmap(dataset: &Dataset) -> HeatMatrix {
    HeatMatrix::from_histogram(&bigram_counts(dataset, true), dataset.vocab().len())
}

/// Per-label frame counts over normalized time bins.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PositionalHistogram {
    pub bins: usize,
    /// `counts[label][bin]`
    pub counts: Vec<Vec<u64>>,
}

impl PositionalHistogram {
    pub fn to_csv(&self, vocab: &LabelVocab) -> String {
        let mut out = String::from("label,bin,count\n");
        for (label, row) in self.counts.iter().enumerate() {
            let name = csv_field(vocab.name(LabelId::from_index(label)));
            for (bin, n) in row.iter().enumerate() {
                out.push_str(&format!("{name},{bin},{n}\n"));
            }
        }
        out
    }
}

/// Frame `t` of a `T`-frame video falls in bin `floor(bins * t / T)`.
pub fn positional_histogram(dataset: &Dataset, bins: usize) -> Result<PositionalHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    let k = dataset.vocab().len();
    let mut counts = vec![vec![0u64; bins]; k];
    for video in dataset.videos() {
        let frames = video.len();
        for (t, label) in video.frame_labels().iter().enumerate() {
            let bin = (bins * t / frames).min(bins - 1);
            counts[label.index()][bin] += 1;
        }
    }
    Ok(PositionalHistogram { bins, counts })
}
