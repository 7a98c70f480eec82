use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, LabelId};

/// First-order model over segment labels.
///
/// Transitions are add-one smoothed over the `K − 1` possible followers of
/// each label. A label never follows itself (segments are maximal runs), so
/// the diagonal stays zero except when `K = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    pub k: usize,
    pub transition: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    /// Mean segment length per label; zero for labels never seen.
    pub duration: Vec<f64>,
}

impl MarkovModel {
    /// Builds a model from raw counts.
    pub fn from_counts(bigrams: &[Vec<u64>], firsts: &[u64], durations: &[(u64, u64)]) -> Result<Self> {
        let k = firsts.len();
        if k == 0 || bigrams.len() != k || durations.len() != k || bigrams.iter().any(|r| r.len() != k) {
            return Err(Error::Model("count tables must be K×K, K and K".into()));
        }
        let transition = bigrams
            .iter()
            .enumerate()
            .map(|(a, row)| {
                if k == 1 {
                    return vec![1.0];
                }
                let n: u64 = row.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, c)| c).sum();
                let denom = (n + k as u64 - 1) as f64;
                row.iter()
                    .enumerate()
                    .map(|(b, &c)| if b == a { 0.0 } else { (c + 1) as f64 / denom })
                    .collect()
            })
            .collect();
        let n: u64 = firsts.iter().sum();
        let initial = firsts.iter().map(|&c| (c + 1) as f64 / (n + k as u64) as f64).collect();
        let duration = durations
            .iter()
            .map(|&(frames, segs)| if segs == 0 { 0.0 } else { frames as f64 / segs as f64 })
            .collect();
        Ok(MarkovModel {
            k,
            transition,
            initial,
            duration,
        })
    }

    pub fn prob(&self, prev: LabelId, next: LabelId) -> f64 {
        self.transition[prev.index()][next.index()]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || self.transition.len() != k || self.initial.len() != k || self.duration.len() != k {
            return Err(Error::Model("inconsistent Markov model dimensions".into()));
        }
        for row in self.transition.iter().chain(std::iter::once(&self.initial)) {
            if row.len() != k || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Model("Markov row is not a distribution".into()));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Model("Markov row does not sum to 1".into()));
            }
        }
        Ok(())
    }
}

/// Fits transition, initial and duration statistics from segment sequences.
pub fn fit_markov(train: &Dataset) -> Result<MarkovModel> {
    if train.videos().is_empty() {
        return Err(Error::Model("cannot fit on an empty training set".into()));
    }
    let k = train.vocab().len();
    let mut bigrams = vec![vec![0u64; k]; k];
    let mut firsts = vec![0u64; k];
    let mut durations = vec![(0u64, 0u64); k];
    for video in train.videos() {
        let segs = video.segments();
        firsts[segs[0].label.index()] += 1;
        for pair in segs.windows(2) {
            bigrams[pair[0].label.index()][pair[1].label.index()] += 1;
        }
        for s in segs {
            let d = &mut durations[s.label.index()];
            d.0 += s.len() as u64;
            d.1 += 1;
        }
    }
    MarkovModel::from_counts(&bigrams, &firsts, &durations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_one_row() {
        // A→B 9, A→C 1; two possible followers of A
        let bigrams = vec![vec![0, 9, 1], vec![0; 3], vec![0; 3]];
        let m = MarkovModel::from_counts(&bigrams, &[1, 0, 0], &[(1, 1), (0, 0), (0, 0)]).unwrap();
        assert_eq!(m.transition[0], vec![0.0, 10.0 / 12.0, 2.0 / 12.0]);
        assert_eq!(m.transition[1], vec![0.5, 0.0, 0.5]);
        m.validate().unwrap();
    }

    #[test]
    fn single_label() {
        let m = MarkovModel::from_counts(&[vec![0]], &[3], &[(6, 3)]).unwrap();
        assert_eq!(m.transition, vec![vec![1.0]]);
        assert_eq!(m.initial, vec![1.0]);
        assert_eq!(m.duration, vec![2.0]);
    }
}
