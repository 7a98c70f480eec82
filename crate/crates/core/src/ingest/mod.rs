//! On-disk dataset format: `mapping.txt`, `groundTruth/<video>.txt`,
//! `splits/{train,test}.<fold>.bundle` and `features/<video>.npy`.

mod npy;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Dataset, LabelId, LabelVocab, Orientation, Split, VideoAnnotation};

pub use npy::{parse_feature_file, write_feature_file, write_oriented};

pub const GROUNDTRUTH_DIR: &str = "groundTruth";
pub const MAPPING_FILE: &str = "mapping.txt";
pub const SPLITS_DIR: &str = "splits";
pub const FEATURES_DIR: &str = "features";

/// Where each part of a dataset lives. Relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub groundtruth_dir: PathBuf,
    pub mapping_file: PathBuf,
    pub splits_dir: PathBuf,
    pub features_dir: Option<PathBuf>,
    pub feature_orientation: Orientation,
    /// Name of the "no action" label, if the dataset has one.
    pub background: Option<String>,
}

impl DatasetLayout {
    /// Conventional layout under `root`. `mapping/mapping.txt` is used when
    /// `mapping.txt` is absent; features are bound only if `features/` exists.
    pub fn standard(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let mapping_file = if !root.join(MAPPING_FILE).exists() && root.join("mapping").join(MAPPING_FILE).exists() {
            PathBuf::from("mapping").join(MAPPING_FILE)
        } else {
            PathBuf::from(MAPPING_FILE)
        };
        let features_dir = root.join(FEATURES_DIR).is_dir().then(|| PathBuf::from(FEATURES_DIR));
        DatasetLayout {
            root,
            groundtruth_dir: PathBuf::from(GROUNDTRUTH_DIR),
            mapping_file,
            splits_dir: PathBuf::from(SPLITS_DIR),
            features_dir,
            feature_orientation: Orientation::default(),
            background: None,
        }
    }

    pub fn with_background(mut self, name: Option<&str>) -> Self {
        self.background = name.map(str::to_string);
        self
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn groundtruth_path(&self) -> PathBuf {
        self.resolve(&self.groundtruth_dir)
    }

    pub fn mapping_path(&self) -> PathBuf {
        self.resolve(&self.mapping_file)
    }

    pub fn splits_path(&self) -> PathBuf {
        self.resolve(&self.splits_dir)
    }

    pub fn features_path(&self) -> Option<PathBuf> {
        self.features_dir.as_deref().map(|p| self.resolve(p))
    }
}

/// Parses `<id> <name>` lines into a vocabulary ordered by id.
pub fn parse_mapping(text: &str, background: Option<&str>) -> Result<LabelVocab> {
    let mut by_id: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    let mut names = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (id, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::parse("mapping", line_no, format!("expected \"<id> <name>\", got {line:?}")))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::parse("mapping", line_no, format!("invalid label id {id:?}")))?;
        let name = name.trim().to_string();
        if !names.insert(name.clone()) {
            return Err(Error::parse("mapping", line_no, format!("duplicate label name {name:?}")));
        }
        if by_id.insert(id, (line_no, name)).is_some() {
            return Err(Error::parse("mapping", line_no, format!("duplicate label id {id}")));
        }
    }
    if by_id.is_empty() {
        return Err(Error::Vocab("mapping file has no labels".into()));
    }
    for (expected, (&id, (line_no, _))) in by_id.iter().enumerate() {
        if id != expected {
            return Err(Error::parse("mapping", *line_no, format!("non-dense ids: expected {expected}, found {id}")));
        }
    }
    let vocab = LabelVocab::new(by_id.into_values().map(|(_, name)| name))?;
    Ok(vocab.with_background_name(background))
}

pub fn write_mapping(vocab: &LabelVocab) -> String {
    vocab
        .ids()
        .map(|id| format!("{} {}\n", id, vocab.name(id)))
        .collect()
}

/// Parses one label name per line. Trailing blank lines are ignored; blank
/// lines elsewhere are errors.
pub fn parse_labels(source_name: &str, text: &str, vocab: &LabelVocab) -> Result<Vec<LabelId>> {
    let body = text.trim_end();
    if body.is_empty() {
        return Err(Error::parse(source_name, 1, "empty label file"));
    }
    body.lines()
        .enumerate()
        .map(|(i, raw)| {
            let name = raw.trim();
            if name.is_empty() {
                return Err(Error::parse(source_name, i + 1, "blank line"));
            }
            vocab
                .id(name)
                .ok_or_else(|| Error::parse(source_name, i + 1, format!("unknown label {name:?}")))
        })
        .collect()
}

pub fn parse_frame_labels(video_id: &str, text: &str, vocab: &LabelVocab) -> Result<VideoAnnotation> {
    let labels = parse_labels(video_id, text, vocab)?;
    VideoAnnotation::new(video_id, labels, vocab)
}

/// One label name per line, each terminated by `\n`.
pub fn write_frame_labels(labels: &[LabelId], vocab: &LabelVocab) -> Result<String> {
    if labels.is_empty() {
        return Err(Error::EmptyLabelSequence);
    }
    let mut out = String::new();
    for &label in labels {
        vocab.check(label)?;
        out.push_str(vocab.name(label));
        out.push('\n');
    }
    Ok(out)
}

/// Parses a bundle file: one video file name per line.
pub fn parse_bundle(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.strip_suffix(".txt").unwrap_or(l).to_string())
        .collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Sorted `(stem, path)` of files with the given extension.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Sort key putting `split2` before `split10`.
fn fold_key(name: &str) -> (String, u64) {
    let digits = name.len() - name.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (prefix, num) = name.split_at(name.len() - digits);
    (prefix.to_string(), num.parse().unwrap_or(0))
}

fn load_splits(dir: &Path, videos: &[VideoAnnotation]) -> Result<Vec<Split>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut train: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut test: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (stem, path) in list_files(dir, "bundle")? {
        let (side, fold) = match stem.split_once('.') {
            Some(("train", fold)) => (&mut train, fold),
            Some(("test", fold)) => (&mut test, fold),
            _ => continue,
        };
        side.insert(fold.to_string(), parse_bundle(&read_to_string(&path)?));
    }
    let mut names: Vec<String> = train.keys().chain(test.keys()).cloned().collect();
    names.sort_by_key(|n| fold_key(n));
    names.dedup();
    let all: Vec<String> = videos.iter().map(|v| v.video_id().to_string()).collect();
    let complement = |ids: &[String]| -> Vec<String> {
        let set: BTreeSet<&String> = ids.iter().collect();
        all.iter().filter(|v| !set.contains(v)).cloned().collect()
    };
    Ok(names
        .into_iter()
        .map(|name| {
            let (tr, te) = match (train.remove(&name), test.remove(&name)) {
                (Some(tr), Some(te)) => (tr, te),
                (Some(tr), None) => {
                    let te = complement(&tr);
                    (tr, te)
                }
                (None, Some(te)) => (complement(&te), te),
                (None, None) => unreachable!(),
            };
            Split { name, train: tr, test: te }
        })
        .collect())
}

/// Loads a dataset. Files are parsed in parallel; the result is ordered by
/// video id so it depends only on file contents.
pub fn load_dataset(layout: &DatasetLayout) -> Result<Dataset> {
    let gt_dir = layout.groundtruth_path();
    if !gt_dir.is_dir() {
        return Err(Error::NoLabelFiles(gt_dir));
    }
    let files = list_files(&gt_dir, "txt")?;
    if files.is_empty() {
        return Err(Error::NoLabelFiles(gt_dir));
    }
    let mapping_path = layout.mapping_path();
    let vocab = parse_mapping(&read_to_string(&mapping_path)?, layout.background.as_deref())?;
    let features_dir = layout.features_path();
    let videos: Vec<VideoAnnotation> = files
        .par_iter()
        .map(|(video_id, path)| {
            let video = parse_frame_labels(video_id, &read_to_string(path)?, &vocab)?;
            match &features_dir {
                Some(dir) => {
                    let fpath = dir.join(format!("{video_id}.npy"));
                    let bytes = fs::read(&fpath).map_err(|e| Error::io(&fpath, e))?;
                    let matrix = parse_feature_file(&bytes, layout.feature_orientation)?;
                    video.with_features(Some(Arc::new(matrix)))
                }
                None => Ok(video),
            }
        })
        .collect::<Result<_>>()?;

    let splits = load_splits(&layout.splits_path(), &videos)?;
    let name = layout
        .root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string();
    Dataset::new(name, vocab, videos, splits)
}

/// Per-video predicted labels for a dataset; videos without a file are
/// recorded in `missing`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredictionSet {
    pub predictions: BTreeMap<String, Vec<LabelId>>,
    pub missing: Vec<String>,
}

impl PredictionSet {
    /// Checks every prediction against the dataset and fills `missing`.
    pub fn new(predictions: BTreeMap<String, Vec<LabelId>>, dataset: &Dataset) -> Result<Self> {
        for (video_id, labels) in &predictions {
            let gt = dataset
                .video(video_id)
                .ok_or_else(|| Error::UnknownVideo(video_id.clone()))?;
            if labels.len() != gt.len() {
                return Err(Error::LengthMismatch {
                    video_id: video_id.clone(),
                    pred: labels.len(),
                    gt: gt.len(),
                });
            }
            for &label in labels {
                dataset.vocab().check(label)?;
            }
        }
        let missing = dataset
            .videos()
            .iter()
            .map(|v| v.video_id())
            .filter(|id| !predictions.contains_key(*id))
            .map(str::to_string)
            .collect();
        Ok(PredictionSet { predictions, missing })
    }

    pub fn get(&self, video_id: &str) -> Option<&[LabelId]> {
        self.predictions.get(video_id).map(Vec::as_slice)
    }
}

/// Reads `<dir>/<video_id>.txt` prediction files in the ground-truth format.
pub fn load_predictions(dir: &Path, dataset: &Dataset) -> Result<PredictionSet> {
    let files = list_files(dir, "txt")?;
    let parsed: Vec<(String, Vec<LabelId>)> = files
        .par_iter()
        .map(|(video_id, path)| {
            let labels = parse_labels(video_id, &read_to_string(path)?, dataset.vocab())?;
            Ok((video_id.clone(), labels))
        })
        .collect::<Result<_>>()?;
    PredictionSet::new(parsed.into_iter().collect(), dataset)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` as a standard tree under `root`. Features, when bound,
/// are written in `orientation`.
pub fn write_dataset(dataset: &Dataset, root: &Path, orientation: Orientation) -> Result<()> {
    let gt_dir = root.join(GROUNDTRUTH_DIR);
    create_dir(&gt_dir)?;
    write_file(&root.join(MAPPING_FILE), write_mapping(dataset.vocab()).as_bytes())?;
    let has_features = dataset.videos().iter().any(|v| v.features().is_some());
    let feat_dir = root.join(FEATURES_DIR);
    if has_features {
        create_dir(&feat_dir)?;
    }
    dataset.videos().par_iter().try_for_each(|video| {
        let text = write_frame_labels(video.frame_labels(), dataset.vocab())?;
        write_file(&gt_dir.join(format!("{}.txt", video.video_id())), text.as_bytes())?;
        if let Some(f) = video.features() {
            write_file(
                &feat_dir.join(format!("{}.npy", video.video_id())),
                &write_oriented(f, orientation),
            )?;
        }
        Ok::<_, Error>(())
    })?;
    if !dataset.splits().is_empty() {
        let split_dir = root.join(SPLITS_DIR);
        create_dir(&split_dir)?;
        for split in dataset.splits() {
            for (side, ids) in [("train", &split.train), ("test", &split.test)] {
                let body: String = ids.iter().map(|id| format!("{id}.txt\n")).collect();
                write_file(&split_dir.join(format!("{side}.{}.bundle", split.name)), body.as_bytes())?;
            }
        }
    }
    Ok(())
}

/// Writes predictions as `<dir>/<video_id>.txt`.
pub fn write_predictions(
    predictions: &BTreeMap<String, Vec<LabelId>>,
    vocab: &LabelVocab,
    dir: &Path,
) -> Result<()> {
    create_dir(dir)?;
    for (video_id, labels) in predictions {
        let text = write_frame_labels(labels, vocab)?;
        write_file(&dir.join(format!("{video_id}.txt")), text.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab3() -> LabelVocab {
        parse_mapping("0 background\n1 take\n2 open\n", Some("background")).unwrap()
    }

    #[test]
    fn mapping_basic() {
        let v = vocab3();
        assert_eq!(v.len(), 3);
        assert_eq!(v.background(), Some(LabelId(0)));
        assert_eq!(v.id("open"), Some(LabelId(2)));
    }

    #[test]
    fn mapping_uses_ids_not_line_order() {
        let v = parse_mapping("1 b\n0 a\n", None).unwrap();
        assert_eq!(v.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(v.background(), None);
    }

    #[test]
    fn mapping_errors_carry_line_numbers() {
        let err = parse_mapping("0 a\n2 b", None).unwrap_err().to_string();
        assert!(err.contains("non-dense ids"), "{err}");
        assert!(err.contains(":2:"), "{err}");
        let err = parse_mapping("0 a\n1 a", None).unwrap_err().to_string();
        assert!(err.contains("duplicate label name") && err.contains(":2:"), "{err}");
        let err = parse_mapping("0 a\n0 b", None).unwrap_err().to_string();
        assert!(err.contains("duplicate label id"), "{err}");
        let err = parse_mapping("0 a\nx b", None).unwrap_err().to_string();
        assert!(err.contains("invalid label id"), "{err}");
        let err = parse_mapping("0 a\nlonely", None).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn gtea_sized_mapping() {
        let names = [
            "take", "open", "pour", "close", "shake", "scoop", "stir", "put", "fold", "spread",
            "background",
        ];
        let text: String = names.iter().enumerate().map(|(i, n)| format!("{i} {n}\n")).collect();
        let v = parse_mapping(&text, Some("background")).unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v.background(), Some(LabelId(10)));
    }

    #[test]
    fn frame_labels_basic() {
        let v = vocab3();
        let a = parse_frame_labels("vid", "take\ntake\nopen", &v).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.segments().len(), 2);
        assert_eq!((a.segments()[0].label, a.segments()[0].start, a.segments()[0].end), (LabelId(1), 0, 2));
        let b = parse_frame_labels("vid", "take\ntake\nopen\n", &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frame_label_errors() {
        let v = vocab3();
        let err = parse_frame_labels("vid", "take\njump\n", &v).unwrap_err().to_string();
        assert!(err.contains("vid:2") && err.contains("jump"), "{err}");
        assert!(parse_frame_labels("vid", "", &v).is_err());
        assert!(parse_frame_labels("vid", "\n\n", &v).is_err());
        let err = parse_frame_labels("vid", "take\n\nopen\n", &v).unwrap_err().to_string();
        assert!(err.contains("blank line"), "{err}");
    }

    #[test]
    fn long_label_file() {
        let v = vocab3();
        let text = "take\n".repeat(943);
        assert_eq!(parse_frame_labels("vid", &text, &v).unwrap().len(), 943);
    }

    #[test]
    fn write_labels() {
        let v = vocab3();
        assert_eq!(write_frame_labels(&[LabelId(1), LabelId(1)], &v).unwrap(), "take\ntake\n");
        assert!(write_frame_labels(&[], &v).is_err());
    }

    #[test]
    fn bundle_strips_extension() {
        assert_eq!(parse_bundle("a.txt\n\nb\n"), vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn fold_order_is_numeric() {
        let mut names = vec!["split10", "split2", "split1"];
        names.sort_by_key(|n| fold_key(n));
        assert_eq!(names, vec!["split1", "split2", "split10"]);
    }
}
