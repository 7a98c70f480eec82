//! Command-line flags, the optional TOML config file, and their merge.
//! A flag given on the command line always wins over the file.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ordbias::baseline::{Conditioning, FirstLabel, SynthConfig};
use ordbias::Orientation;
use serde::Deserialize;

use crate::output::CliError;

#[derive(Parser, Debug)]
#[command(name = "ordbias", version, about = "Audit and manipulate ordinal bias in action segmentation datasets")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Pair statistics, heatmap, positional histograms and dominant pairs.
    Audit,
    /// Write a manipulated copy of a dataset.
    Manipulate {
        #[command(subcommand)]
        mode: ManipulateMode,
    },
    /// Score prediction files against a dataset.
    Eval,
    /// Fit a baseline or predict with a fitted one.
    Baseline {
        #[command(subcommand)]
        action: BaselineAction,
    },
    /// Generate a synthetic dataset with planted ordinal bias.
    Synth,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManipulateMode {
    /// Mask every `b` segment that follows an `a` segment (`--pair a,b`).
    MaskPair,
    /// Mask each non-background segment with probability `--p`.
    MaskRandom,
    /// Randomly permute each video's segments.
    Shuffle,
    /// Swap each `b` following `a` with a random other segment (`--pair a,b`).
    LimitedShuffle,
    /// Union of several dataset roots (repeat `--root`).
    Combine,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineAction {
    /// Fit on the training videos of `--fold` and write model.json.
    Fit {
        #[arg(value_enum)]
        kind: Kind,
    },
    /// Predict with `--model` and write one label file per video.
    Predict {
        #[arg(value_enum)]
        kind: Kind,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Ordinal,
    Visual,
    Hybrid,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureLayout {
    DimsByFrames,
    FramesByDims,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionOn {
    Predicted,
    GroundTruth,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstMode {
    Argmax,
    GroundTruth,
}

#[derive(Args, Debug, Default)]
pub struct Flags {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset root; repeat for `manipulate combine`.
    #[arg(long, global = true)]
    pub root: Vec<PathBuf>,
    /// Output directory; must differ from every input.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Label pair as `a,b`.
    #[arg(long, global = true)]
    pub pair: Option<String>,
    /// Masking probability for mask-random.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Prior weight of the hybrid baseline.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Fold count for synth; fold names (or `all`) for eval.
    #[arg(long, global = true)]
    pub folds: Option<String>,
    /// Single fold for baseline fit/predict and eval.
    #[arg(long, global = true)]
    pub fold: Option<String>,
    /// Count background frames, segments and pairs.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub include_background: Option<bool>,
    #[arg(long, global = true, value_delimiter = ',', value_enum)]
    pub format: Option<Vec<Format>>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Name of the "no action" label.
    #[arg(long, global = true)]
    pub background: Option<String>,
    /// Directory of prediction files (eval).
    #[arg(long, global = true)]
    pub pred: Option<PathBuf>,
    /// records.json from a mask operation (eval).
    #[arg(long, global = true)]
    pub records: Option<PathBuf>,
    /// model.json from `baseline fit`.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Video id suffixes for combine, one per root.
    #[arg(long, global = true, value_delimiter = ',')]
    pub suffixes: Option<Vec<String>>,
    #[arg(long, global = true, value_enum)]
    pub feature_layout: Option<FeatureLayout>,
    #[arg(long, global = true, value_enum)]
    pub conditioning: Option<ConditionOn>,
    #[arg(long, global = true, value_enum)]
    pub first_label: Option<FirstMode>,
    /// Positional histogram bins (audit).
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Pair-mass fraction for the coverage rank (audit).
    #[arg(long, global = true)]
    pub coverage: Option<f64>,
    /// Number of synthetic videos.
    #[arg(long, global = true)]
    pub videos: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(untagged)]
enum OneOrMany {
    #[default]
    None,
    One(PathBuf),
    Many(Vec<PathBuf>),
}

#[derive(Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    root: OneOrMany,
    out: Option<PathBuf>,
    seed: Option<u64>,
    pair: Option<String>,
    p: Option<f64>,
    alpha: Option<f64>,
    folds: Option<toml::Value>,
    fold: Option<String>,
    include_background: Option<bool>,
    format: Option<Vec<Format>>,
    threads: Option<usize>,
    background: Option<String>,
    pred: Option<PathBuf>,
    records: Option<PathBuf>,
    model: Option<PathBuf>,
    suffixes: Option<Vec<String>>,
    feature_layout: Option<FeatureLayout>,
    conditioning: Option<ConditionOn>,
    first_label: Option<FirstMode>,
    bins: Option<usize>,
    coverage: Option<f64>,
    videos: Option<usize>,
    synth: Option<SynthConfig>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub roots: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub pair: Option<(String, String)>,
    pub p: f64,
    pub alpha: Option<f64>,
    pub folds: Option<String>,
    pub fold: Option<String>,
    pub include_background: bool,
    pub formats: Vec<Format>,
    pub threads: Option<usize>,
    pub background: String,
    pub pred: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub suffixes: Option<Vec<String>>,
    pub orientation: Orientation,
    pub conditioning: Option<Conditioning>,
    pub first_label: Option<FirstLabel>,
    pub bins: usize,
    pub coverage: f64,
    pub synth: SynthConfig,
}

pub const DEFAULT_BACKGROUND: &str = "background";
pub const DEFAULT_P: f64 = 0.15;

fn parse_pair(text: &str) -> Result<(String, String), CliError> {
    match text.split_once(',') {
        Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() && !b.contains(',') => {
            Ok((a.trim().to_string(), b.trim().to_string()))
        }
        _ => Err(CliError::Input(format!("--pair expects `a,b`, got {text:?}"))),
    }
}

impl Settings {
    pub fn resolve(flags: Flags) -> Result<Settings, CliError> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let roots = if !flags.root.is_empty() {
            flags.root
        } else {
            match file.root {
                OneOrMany::None => Vec::new(),
                OneOrMany::One(p) => vec![p],
                OneOrMany::Many(v) => v,
            }
        };
        let folds = match flags.folds {
            Some(f) => Some(f),
            None => match file.folds {
                None => None,
                Some(toml::Value::String(s)) => Some(s),
                Some(toml::Value::Integer(n)) => Some(n.to_string()),
                Some(toml::Value::Array(items)) => Some(
                    items
                        .iter()
                        .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                        .collect::<Vec<_>>()
                        .join(","),
                ),
                Some(other) => return Err(CliError::Input(format!("folds: unsupported value {other}"))),
            },
        };
        let pair = flags.pair.or(file.pair).map(|p| parse_pair(&p)).transpose()?;
        let mut formats = flags.format.or(file.format).unwrap_or_else(|| vec![Format::Csv, Format::Json]);
        formats.sort();
        formats.dedup();
        let orientation = match flags.feature_layout.or(file.feature_layout) {
            Some(FeatureLayout::FramesByDims) => Orientation::FramesByDims,
            Some(FeatureLayout::DimsByFrames) | None => Orientation::DimsByFrames,
        };
        let conditioning = flags.conditioning.or(file.conditioning).map(|c| match c {
            ConditionOn::GroundTruth => Conditioning::GroundTruth,
            ConditionOn::Predicted => Conditioning::Predicted,
        });
        let first_label = flags.first_label.or(file.first_label).map(|f| match f {
            FirstMode::GroundTruth => FirstLabel::GroundTruth,
            FirstMode::Argmax => FirstLabel::Argmax,
        });
        let seed = flags.seed.or(file.seed);
        let mut synth = file.synth.unwrap_or_default();
        if let Some(seed) = seed {
            synth.seed = seed;
        }
        if let Some(n) = flags.videos.or(file.videos) {
            synth.videos = n;
        }
        Ok(Settings {
            roots,
            out: flags.out.or(file.out),
            seed: seed.unwrap_or(synth.seed),
            pair,
            p: flags.p.or(file.p).unwrap_or(DEFAULT_P),
            alpha: flags.alpha.or(file.alpha),
            folds,
            fold: flags.fold.or(file.fold),
            include_background: flags.include_background.or(file.include_background).unwrap_or(true),
            formats,
            threads: flags.threads.or(file.threads),
            background: flags
                .background
                .or(file.background)
                .unwrap_or_else(|| DEFAULT_BACKGROUND.to_string()),
            pred: flags.pred.or(file.pred),
            records: flags.records.or(file.records),
            model: flags.model.or(file.model),
            suffixes: flags.suffixes.or(file.suffixes),
            orientation,
            conditioning,
            first_label,
            bins: flags.bins.or(file.bins).unwrap_or(10),
            coverage: flags.coverage.or(file.coverage).unwrap_or(0.3),
            synth,
        })
    }

    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }

    pub fn single_root(&self) -> Result<&PathBuf, CliError> {
        match self.roots.as_slice() {
            [root] => Ok(root),
            [] => Err(CliError::Input("--root is required".into())),
            _ => Err(CliError::Input("this command takes a single --root".into())),
        }
    }

    pub fn out(&self) -> Result<&PathBuf, CliError> {
        self.out.as_ref().ok_or_else(|| CliError::Input("--out is required".into()))
    }

    pub fn pair(&self) -> Result<&(String, String), CliError> {
        self.pair
            .as_ref()
            .ok_or_else(|| CliError::Input("--pair a,b is required".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_syntax() {
        assert_eq!(parse_pair("close,put").unwrap(), ("close".into(), "put".into()));
        assert!(parse_pair("close").is_err());
        assert!(parse_pair("a,b,c").is_err());
        assert!(parse_pair(",b").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "root = \"data\"\nseed = 3\np = 0.5\ninclude-background = false\nformat = [\"svg\"]\n[synth]\nvideos = 12\n",
        )
        .unwrap();
        let flags = Flags {
            config: Some(path.clone()),
            seed: Some(9),
            ..Default::default()
        };
        let s = Settings::resolve(flags).unwrap();
        assert_eq!(s.roots, vec![PathBuf::from("data")]);
        assert_eq!(s.seed, 9);
        assert_eq!(s.synth.seed, 9);
        assert_eq!(s.synth.videos, 12);
        assert_eq!(s.p, 0.5);
        assert!(!s.include_background);
        assert_eq!(s.formats, vec![Format::Svg]);

        fs::write(&path, "bogus = 1\n").unwrap();
        let flags = Flags {
            config: Some(path),
            ..Default::default()
        };
        assert!(matches!(Settings::resolve(flags), Err(CliError::Input(_))));
    }
}
