//! Feature-free and feature-only baselines, their combination, and a
//! generator of synthetic datasets with planted ordinal bias.

mod markov;
mod predict;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::Provenance;
use crate::types::LabelVocab;

pub use markov::{fit_markov, MarkovModel};
pub use predict::{
    fit_centroid, predict_hybrid, predict_ordinal, predict_visual, predict_visual_segments, CentroidModel,
    Conditioning, DecodeOptions, FirstLabel, Predictor,
};
pub use synth::{
    gen_synthetic, planted_pair_dataset, synth_label_names, PairTally, PlantedPair, SynthBookkeeping, SynthConfig,
    SYNTH_BACKGROUND,
};

pub const MODEL_FORMAT: &str = "ordbias-model";
pub const MODEL_VERSION: u32 = 1;

/// Default prior weight of the hybrid predictor.
pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ordinal,
    Visual,
    Hybrid,
}

/// Serialized model: the fitted parameters plus the vocabulary they index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provenance: Option<Provenance>,
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub vocab: Vec<String>,
    pub vocab_digest: String,
    pub fold: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub options: DecodeOptions,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub markov: Option<MarkovModel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub centroid: Option<CentroidModel>,
}

impl ModelFile {
    pub fn new(
        kind: ModelKind,
        vocab: &LabelVocab,
        fold: Option<&str>,
        markov: Option<MarkovModel>,
        centroid: Option<CentroidModel>,
        alpha: Option<f64>,
        options: DecodeOptions,
    ) -> Result<Self> {
        let file = ModelFile {
            provenance: None,
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind,
            vocab: vocab.names().to_vec(),
            vocab_digest: vocab.digest(),
            fold: fold.map(str::to_string),
            alpha,
            options,
            markov,
            centroid,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Model(format!("not a model file (format {:?})", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", self.version)));
        }
        let k = self.vocab.len();
        let need_markov = self.kind != ModelKind::Visual;
        let need_centroid = self.kind != ModelKind::Ordinal;
        match (&self.markov, need_markov) {
            (Some(m), true) => {
                m.validate()?;
                if m.k != k {
                    return Err(Error::Model(format!("Markov model has {} labels, vocabulary {k}", m.k)));
                }
            }
            (None, true) => return Err(Error::Model("missing Markov parameters".into())),
            _ => {}
        }
        match (&self.centroid, need_centroid) {
            (Some(c), true) => {
                c.validate()?;
                if c.centroids.len() != k {
                    return Err(Error::Model(format!("{} centroids for {k} labels", c.centroids.len())));
                }
            }
            (None, true) => return Err(Error::Model("missing centroids".into())),
            _ => {}
        }
        if self.kind == ModelKind::Hybrid {
            match self.alpha {
                Some(a) if (0.0..=1.0).contains(&a) => {}
                other => return Err(Error::Model(format!("hybrid model needs alpha in [0, 1], got {other:?}"))),
            }
        }
        Ok(())
    }

    /// Refuses models fitted on a different label vocabulary.
    pub fn check_vocab(&self, vocab: &LabelVocab) -> Result<()> {
        if self.vocab_digest != vocab.digest() {
            return Err(Error::VocabMismatch(format!(
                "model vocabulary [{}] differs from dataset vocabulary [{}]",
                self.vocab.join(", "),
                vocab.names().join(", ")
            )));
        }
        Ok(())
    }

    pub fn predictor(&self) -> Result<Predictor<'_>> {
        self.validate()?;
        let markov = self.markov.as_ref();
        let centroid = self.centroid.as_ref();
        Ok(match self.kind {
            ModelKind::Ordinal => Predictor::Ordinal {
                markov: markov.expect("validated"),
                options: self.options,
            },
            ModelKind::Visual => Predictor::Visual {
                centroid: centroid.expect("validated"),
            },
            ModelKind::Hybrid => Predictor::Hybrid {
                markov: markov.expect("validated"),
                centroid: centroid.expect("validated"),
                alpha: self.alpha.expect("validated"),
                options: self.options,
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("invalid model file: {e}")))?;
        file.validate()?;
        Ok(file)
    }
}
