use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ordbias::baseline::{
    fit_centroid, fit_markov, gen_synthetic, DecodeOptions, ModelFile, ModelKind, SynthBookkeeping, DEFAULT_ALPHA,
};
use ordbias::ingest::{load_dataset, load_predictions, write_dataset, write_predictions, DatasetLayout, PredictionSet};
use ordbias::manipulate::{
    combine, limited_shuffle, mask_pair, mask_random, shuffle_sequences, ManipulationRecord, Method,
};
use ordbias::metrics::{
    cv_aggregate, distribution_distance, evaluate, label_distribution, masked_region_report_for, EvalReport,
    LabelHistogram, MaskedCounts, MetricOptions,
};
use ordbias::report::{grouped_bars_svg, heatmap_svg, ranked_bars_svg, Provenance};
use ordbias::stats::{
    bigram_counts, coverage_curve, coverage_rank, dominant_pair, pair_heatmap, positional_histogram,
    DominantPairCriteria,
};
use ordbias::{Dataset, LabelId, LabelVocab, SeedSpec};
use serde::{Deserialize, Serialize};

use crate::output::{check_out_dir, hash_bytes, hash_inputs, internal, provenance, CliError, OutDir};
use crate::settings::{BaselineAction, Format, Kind, ManipulateMode, Settings};

type CmdResult = Result<(), CliError>;

fn load(s: &Settings, root: &Path) -> Result<Dataset, CliError> {
    let mut layout = DatasetLayout::standard(root).with_background(Some(&s.background));
    layout.feature_orientation = s.orientation;
    Ok(load_dataset(&layout)?)
}

fn label_id(vocab: &LabelVocab, name: &str) -> Result<LabelId, CliError> {
    vocab
        .id(name)
        .ok_or_else(|| CliError::Input(format!("label {name:?} is not in the mapping")))
}

fn names(vocab: &LabelVocab) -> Vec<String> {
    vocab.names().to_vec()
}

#[derive(Serialize)]
struct NamedPair {
    prev: String,
    next: String,
    initial_share: f64,
    initial_frame_share: f64,
    follow_share: f64,
    follow_count: u64,
    prev_occurrences: u64,
}

#[derive(Serialize)]
struct CoverageSummary {
    fraction: f64,
    rank: Option<usize>,
    curve: Vec<f64>,
}

#[derive(Serialize)]
struct AuditSummary {
    provenance: Provenance,
    dataset: String,
    videos: usize,
    frames: usize,
    segments: usize,
    labels: Vec<String>,
    background: Option<String>,
    include_background: bool,
    pair_occurrences: u64,
    distinct_pairs: usize,
    coverage: CoverageSummary,
    dominant_pair_criteria: DominantPairCriteria,
    dominant_pairs: Vec<NamedPair>,
}

pub fn audit(s: &Settings) -> CmdResult {
    let root = s.single_root()?;
    let out = s.out()?;
    check_out_dir(out, &[root])?;
    let ds = load(s, root)?;
    let hash = hash_inputs(&[("root", root)])?;
    let vocab = ds.vocab();
    let hist = bigram_counts(&ds, s.include_background);
    let rank = if hist.is_empty() {
        None
    } else {
        Some(coverage_rank(&hist, s.coverage)?)
    };
    let criteria = DominantPairCriteria::default();
    let dominant = dominant_pair(&ds, &criteria)?;
    let heat = pair_heatmap(&ds);
    let positions = positional_histogram(&ds, s.bins)?;

    let dir = OutDir::create(out)?;
    if s.wants(Format::Json) {
        let summary = AuditSummary {
            provenance: provenance(Some(s.seed), hash),
            dataset: ds.name().to_string(),
            videos: ds.videos().len(),
            frames: ds.total_frames(),
            segments: ds.total_segments(),
            labels: names(vocab),
            background: vocab.background().map(|b| vocab.name(b).to_string()),
            include_background: s.include_background,
            pair_occurrences: hist.total(),
            distinct_pairs: hist.len(),
            coverage: CoverageSummary {
                fraction: s.coverage,
                rank,
                curve: coverage_curve(&hist),
            },
            dominant_pair_criteria: criteria,
            dominant_pairs: dominant
                .iter()
                .map(|d| NamedPair {
                    prev: vocab.name(d.prev).to_string(),
                    next: vocab.name(d.next).to_string(),
                    initial_share: d.initial_share,
                    initial_frame_share: d.initial_frame_share,
                    follow_share: d.follow_share,
                    follow_count: d.follow_count,
                    prev_occurrences: d.prev_occurrences,
                })
                .collect(),
        };
        dir.write_json("audit.json", &summary)?;
    }
    if s.wants(Format::Csv) {
        dir.write("pairs.csv", hist.to_csv(vocab))?;
        dir.write("heatmap.csv", heat.to_csv(vocab))?;
        dir.write("positions.csv", positions.to_csv(vocab))?;
    }
    if s.wants(Format::Svg) {
        let title = format!("{}: action pair counts (row precedes column)", ds.name());
        dir.write("heatmap.svg", heatmap_svg(&names(vocab), &heat.rows(), &title))?;
        let counts: Vec<u64> = hist.ranked().iter().map(|(_, n)| *n).collect();
        let title = format!("{}: ranked action pairs", ds.name());
        dir.write("longtail.svg", ranked_bars_svg(&counts, rank.unwrap_or(0), &title))?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RecordsFile {
    provenance: Provenance,
    method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    parts: Vec<String>,
    records: Vec<ManipulationRecord>,
}

pub fn manipulate(s: &Settings, mode: ManipulateMode) -> CmdResult {
    let out = s.out()?;
    if mode == ManipulateMode::Combine {
        return combine_roots(s, out);
    }
    let root = s.single_root()?;
    check_out_dir(out, &[root])?;
    let ds = load(s, root)?;
    let hash = hash_inputs(&[("root", root)])?;
    let seed = SeedSpec::new(s.seed);
    let pair_ids = |ds: &Dataset| -> Result<(LabelId, LabelId), CliError> {
        let (a, b) = s.pair()?;
        Ok((label_id(ds.vocab(), a)?, label_id(ds.vocab(), b)?))
    };
    let (result, records, method, pair, p) = match mode {
        ManipulateMode::MaskPair => {
            let (r, rec) = mask_pair(&ds, pair_ids(&ds)?)?;
            (r, rec, Method::MaskPair, s.pair.clone(), None)
        }
        ManipulateMode::MaskRandom => {
            let (r, rec) = mask_random(&ds, s.p, seed)?;
            (r, rec, Method::MaskRandom, None, Some(s.p))
        }
        ManipulateMode::Shuffle => {
            let (r, rec) = shuffle_sequences(&ds, seed)?;
            (r, rec, Method::Shuffle, None, None)
        }
        ManipulateMode::LimitedShuffle => {
            let (r, rec) = limited_shuffle(&ds, pair_ids(&ds)?, seed)?;
            (r, rec, Method::LimitedShuffle, s.pair.clone(), None)
        }
        ManipulateMode::Combine => unreachable!("handled above"),
    };
    write_dataset(&result, out, s.orientation).map_err(internal)?;
    let method = serde_json::to_value(method).map_err(internal)?;
    let file = RecordsFile {
        provenance: provenance(Some(s.seed), hash),
        method: method.as_str().unwrap_or_default().to_string(),
        pair,
        p,
        parts: Vec::new(),
        records,
    };
    OutDir::create(out)?.write_json("records.json", &file)
}

fn combine_roots(s: &Settings, out: &Path) -> CmdResult {
    if s.roots.len() < 2 {
        return Err(CliError::Input("combine needs at least two --root values".into()));
    }
    let inputs: Vec<&Path> = s.roots.iter().map(|p| p.as_path()).collect();
    check_out_dir(out, &inputs)?;
    let suffixes: Vec<String> = match &s.suffixes {
        Some(v) if v.len() == s.roots.len() => v.clone(),
        Some(v) => {
            return Err(CliError::Input(format!(
                "{} suffixes given for {} roots",
                v.len(),
                s.roots.len()
            )))
        }
        None => s
            .roots
            .iter()
            .map(|r| {
                r.file_name()
                    .and_then(|n| n.to_str())
                    .map(str::to_string)
                    .ok_or_else(|| CliError::Input(format!("cannot derive a suffix from {}", r.display())))
            })
            .collect::<Result<_, _>>()?,
    };
    let datasets = s.roots.iter().map(|r| load(s, r)).collect::<Result<Vec<_>, _>>()?;
    let parts: Vec<(&Dataset, &str)> = datasets.iter().zip(&suffixes).map(|(d, x)| (d, x.as_str())).collect();
    let combined = combine(&parts)?;
    let roles: Vec<String> = (0..inputs.len()).map(|i| format!("root{i}")).collect();
    let hashed: Vec<(&str, &Path)> = roles.iter().map(String::as_str).zip(inputs.iter().copied()).collect();
    let hash = hash_inputs(&hashed)?;
    write_dataset(&combined, out, s.orientation).map_err(internal)?;
    let file = RecordsFile {
        provenance: provenance(Some(s.seed), hash),
        method: "combine".into(),
        pair: None,
        p: None,
        parts: suffixes,
        records: Vec::new(),
    };
    OutDir::create(out)?.write_json("records.json", &file)
}

#[derive(Serialize)]
struct Distributions {
    labels: Vec<String>,
    prediction: Vec<u64>,
    ground_truth: Vec<u64>,
    train: Option<Vec<u64>>,
    tv_prediction_ground_truth: Option<f64>,
    tv_prediction_train: Option<f64>,
}

#[derive(Serialize)]
struct FoldEntry {
    report: EvalReport,
    distributions: Distributions,
}

#[derive(Serialize)]
struct MaskedSummary {
    totals: MaskedCounts,
    original_label_fraction: f64,
}

#[derive(Serialize)]
struct EvalFile {
    provenance: Provenance,
    include_background: bool,
    folds: Vec<FoldEntry>,
    aggregate: EvalReport,
    masked_region: Option<MaskedSummary>,
}

fn histogram_of(ds: &Dataset, ids: &[String], labels_of: impl Fn(&str) -> Option<Vec<LabelId>>) -> LabelHistogram {
    let k = ds.vocab().len();
    let mut counts = vec![0u64; k];
    for id in ids {
        if let Some(labels) = labels_of(id) {
            for (c, n) in counts.iter_mut().zip(label_distribution(&labels, k).0) {
                *c += n;
            }
        }
    }
    LabelHistogram(counts)
}

fn tv(p: &LabelHistogram, q: &LabelHistogram) -> Option<f64> {
    distribution_distance(p, q).ok()
}

pub fn eval(s: &Settings) -> CmdResult {
    let root = s.single_root()?;
    let pred_dir = s
        .pred
        .as_ref()
        .ok_or_else(|| CliError::Input("--pred is required".into()))?;
    let out = s.out()?;
    let mut inputs: Vec<(&str, &Path)> = vec![("root", root), ("pred", pred_dir)];
    if let Some(r) = &s.records {
        inputs.push(("records", r));
    }
    check_out_dir(out, &[root, pred_dir])?;
    let ds = load(s, root)?;
    let preds = load_predictions(pred_dir, &ds)?;
    let hash = hash_inputs(&inputs)?;
    let options = MetricOptions {
        include_background: s.include_background,
    };

    let fold_names: Vec<String> = match (&s.fold, &s.folds) {
        (Some(f), _) => vec![f.clone()],
        (None, Some(f)) if f == "all" => ds.splits().iter().map(|x| x.name.clone()).collect(),
        (None, Some(f)) => f.split(',').map(|x| x.trim().to_string()).collect(),
        (None, None) => Vec::new(),
    };
    let mut entries = Vec::new();
    if fold_names.is_empty() {
        let ids: Vec<String> = preds.predictions.keys().cloned().collect();
        let mut report = evaluate(&ds, &preds, Some(&ids), None, options)?;
        report.missing = preds.missing.clone();
        let distributions = distributions(&ds, &preds, &ids, None)?;
        entries.push(FoldEntry { report, distributions });
    } else {
        for name in &fold_names {
            let split = ds.split(name)?;
            let report = evaluate(&ds, &preds, Some(&split.test), Some(name), options)?;
            let train = ds.train_set(name)?;
            let distributions = distributions(&ds, &preds, &split.test, Some(&train))?;
            entries.push(FoldEntry { report, distributions });
        }
    }
    let reports: Vec<EvalReport> = entries.iter().map(|e| e.report.clone()).collect();
    let aggregate = cv_aggregate(&reports)?;

    let masked = match &s.records {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let file: RecordsFile =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let records: Vec<ManipulationRecord> = file
                .records
                .into_iter()
                .filter(|r| aggregate.per_video.contains_key(&r.video_id))
                .collect();
            Some(masked_region_report_for(&ds, &preds, &records)?)
        }
        None => None,
    };

    let dir = OutDir::create(out)?;
    let vocab = ds.vocab();
    if s.wants(Format::Csv) {
        dir.write("per_video.csv", aggregate.per_video_csv())?;
        if let Some(m) = &masked {
            dir.write("masked_regions.csv", m.intervals_csv(vocab))?;
            dir.write("masked_labels.csv", m.labels_csv(vocab))?;
        }
    }
    if s.wants(Format::Svg) {
        let d = &entries[0].distributions;
        let share = |v: &[u64]| {
            let total = v.iter().sum::<u64>().max(1) as f64;
            v.iter().map(|&n| n as f64 / total).collect::<Vec<_>>()
        };
        let mut series = Vec::new();
        if let Some(t) = &d.train {
            series.push(("train", "#1f77b4", share(t)));
        }
        series.push(("ground truth", "#2ca02c", share(&d.ground_truth)));
        series.push(("prediction", "#d62728", share(&d.prediction)));
        dir.write("distribution.svg", grouped_bars_svg(&d.labels, &series, "Label distribution (frame share)"))?;
        if let Some(m) = &masked {
            let get = |f: fn(&ordbias::metrics::LabelCounts) -> u64| {
                vocab
                    .ids()
                    .map(|id| m.label_counts.get(&id).map(f).unwrap_or(0) as f64)
                    .collect::<Vec<_>>()
            };
            let series = [
                ("original", "#1f77b4", get(|c| c.original)),
                ("masked ground truth", "#2ca02c", get(|c| c.masked_gt)),
                ("prediction", "#d62728", get(|c| c.predicted)),
            ];
            dir.write(
                "masked_labels.svg",
                grouped_bars_svg(&names(vocab), &series, "Frames inside masked regions"),
            )?;
        }
    }
    if s.wants(Format::Json) {
        let file = EvalFile {
            provenance: provenance(Some(s.seed), hash),
            include_background: s.include_background,
            folds: entries,
            aggregate,
            masked_region: masked.map(|m| MaskedSummary {
                totals: m.totals,
                original_label_fraction: m.totals.original_label_fraction(),
            }),
        };
        dir.write_json("report.json", &file)?;
    }
    Ok(())
}

fn distributions(
    ds: &Dataset,
    preds: &PredictionSet,
    ids: &[String],
    train: Option<&Dataset>,
) -> Result<Distributions, CliError> {
    let prediction = histogram_of(ds, ids, |id| preds.get(id).map(<[LabelId]>::to_vec));
    let scored: Vec<String> = ids.iter().filter(|id| preds.get(id).is_some()).cloned().collect();
    let ground_truth = histogram_of(ds, &scored, |id| ds.video(id).map(|v| v.frame_labels().to_vec()));
    let train = train.map(ordbias::metrics::dataset_label_distribution);
    Ok(Distributions {
        labels: names(ds.vocab()),
        tv_prediction_ground_truth: tv(&prediction, &ground_truth),
        tv_prediction_train: train.as_ref().and_then(|t| tv(&prediction, t)),
        prediction: prediction.0,
        ground_truth: ground_truth.0,
        train: train.map(|t| t.0),
    })
}

fn model_kind(kind: Kind) -> ModelKind {
    match kind {
        Kind::Ordinal => ModelKind::Ordinal,
        Kind::Visual => ModelKind::Visual,
        Kind::Hybrid => ModelKind::Hybrid,
    }
}

#[derive(Serialize)]
struct PredictRun {
    provenance: Provenance,
    kind: ModelKind,
    fold: Option<String>,
    alpha: Option<f64>,
    options: Option<DecodeOptions>,
    videos: Vec<String>,
}

pub fn baseline(s: &Settings, action: BaselineAction) -> CmdResult {
    let root = s.single_root()?;
    let out = s.out()?;
    match action {
        BaselineAction::Fit { kind } => {
            check_out_dir(out, &[root])?;
            let ds = load(s, root)?;
            let hash = hash_inputs(&[("root", root)])?;
            let train = match &s.fold {
                Some(f) => ds.train_set(f)?,
                None => ds.clone(),
            };
            let kind = model_kind(kind);
            let markov = (kind != ModelKind::Visual).then(|| fit_markov(&train)).transpose()?;
            let centroid = (kind != ModelKind::Ordinal).then(|| fit_centroid(&train)).transpose()?;
            let alpha = (kind == ModelKind::Hybrid).then(|| s.alpha.unwrap_or(DEFAULT_ALPHA));
            let options = DecodeOptions {
                first: s.first_label.unwrap_or_default(),
                conditioning: s.conditioning.unwrap_or_default(),
            };
            let mut model = ModelFile::new(kind, ds.vocab(), s.fold.as_deref(), markov, centroid, alpha, options)?;
            model.provenance = Some(provenance(Some(s.seed), hash));
            let mut text = model.to_json();
            text.push('\n');
            OutDir::create(out)?.write("model.json", text)
        }
        BaselineAction::Predict { kind } => {
            let model_path = s
                .model
                .as_ref()
                .ok_or_else(|| CliError::Input("--model is required".into()))?;
            check_out_dir(out, &[root])?;
            let text = fs::read_to_string(model_path)
                .map_err(|e| CliError::Input(format!("{}: {e}", model_path.display())))?;
            let mut model = ModelFile::from_json(&text)?;
            if model.kind != model_kind(kind) {
                return Err(CliError::Input(format!(
                    "{} holds a {:?} model, not {:?}",
                    model_path.display(),
                    model.kind,
                    kind
                )));
            }
            let ds = load(s, root)?;
            model.check_vocab(ds.vocab())?;
            if model.kind == ModelKind::Hybrid {
                if let Some(a) = s.alpha {
                    model.alpha = Some(a);
                }
            }
            if let Some(f) = s.first_label {
                model.options.first = f;
            }
            if let Some(c) = s.conditioning {
                model.options.conditioning = c;
            }
            let hash = hash_inputs(&[("root", root), ("model", model_path)])?;
            let subset = match &s.fold {
                Some(f) => ds.test_set(f)?,
                None => ds.clone(),
            };
            let predictions: BTreeMap<String, Vec<LabelId>> = model.predictor()?.predict_dataset(&subset)?;
            write_predictions(&predictions, ds.vocab(), out).map_err(internal)?;
            let run = PredictRun {
                provenance: provenance(Some(s.seed), hash),
                kind: model.kind,
                fold: s.fold.clone(),
                alpha: model.alpha,
                options: (model.kind != ModelKind::Visual).then_some(model.options),
                videos: predictions.keys().cloned().collect(),
            };
            OutDir::create(out)?.write_json("run.json", &run)
        }
    }
}

#[derive(Serialize)]
struct BookkeepingFile {
    provenance: Provenance,
    #[serde(flatten)]
    bookkeeping: SynthBookkeeping,
}

pub fn synth(s: &Settings) -> CmdResult {
    let out = s.out()?;
    let mut config = s.synth.clone();
    if let Some(f) = &s.folds {
        config.folds = f
            .parse()
            .map_err(|_| CliError::Input(format!("--folds for synth must be a number, got {f:?}")))?;
    }
    let (ds, bookkeeping) = gen_synthetic(&config)?;
    write_dataset(&ds, out, s.orientation).map_err(internal)?;
    let file = BookkeepingFile {
        provenance: provenance(Some(config.seed), hash_bytes(&serde_json::to_vec(&config).map_err(internal)?)),
        bookkeeping,
    };
    OutDir::create(out)?.write_json("bookkeeping.json", &file)
}
