//! Prediction dumps: the record model, JSON Lines ingestion and validation,
//! masking, and the probability/loss primitives every other module builds on.
//!
//! A dump line looks like
//!
//! ```json
//! {"id":"s1","split":"id_test","logits":[[[2.0,0.1,-1.0]]],"gold":[0]}
//! ```
//!
//! `logits` is nested `samples × steps × classes`. A record may carry `probs`
//! with the same shape instead of `logits`; logit-only metrics are then
//! reported as unavailable. `mask` (one boolean per step, `true` = keep) and
//! `features` (`steps × dim`) are optional. Unknown keys are ignored.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gold label marking a step that takes part in no computation.
pub const IGNORE_INDEX: i64 = -100;

/// Probabilities are clamped to this floor before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

const DIST_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdTest,
    OodTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "id_test" => Ok(Split::IdTest),
            "ood_test" => Ok(Split::OodTest),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SequenceClassification,
    TokenClassification,
}

/// A categorical distribution over `K` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates entries in `[0, 1]` summing to one within `1e-6`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("distribution".into()));
        }
        if probs
            .iter()
            .any(|&p| !(0.0..=1.0 + DIST_SUM_TOL).contains(&p))
        {
            return Err(Error::InvalidArgument(
                "distribution entries must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {total}, not 1"
            )));
        }
        Ok(Distribution { probs })
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Distribution { probs }
    }

    pub fn uniform(classes: usize) -> Self {
        Distribution {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn one_hot(classes: usize, hot: usize) -> Self {
        let mut probs = vec![0.0; classes];
        probs[hot] = 1.0;
        Distribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }
}

/// The `S` predicted distributions for a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dists: Vec<Distribution>,
}

impl SampleSet {
    pub fn new(dists: Vec<Distribution>) -> Result<Self> {
        let Some(first) = dists.first() else {
            return Err(Error::Empty("sample set".into()));
        };
        let k = first.classes();
        if dists.iter().any(|d| d.classes() != k) {
            return Err(Error::InvalidArgument(
                "sample set members disagree on class count".into(),
            ));
        }
        Ok(SampleSet { dists })
    }

    pub fn dists(&self) -> &[Distribution] {
        &self.dists
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.dists[0].classes()
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Distribution> {
    if logits.is_empty() {
        return Err(Error::Empty("logit vector".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Distribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Distribution { probs }
}

/// Negative log-likelihood of `gold` in nats, with the probability clamped
/// at [`PROB_FLOOR`].
pub fn token_nll(dist: &Distribution, gold: i64) -> Result<f64> {
    if gold == IGNORE_INDEX {
        return Err(Error::MaskedToken);
    }
    if gold < 0 || gold as usize >= dist.classes() {
        return Err(Error::InvalidArgument(format!(
            "gold label {gold} outside [0, {})",
            dist.classes()
        )));
    }
    let p = dist.probs[gold as usize].max(PROB_FLOOR);
    Ok((-p.ln()).max(0.0))
}

/// Elementwise arithmetic mean of the sample set.
pub fn mean_distribution(ss: &SampleSet) -> Distribution {
    let k = ss.classes();
    let mut mean = vec![0.0; k];
    for d in &ss.dists {
        for (m, p) in mean.iter_mut().zip(&d.probs) {
            *m += p;
        }
    }
    let s = ss.len() as f64;
    for m in &mut mean {
        *m /= s;
    }
    Distribution { probs: mean }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Logits,
    Probs,
}

/// One instance of a prediction dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub split: Split,
    samples: usize,
    steps: usize,
    classes: usize,
    kind: ScoreKind,
    /// Flattened `[samples][steps][classes]`.
    values: Vec<f64>,
    gold: Vec<i64>,
    explicit_mask: Option<Vec<bool>>,
    keep: Vec<bool>,
    features: Option<Vec<Vec<f64>>>,
}

impl PredictionRecord {
    /// Builds a record from logits shaped `samples × steps × classes`.
    pub fn from_logits(
        id: impl Into<String>,
        split: Split,
        logits: Vec<Vec<Vec<f64>>>,
        gold: Vec<i64>,
    ) -> Result<Self> {
        Self::build(
            id.into(),
            split,
            ScoreKind::Logits,
            logits,
            gold,
            None,
            None,
        )
    }

    /// Builds a record from probabilities shaped `samples × steps × classes`.
    pub fn from_probs(
        id: impl Into<String>,
        split: Split,
        probs: Vec<Vec<Vec<f64>>>,
        gold: Vec<i64>,
    ) -> Result<Self> {
        Self::build(id.into(), split, ScoreKind::Probs, probs, gold, None, None)
    }

    pub fn with_mask(self, mask: Vec<bool>) -> Result<Self> {
        let nested = self.nested_values();
        Self::build(
            self.id,
            self.split,
            self.kind,
            nested,
            self.gold,
            Some(mask),
            self.features,
        )
    }

    pub fn with_features(self, features: Vec<Vec<f64>>) -> Result<Self> {
        let nested = self.nested_values();
        Self::build(
            self.id,
            self.split,
            self.kind,
            nested,
            self.gold,
            self.explicit_mask,
            Some(features),
        )
    }

    fn build(
        id: String,
        split: Split,
        kind: ScoreKind,
        nested: Vec<Vec<Vec<f64>>>,
        gold: Vec<i64>,
        mask: Option<Vec<bool>>,
        features: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let dim_err = |message: String| Error::Dimension {
            id: id.clone(),
            message,
        };
        let samples = nested.len();
        if samples == 0 {
            return Err(dim_err("at least one sample is required".into()));
        }
        let steps = nested[0].len();
        if steps == 0 {
            return Err(dim_err("at least one step is required".into()));
        }
        let classes = nested[0][0].len();
        if classes < 2 {
            return Err(dim_err(format!("need at least 2 classes, found {classes}")));
        }
        let mut values = Vec::with_capacity(samples * steps * classes);
        for (s, sample) in nested.iter().enumerate() {
            if sample.len() != steps {
                return Err(dim_err(format!(
                    "sample {s} has {} steps, expected {steps}",
                    sample.len()
                )));
            }
            for (t, row) in sample.iter().enumerate() {
                if row.len() != classes {
                    return Err(dim_err(format!(
                        "sample {s} step {t} has {} classes, expected {classes}",
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "record `{id}` sample {s} step {t}"
                    )));
                }
                if kind == ScoreKind::Probs {
                    Distribution::new(row.clone())
                        .map_err(|e| dim_err(format!("sample {s} step {t}: {e}")))?;
                }
                values.extend_from_slice(row);
            }
        }
        if gold.len() != steps {
            return Err(dim_err(format!(
                "gold has {} entries, expected {steps}",
                gold.len()
            )));
        }
        for (t, &g) in gold.iter().enumerate() {
            if g != IGNORE_INDEX && (g < 0 || g as usize >= classes) {
                return Err(Error::LabelRange {
                    id,
                    step: t,
                    label: g,
                    classes,
                });
            }
        }
        if let Some(m) = &mask {
            if m.len() != steps {
                return Err(dim_err(format!(
                    "mask has {} entries, expected {steps}",
                    m.len()
                )));
            }
        }
        if let Some(f) = &features {
            if f.len() != steps {
                return Err(dim_err(format!(
                    "features have {} rows, expected {steps}",
                    f.len()
                )));
            }
            let dim = f[0].len();
            if dim == 0 {
                return Err(dim_err("feature vectors are empty".into()));
            }
            for (t, row) in f.iter().enumerate() {
                if row.len() != dim {
                    return Err(dim_err(format!(
                        "feature row {t} has {} entries, expected {dim}",
                        row.len()
                    )));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("record `{id}` features")));
                }
            }
        }
        let keep = gold
            .iter()
            .enumerate()
            .map(|(t, &g)| g != IGNORE_INDEX && mask.as_ref().is_none_or(|m| m[t]))
            .collect();
        Ok(PredictionRecord {
            id,
            split,
            samples,
            steps,
            classes,
            kind,
            values,
            gold,
            explicit_mask: mask,
            keep,
            features,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn has_logits(&self) -> bool {
        self.kind == ScoreKind::Logits
    }

    pub fn gold(&self) -> &[i64] {
        &self.gold
    }

    /// The mask as written in the dump, if any.
    pub fn explicit_mask(&self) -> Option<&[bool]> {
        self.explicit_mask.as_deref()
    }

    /// `true` where a step takes part in computations (sentinel-derived mask
    /// intersected with the explicit one).
    pub fn keep_mask(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, step: usize) -> bool {
        self.keep[step]
    }

    pub fn kept_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.steps).filter(|&t| self.keep[t])
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn features(&self) -> Option<&[Vec<f64>]> {
        self.features.as_deref()
    }

    /// Raw scores (logits or probabilities) for one sample and step.
    pub fn raw(&self, sample: usize, step: usize) -> &[f64] {
        let start = (sample * self.steps + step) * self.classes;
        &self.values[start..start + self.classes]
    }

    /// Logits for one sample and step, or `None` for probability dumps.
    pub fn logits(&self, sample: usize, step: usize) -> Option<&[f64]> {
        self.has_logits().then(|| self.raw(sample, step))
    }

    pub fn distribution(&self, sample: usize, step: usize) -> Distribution {
        let raw = self.raw(sample, step);
        match self.kind {
            ScoreKind::Logits => softmax_unchecked(raw),
            ScoreKind::Probs => Distribution::from_raw(raw.to_vec()),
        }
    }

    pub fn sample_set(&self, step: usize) -> SampleSet {
        SampleSet {
            dists: (0..self.samples)
                .map(|s| self.distribution(s, step))
                .collect(),
        }
    }

    pub fn mean_distribution(&self, step: usize) -> Distribution {
        if self.samples == 1 {
            return self.distribution(0, step);
        }
        mean_distribution(&self.sample_set(step))
    }

    /// Elementwise mean of the logits across samples at one step.
    pub fn mean_logits(&self, step: usize) -> Option<Vec<f64>> {
        if !self.has_logits() {
            return None;
        }
        let mut mean = vec![0.0; self.classes];
        for s in 0..self.samples {
            for (m, z) in mean.iter_mut().zip(self.raw(s, step)) {
                *m += z;
            }
        }
        let n = self.samples as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Some(mean)
    }

    /// Per-step loss at every kept step, in step order.
    pub fn token_losses(&self) -> Vec<f64> {
        self.kept_steps()
            .map(|t| {
                token_nll(&self.mean_distribution(t), self.gold[t])
                    .expect("kept steps carry valid gold labels")
            })
            .collect()
    }

    fn nested_values(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.samples)
            .map(|s| (0..self.steps).map(|t| self.raw(s, t).to_vec()).collect())
            .collect()
    }
}

/// Mean token loss over the kept steps of a record, each token scored with
/// its mean distribution.
pub fn sequence_loss(record: &PredictionRecord) -> Result<f64> {
    let losses = record.token_losses();
    if losses.is_empty() {
        return Err(Error::FullyMasked {
            id: record.id.clone(),
        });
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<PredictionRecord>,
    pub class_count: usize,
    pub task: Task,
}

impl Dataset {
    /// Checks class-count consistency and infers the task: sequence
    /// classification when every record has a single step.
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::Empty("dataset has no records".into()));
        };
        let class_count = first.classes;
        for r in &records {
            if r.classes != class_count {
                return Err(Error::ClassCountMismatch {
                    id: r.id.clone(),
                    expected: class_count,
                    found: r.classes,
                });
            }
        }
        let task = if records.iter().all(|r| r.steps == 1) {
            Task::SequenceClassification
        } else {
            Task::TokenClassification
        };
        Ok(Dataset {
            records,
            class_count,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one split, in file order. `None` if the split is absent.
    pub fn split(&self, split: Split) -> Option<Dataset> {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect();
        if records.is_empty() {
            return None;
        }
        Some(Dataset {
            records,
            class_count: self.class_count,
            task: self.task,
        })
    }

    pub fn has_logits(&self) -> bool {
        self.records.iter().all(PredictionRecord::has_logits)
    }

    pub fn has_features(&self) -> bool {
        self.records.iter().all(|r| r.features.is_some())
    }

    pub fn max_samples(&self) -> usize {
        self.records.iter().map(|r| r.samples).max().unwrap_or(0)
    }

    pub fn kept_tokens(&self) -> usize {
        self.records.iter().map(PredictionRecord::kept_count).sum()
    }

    /// Concatenates datasets in the given order.
    pub fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
        Dataset::new(parts.into_iter().flat_map(|d| d.records).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<Vec<Vec<f64>>>>,
    gold: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
}

impl RawRecord {
    fn into_record(self) -> Result<PredictionRecord> {
        let (kind, nested) = match (self.logits, self.probs) {
            (Some(l), None) => (ScoreKind::Logits, l),
            (None, Some(p)) => (ScoreKind::Probs, p),
            (Some(_), Some(_)) => {
                return Err(Error::Dimension {
                    id: self.id,
                    message: "both `logits` and `probs` present".into(),
                })
            }
            (None, None) => {
                return Err(Error::Dimension {
                    id: self.id,
                    message: "missing `logits`".into(),
                })
            }
        };
        PredictionRecord::build(
            self.id,
            self.split,
            kind,
            nested,
            self.gold,
            self.mask,
            self.features,
        )
    }

    fn from_record(r: &PredictionRecord) -> Self {
        let nested = r.nested_values();
        let (logits, probs) = match r.kind {
            ScoreKind::Logits => (Some(nested), None),
            ScoreKind::Probs => (None, Some(nested)),
        };
        RawRecord {
            id: r.id.clone(),
            split: r.split,
            logits,
            probs,
            gold: r.gold.clone(),
            mask: r.explicit_mask.clone(),
            features: r.features.clone(),
        }
    }
}

/// Parses one dump line.
pub fn parse_record(line: &str) -> Result<PredictionRecord> {
    let raw: RawRecord = serde_json::from_str(line)?;
    raw.into_record()
}

/// Reads a JSON Lines dump. Blank lines are skipped.
pub fn read_dump(reader: impl BufRead) -> Result<Dataset> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(raw.into_record()?);
    }
    Dataset::new(records)
}

pub fn load_dump(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dump(BufReader::new(file))
}

/// Loads several dumps and concatenates them in argument order.
pub fn load_dumps<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let parts = paths.iter().map(load_dump).collect::<Result<Vec<_>>>()?;
    Dataset::concat(parts)
}

pub fn write_record(mut writer: impl Write, record: &PredictionRecord) -> Result<()> {
    serde_json::to_writer(&mut writer, &RawRecord::from_record(record))?;
    writer.write_all(b"\n").map_err(|e| Error::io("<dump>", e))
}

pub fn write_dump(mut writer: impl Write, records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        write_record(&mut writer, r)?;
    }
    Ok(())
}

pub fn save_dump(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dump(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}
