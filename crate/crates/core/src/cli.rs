//! Command-line frontend: `evaluate`, `compare`, `subsample` and `synth`.
//!
//! Every command reads an optional JSON [`RunConfig`] (`--config`) and lets
//! individual flags override it. Exit codes: 0 success, 1 usage or
//! configuration problems, 2 data problems.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::aso::{dominance_matrix, AsoConfig, DominanceMatrix};
use crate::calibration::{calibration_report, pooled_predictions, CalibrationConfig};
use crate::data::{load_dumps, Dataset, Split, Task};
use crate::density::DensityModel;
use crate::discrimination::{aupr, auroc, loss_correlation, CorrelationLevel, TokenTau};
use crate::error::{Error, Result};
use crate::metrics::{compute_series, Aggregation, Metric, Polarity};
use crate::sampler::{
    compare_distributions, load_corpus, save_corpus, sha256_hex, subsample, DistributionComparison,
    FrequencyRow, SampleManifest, SamplePlan, SampleTask,
};
use crate::synth::{write_synth, SynthKind, SynthManifest, SynthSpec};

/// One set of dumps produced by one model under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub model: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Dump files; records carry their own split.
    pub dumps: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsampleConfig {
    pub corpus: Option<PathBuf>,
    pub target_size: usize,
    pub task: SampleTask,
    pub top_k: usize,
}

impl Default for SubsampleConfig {
    fn default() -> Self {
        SubsampleConfig {
            corpus: None,
            target_size: 1000,
            task: SampleTask::SequenceCls,
            top_k: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub runs: Vec<RunSpec>,
    /// Defaults to every metric the dumps support.
    pub metrics: Option<Vec<Metric>>,
    pub alpha: f64,
    pub bins: usize,
    pub ranges: usize,
    pub ace_threshold: f64,
    pub aggregation: Aggregation,
    /// Pool every token of a split into one tau, or average per-record taus.
    pub token_tau: TokenTau,
    /// Project features to this many principal components before fitting
    /// the density model.
    pub pca_dim: Option<usize>,
    pub aso: AsoConfig,
    /// Score files for `compare`, as `path` or `name=path`.
    pub scores: Vec<String>,
    pub subsample: SubsampleConfig,
    pub synth: SynthSpec,
    pub synth_kind: SynthKind,
    pub output_dir: PathBuf,
    /// Overrides the seeds inside `aso`, `synth` and the sub-sampling plan.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            runs: Vec::new(),
            metrics: None,
            alpha: 0.05,
            bins: 10,
            ranges: 10,
            ace_threshold: 0.0,
            aggregation: Aggregation::Mean,
            token_tau: TokenTau::Pooled,
            pca_dim: None,
            aso: AsoConfig::default(),
            scores: Vec::new(),
            subsample: SubsampleConfig::default(),
            synth: SynthSpec::default(),
            synth_kind: SynthKind::default(),
            output_dir: PathBuf::from("uqeval-out"),
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            bins: self.bins,
            ranges: self.ranges,
            ace_threshold: self.ace_threshold,
            alpha: self.alpha,
        }
    }

    fn validate_evaluate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha {} must lie in (0, 1)",
                self.alpha
            )));
        }
        if self.bins == 0 || self.ranges == 0 {
            return Err(Error::Config("bins and ranges must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ace_threshold) {
            return Err(Error::Config(format!(
                "ACE threshold {} must lie in [0, 1)",
                self.ace_threshold
            )));
        }
        if self.runs.is_empty() {
            return Err(Error::Config("no runs configured; pass --dump".into()));
        }
        for run in &self.runs {
            if run.dumps.is_empty() {
                return Err(Error::Config(format!("run `{}` lists no dumps", run.model)));
            }
            for p in &run.dumps {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "dump file {} not found",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mean and sample standard deviation over seeds; `std` only with at least
/// two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Stat { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: Metric,
    pub polarity: Polarity,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub token_tau: Option<f64>,
    pub sequence_tau: Option<f64>,
    pub token_tau_ood: Option<f64>,
    pub sequence_tau_ood: Option<f64>,
    /// A multi-sample metric met single-sample records and reported zeros.
    pub single_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub dim: usize,
    pub pca_dim: Option<usize>,
    pub jitter_used: f64,
    pub dropped_classes: Vec<usize>,
}

/// Everything measured for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub seed: Option<u64>,
    pub task: Task,
    pub classes: usize,
    pub n_id_records: usize,
    pub n_id_tokens: usize,
    pub n_ood_records: usize,
    pub n_ood_tokens: usize,
    pub n_train_tokens: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub ece: f64,
    pub sce: f64,
    pub ace: Option<f64>,
    pub coverage_pct: f64,
    pub mean_width: f64,
    pub metrics: Vec<MetricResult>,
    pub density: Option<DensitySummary>,
}

/// One `(model, metric)` row of the result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub metric: Metric,
    pub polarity: Polarity,
    pub n_seeds: usize,
    pub accuracy: Stat,
    pub macro_f1: Stat,
    pub ece: Stat,
    pub sce: Stat,
    pub ace: Option<Stat>,
    pub coverage_pct: Stat,
    pub mean_width: Stat,
    pub auroc: Option<Stat>,
    pub aupr: Option<Stat>,
    pub token_tau: Option<Stat>,
    pub sequence_tau: Option<Stat>,
    pub token_tau_ood: Option<Stat>,
    pub sequence_tau_ood: Option<Stat>,
}

/// Column order of the CSV table; each statistic expands to `_mean, _std`.
pub const RESULT_COLUMNS: [&str; 15] = [
    "accuracy",
    "macro_f1",
    "ece",
    "sce",
    "ace",
    "coverage_pct",
    "mean_width",
    "auroc",
    "aupr",
    "token_tau",
    "sequence_tau",
    "token_tau_ood",
    "sequence_tau_ood",
    "n_id_records",
    "n_ood_records",
];

impl ResultRow {
    fn stats(&self) -> [Option<Stat>; 13] {
        [
            Some(self.accuracy),
            Some(self.macro_f1),
            Some(self.ece),
            Some(self.sce),
            self.ace,
            Some(self.coverage_pct),
            Some(self.mean_width),
            self.auroc,
            self.aupr,
            self.token_tau,
            self.sequence_tau,
            self.token_tau_ood,
            self.sequence_tau_ood,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub aggregation: Aggregation,
    pub token_tau: TokenTau,
    pub alpha: f64,
    pub bins: usize,
    pub ranges: usize,
    pub rows: Vec<ResultRow>,
    pub runs: Vec<RunResult>,
}

impl ResultTable {
    pub fn row(&self, model: &str, metric: Metric) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,metric,polarity,n_seeds");
        for c in &RESULT_COLUMNS[..13] {
            let _ = write!(out, ",{c}_mean,{c}_std");
        }
        out.push_str(",n_id_records,n_ood_records\n");
        for row in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{}",
                csv_field(&row.model),
                row.metric,
                polarity_name(row.polarity),
                row.n_seeds
            );
            for s in row.stats() {
                let (m, sd) = match s {
                    Some(s) => (
                        s.mean.to_string(),
                        s.std.map(|v| v.to_string()).unwrap_or_default(),
                    ),
                    None => (String::new(), String::new()),
                };
                let _ = write!(out, ",{m},{sd}");
            }
            let runs = self.runs.iter().filter(|r| r.model == row.model);
            let (n_id, n_ood) = runs.fold((0, 0), |acc, r| {
                (acc.0 + r.n_id_records, acc.1 + r.n_ood_records)
            });
            let _ = writeln!(out, ",{n_id},{n_ood}");
        }
        out
    }
}

fn polarity_name(p: Polarity) -> &'static str {
    match p {
        Polarity::Confidence => "confidence",
        Polarity::Uncertainty => "uncertainty",
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Accuracy and macro-F1 of argmax predictions. Macro-F1 averages over the
/// classes that occur in gold.
pub fn accuracy_and_macro_f1(
    predicted: &[usize],
    gold: &[usize],
    classes: usize,
) -> Result<(f64, f64)> {
    if gold.is_empty() || predicted.len() != gold.len() {
        return Err(Error::Empty("no kept predictions to score".into()));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fne = vec![0usize; classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        if p == g {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fne[g] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let present: BTreeSet<usize> = gold.iter().copied().collect();
    let f1_sum: f64 = present
        .iter()
        .map(|&k| 2.0 * tp[k] as f64 / (2 * tp[k] + fp[k] + fne[k]) as f64)
        .sum();
    Ok((
        correct as f64 / gold.len() as f64,
        f1_sum / present.len() as f64,
    ))
}

fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(msg)) => {
            log::warn!("{msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn default_metrics(
    id: &Dataset,
    ood: Option<&Dataset>,
    density: Option<&DensityModel>,
) -> Vec<Metric> {
    let both = |f: &dyn Fn(&Dataset) -> bool| f(id) && ood.is_none_or(f);
    let mut out = vec![
        Metric::MaxProb,
        Metric::SoftmaxGap,
        Metric::PredictiveEntropy,
    ];
    if both(&Dataset::has_logits) {
        out.push(Metric::DempsterShafer);
    }
    if id.max_samples() >= 2 || ood.is_some_and(|o| o.max_samples() >= 2) {
        out.extend([Metric::ClassVariance, Metric::MutualInformation]);
    }
    if density.is_some() && both(&Dataset::has_features) {
        out.push(Metric::LogDensity);
    }
    out
}

/// Evaluates one run's dumps.
pub fn evaluate_run(run: &RunSpec, cfg: &RunConfig) -> Result<RunResult> {
    let all = load_dumps(&run.dumps)?;
    let id = all
        .split(Split::IdTest)
        .ok_or_else(|| Error::Empty(format!("run `{}` has no id_test records", run.model)))?;
    let ood = all.split(Split::OodTest);
    let train = all.split(Split::Train);

    let density = match &train {
        Some(t) if t.has_features() && id.has_features() => {
            Some(DensityModel::fit(t, cfg.pca_dim)?)
        }
        _ => None,
    };

    let (probs, gold) = pooled_predictions(&id);
    let predicted: Vec<usize> = probs.iter().map(|d| d.argmax()).collect();
    let (accuracy, macro_f1) = accuracy_and_macro_f1(&predicted, &gold, id.class_count)?;
    let cal = calibration_report(&id, &cfg.calibration())?;

    let metrics = match &cfg.metrics {
        Some(m) => m.clone(),
        None => default_metrics(&id, ood.as_ref(), density.as_ref()),
    };
    let token_task = id.task == Task::TokenClassification;
    let mut results = Vec::with_capacity(metrics.len());
    for metric in metrics {
        let s_id = compute_series(&id, metric, cfg.aggregation, density.as_ref())?;
        let token_tau = if token_task {
            undefined_as_none(loss_correlation(&id, &s_id, cfg.token_tau.level()))?
        } else {
            None
        };
        let sequence_tau =
            undefined_as_none(loss_correlation(&id, &s_id, CorrelationLevel::Sequence))?;
        let mut res = MetricResult {
            metric,
            polarity: metric.polarity(),
            auroc: None,
            aupr: None,
            token_tau,
            sequence_tau,
            token_tau_ood: None,
            sequence_tau_ood: None,
            single_sample: s_id.single_sample,
        };
        if let Some(ood) = &ood {
            let s_ood = compute_series(ood, metric, cfg.aggregation, density.as_ref())?;
            let a = s_id.canonical_sequence_scores();
            let b = s_ood.canonical_sequence_scores();
            res.auroc = Some(auroc(&a, &b)?);
            res.aupr = Some(aupr(&a, &b)?);
            if ood.task == Task::TokenClassification {
                res.token_tau_ood =
                    undefined_as_none(loss_correlation(ood, &s_ood, cfg.token_tau.level()))?;
            }
            res.sequence_tau_ood =
                undefined_as_none(loss_correlation(ood, &s_ood, CorrelationLevel::Sequence))?;
            res.single_sample |= s_ood.single_sample;
        }
        results.push(res);
    }

    Ok(RunResult {
        model: run.model.clone(),
        seed: run.seed,
        task: id.task,
        classes: id.class_count,
        n_id_records: id.len(),
        n_id_tokens: id.kept_tokens(),
        n_ood_records: ood.as_ref().map_or(0, Dataset::len),
        n_ood_tokens: ood.as_ref().map_or(0, Dataset::kept_tokens),
        n_train_tokens: train.as_ref().map_or(0, Dataset::kept_tokens),
        accuracy,
        macro_f1,
        ece: cal.ece,
        sce: cal.sce,
        ace: cal.ace,
        coverage_pct: cal.coverage_pct,
        mean_width: cal.mean_width,
        metrics: results,
        density: density.map(|d| DensitySummary {
            dim: d.gda.dim(),
            pca_dim: d.pca.as_ref().map(|p| p.output_dim()),
            jitter_used: d.gda.jitter_used(),
            dropped_classes: d.gda.dropped_classes().to_vec(),
        }),
    })
}

/// Groups runs by model (first-appearance order) and summarizes each
/// metric over seeds.
pub fn build_table(cfg: &RunConfig, runs: Vec<RunResult>) -> ResultTable {
    let mut models: Vec<&str> = Vec::new();
    for r in &runs {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut rows = Vec::new();
    for model in models {
        let group: Vec<&RunResult> = runs.iter().filter(|r| r.model == model).collect();
        let mut metrics: Vec<Metric> = Vec::new();
        for r in &group {
            for m in &r.metrics {
                if !metrics.contains(&m.metric) {
                    metrics.push(m.metric);
                }
            }
        }
        let run_stat = |f: fn(&RunResult) -> f64| {
            Stat::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("group is non-empty")
        };
        for metric in metrics {
            let per: Vec<&MetricResult> = group
                .iter()
                .filter_map(|r| r.metrics.iter().find(|m| m.metric == metric))
                .collect();
            // a column is reported only when every seed produced it
            let opt = |f: fn(&MetricResult) -> Option<f64>| {
                let vals: Option<Vec<f64>> = per.iter().map(|m| f(m)).collect();
                vals.filter(|v| v.len() == group.len())
                    .and_then(|v| Stat::of(&v))
            };
            rows.push(ResultRow {
                model: model.to_string(),
                metric,
                polarity: metric.polarity(),
                n_seeds: group.len(),
                accuracy: run_stat(|r| r.accuracy),
                macro_f1: run_stat(|r| r.macro_f1),
                ece: run_stat(|r| r.ece),
                sce: run_stat(|r| r.sce),
                ace: {
                    let vals: Option<Vec<f64>> = group.iter().map(|r| r.ace).collect();
                    vals.and_then(|v| Stat::of(&v))
                },
                coverage_pct: run_stat(|r| r.coverage_pct),
                mean_width: run_stat(|r| r.mean_width),
                auroc: opt(|m| m.auroc),
                aupr: opt(|m| m.aupr),
                token_tau: opt(|m| m.token_tau),
                sequence_tau: opt(|m| m.sequence_tau),
                token_tau_ood: opt(|m| m.token_tau_ood),
                sequence_tau_ood: opt(|m| m.sequence_tau_ood),
            });
        }
    }
    ResultTable {
        aggregation: cfg.aggregation,
        token_tau: cfg.token_tau,
        alpha: cfg.alpha,
        bins: cfg.bins,
        ranges: cfg.ranges,
        rows,
        runs,
    }
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: PathBuf, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_text(path, &text)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Evaluates every run and writes `results.json` and `results.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<ResultTable> {
    cfg.validate_evaluate()?;
    let runs = cfg
        .runs
        .iter()
        .map(|r| evaluate_run(r, cfg))
        .collect::<Result<Vec<_>>>()?;
    let table = build_table(cfg, runs);
    ensure_dir(&cfg.output_dir)?;
    write_json(cfg.output_dir.join("results.json"), &table)?;
    write_text(cfg.output_dir.join("results.csv"), &table.to_csv())?;
    Ok(table)
}

/// Reads one score per line; blank lines are skipped.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("{}: `{line}` is not a number", path.display()),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} line {}",
                path.display(),
                i + 1
            )));
        }
        out.push(v);
    }
    Ok(out)
}

fn parse_score_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(arg);
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (name, p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub aso: AsoConfig,
    pub matrix: DominanceMatrix,
}

/// Pairwise ASO over score files; writes `compare.json` and `compare.txt`.
pub fn cmd_compare(cfg: &RunConfig) -> Result<DominanceMatrix> {
    let mut aso = cfg.aso;
    if let Some(seed) = cfg.seed {
        aso.seed = seed;
    }
    aso.validate()?;
    if cfg.scores.len() < 2 {
        return Err(Error::Config(format!(
            "compare needs at least 2 score files, got {}",
            cfg.scores.len()
        )));
    }
    let mut groups = Vec::with_capacity(cfg.scores.len());
    for arg in &cfg.scores {
        let (name, path) = parse_score_arg(arg);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "score file {} not found",
                path.display()
            )));
        }
        let scores = read_scores(&path)?;
        if scores.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: scores.len(),
            });
        }
        groups.push((name, scores));
    }
    let matrix = dominance_matrix(&groups, &aso)?;
    ensure_dir(&cfg.output_dir)?;
    write_json(
        cfg.output_dir.join("compare.json"),
        &CompareReport {
            aso,
            matrix: matrix.clone(),
        },
    )?;
    write_text(cfg.output_dir.join("compare.txt"), &matrix.render())?;
    Ok(matrix)
}

fn frequency_csv(rows: &[FrequencyRow]) -> String {
    let mut out = String::from("key,source,sample\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", csv_field(&r.key), r.freq_a, r.freq_b);
    }
    out
}

/// Sub-samples a corpus and writes the sample, its manifest, and the
/// sample-vs-source comparison (`comparison.json` plus one CSV per table).
pub fn cmd_subsample(cfg: &RunConfig) -> Result<(SampleManifest, DistributionComparison)> {
    let sc = &cfg.subsample;
    let Some(path) = &sc.corpus else {
        return Err(Error::Config("no corpus given; pass --corpus".into()));
    };
    if !path.is_file() {
        return Err(Error::Config(format!(
            "corpus file {} not found",
            path.display()
        )));
    }
    if sc.top_k == 0 {
        return Err(Error::Config("top_k must be positive".into()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corpus = load_corpus(path)?;
    if sc.target_size == 0 || sc.target_size > corpus.len() {
        return Err(Error::Config(format!(
            "target size {} must be in 1..={}",
            sc.target_size,
            corpus.len()
        )));
    }
    let plan = SamplePlan {
        target_size: sc.target_size,
        seed: cfg.seed.unwrap_or(0),
        task: sc.task,
    };
    let sample = subsample(&corpus, &plan)?;
    let comparison = compare_distributions(&corpus, &sample, sc.top_k)?;
    let manifest = SampleManifest {
        seed: plan.seed,
        target_size: plan.target_size,
        task: plan.task,
        source_size: corpus.len(),
        source_digest: sha256_hex(&bytes),
    };
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    save_corpus(dir.join("sample.jsonl"), &sample)?;
    write_json(dir.join("sample.manifest.json"), &manifest)?;
    write_json(dir.join("comparison.json"), &comparison)?;
    write_text(
        dir.join("lengths.csv"),
        &frequency_csv(&comparison.tables.lengths),
    )?;
    write_text(
        dir.join("labels.csv"),
        &frequency_csv(&comparison.tables.labels),
    )?;
    write_text(
        dir.join("types.csv"),
        &frequency_csv(&comparison.tables.top_types),
    )?;
    Ok((manifest, comparison))
}

/// Generates synthetic dumps and a manifest into the output directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthManifest> {
    let mut spec = cfg.synth.clone();
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    write_synth(&cfg.output_dir, &spec, cfg.synth_kind)
}

#[derive(Debug, Parser)]
#[command(
    name = "uqeval",
    version,
    about = "Uncertainty-quality evaluation for classifier prediction dumps"
)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score dumps: task quality, calibration, OOD detection, loss correlation.
    Evaluate(EvaluateArgs),
    /// Almost-stochastic-order comparison of per-seed score files.
    Compare(CompareArgs),
    /// Stratified sub-sample of a JSONL corpus.
    Subsample(SubsampleArgs),
    /// Generate synthetic dumps with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dump file (repeatable). Replaces the configured runs with one run.
    #[arg(long = "dump")]
    pub dumps: Vec<PathBuf>,
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<Metric>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub ranges: Option<usize>,
    #[arg(long)]
    pub ace_threshold: Option<f64>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    /// `pooled` or `per-sequence`.
    #[arg(long)]
    pub token_tau: Option<TokenTau>,
    #[arg(long)]
    pub pca_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Score files as `path` or `name=path`, one value per line.
    pub scores: Vec<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub confidence_alpha: Option<f64>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<usize>,
    /// `sequence_cls` or `token_cls`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `calibrated`, `id_ood` or `multisample`.
    #[arg(long)]
    pub kind: Option<SynthKind>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_id: Option<usize>,
    #[arg(long)]
    pub n_ood: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub id_concentration: Option<f64>,
    #[arg(long)]
    pub ood_concentration: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Gold is always the argmax (overconfident by construction).
    #[arg(long)]
    pub argmax_gold: bool,
    #[arg(long)]
    pub feature_dim: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Merges the config file (if any) with command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    set(&mut cfg.output_dir, cli.output_dir.clone());
    match &cli.command {
        Command::Evaluate(a) => {
            if !a.dumps.is_empty() {
                cfg.runs = vec![RunSpec {
                    model: a.model.clone(),
                    seed: cli.seed,
                    dumps: a.dumps.clone(),
                }];
            }
            if a.metrics.is_some() {
                cfg.metrics = a.metrics.clone();
            }
            set(&mut cfg.alpha, a.alpha);
            set(&mut cfg.bins, a.bins);
            set(&mut cfg.ranges, a.ranges);
            set(&mut cfg.ace_threshold, a.ace_threshold);
            set(&mut cfg.aggregation, a.aggregation);
            set(&mut cfg.token_tau, a.token_tau);
            if a.pca_dim.is_some() {
                cfg.pca_dim = a.pca_dim;
            }
        }
        Command::Compare(a) => {
            if !a.scores.is_empty() {
                cfg.scores = a.scores.clone();
            }
            set(&mut cfg.aso.decision_threshold, a.threshold);
            set(&mut cfg.aso.confidence_alpha, a.confidence_alpha);
            set(&mut cfg.aso.n_bootstrap, a.bootstrap);
        }
        Command::Subsample(a) => {
            if a.corpus.is_some() {
                cfg.subsample.corpus = a.corpus.clone();
            }
            set(&mut cfg.subsample.target_size, a.target);
            set(&mut cfg.subsample.top_k, a.top_k);
            if let Some(t) = &a.task {
                cfg.subsample.task = serde_json::from_value(serde_json::Value::String(t.clone()))
                    .map_err(|_| Error::Config(format!("unknown task `{t}`")))?;
            }
        }
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut cfg.synth_kind, a.kind);
            set(&mut s.n_train, a.n_train);
            set(&mut s.n_id, a.n_id);
            set(&mut s.n_ood, a.n_ood);
            set(&mut s.classes, a.classes);
            set(&mut s.samples, a.samples);
            set(&mut s.steps, a.steps);
            set(&mut s.id_concentration, a.id_concentration);
            set(&mut s.ood_concentration, a.ood_concentration);
            set(&mut s.intra_sample_noise, a.noise);
            set(&mut s.feature_dim, a.feature_dim);
            if a.argmax_gold {
                s.calibrated = false;
            }
        }
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::Evaluate(_) => {
            let table = cmd_evaluate(&cfg)?;
            print!("{}", table.to_csv());
        }
        Command::Compare(_) => {
            print!("{}", cmd_compare(&cfg)?.render());
        }
        Command::Subsample(_) => {
            let (m, c) = cmd_subsample(&cfg)?;
            println!(
                "sampled {} of {} records; JS length {:.5} label {:.5} top-{} types {:.5}",
                m.target_size, m.source_size, c.length_js, c.label_js, c.top_k, c.top_type_js
            );
        }
        Command::Synth(_) => {
            let m = cmd_synth(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
