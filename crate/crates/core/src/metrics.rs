//! Uncertainty metrics over predicted distributions, logits and feature
//! densities, plus step-to-sequence aggregation.
//!
//! Every metric has a fixed polarity. Confidence metrics (higher = more
//! certain) are negated by [`MetricSeries::canonical_sequence_scores`] and
//! friends, so that everything downstream (AUROC, Kendall's tau) sees scores
//! where higher means more uncertain.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mean_distribution, Dataset, Distribution, SampleSet, PROB_FLOOR};
use crate::density::DensityModel;
use crate::error::{Error, Result};

/// Pre-clamp tolerance for negative mutual information.
pub const MI_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MaxProb,
    SoftmaxGap,
    PredictiveEntropy,
    DempsterShafer,
    ClassVariance,
    MutualInformation,
    LogDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Confidence,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Single,
    Multi,
    Feature,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::MaxProb,
        Metric::SoftmaxGap,
        Metric::PredictiveEntropy,
        Metric::DempsterShafer,
        Metric::ClassVariance,
        Metric::MutualInformation,
        Metric::LogDensity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MaxProb => "max_prob",
            Metric::SoftmaxGap => "softmax_gap",
            Metric::PredictiveEntropy => "predictive_entropy",
            Metric::DempsterShafer => "dempster_shafer",
            Metric::ClassVariance => "class_variance",
            Metric::MutualInformation => "mutual_information",
            Metric::LogDensity => "log_density",
        }
    }

    pub fn polarity(self) -> Polarity {
        match self {
            Metric::MaxProb | Metric::SoftmaxGap | Metric::LogDensity => Polarity::Confidence,
            _ => Polarity::Uncertainty,
        }
    }

    pub fn arity(self) -> Arity {
        match self {
            Metric::ClassVariance | Metric::MutualInformation => Arity::Multi,
            Metric::LogDensity => Arity::Feature,
            _ => Arity::Single,
        }
    }

    /// Maps a raw score to uncertainty orientation.
    pub fn canonicalize(self, raw: f64) -> f64 {
        match self.polarity() {
            Polarity::Confidence => -raw,
            Polarity::Uncertainty => raw,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

pub fn max_prob(d: &Distribution) -> f64 {
    d.probs().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Difference between the two largest probabilities.
pub fn softmax_gap(d: &Distribution) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in d.probs() {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    (first - second).clamp(0.0, 1.0)
}

/// Shannon entropy in nats of a probability vector, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.max(PROB_FLOOR).ln())
        .sum();
    h.clamp(0.0, (probs.len() as f64).ln())
}

pub fn predictive_entropy(d: &Distribution) -> f64 {
    entropy(d.probs())
}

/// `K / (K + sum_k exp(z_k))`, evaluated as a logistic of
/// `max + ln sum exp(z - max) - ln K` so large logits cannot overflow.
pub fn dempster_shafer(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::Empty("logit vector".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let k = logits.len() as f64;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let x = max + scaled.ln() - k.ln();
    Ok(if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    })
}

/// Mean over classes of the population variance across samples.
/// Zero for a single sample.
pub fn class_variance(ss: &SampleSet) -> f64 {
    if ss.len() < 2 {
        return 0.0;
    }
    let mean = mean_distribution(ss);
    let s = ss.len() as f64;
    let k = ss.classes();
    let mut total = 0.0;
    for (c, &m) in mean.probs().iter().enumerate() {
        let var: f64 = ss
            .dists()
            .iter()
            .map(|d| (d.probs()[c] - m).powi(2))
            .sum::<f64>()
            / s;
        total += var;
    }
    total / k as f64
}

/// Decomposition of the predictive entropy of a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutualInformation {
    /// Entropy of the mean distribution.
    pub total: f64,
    /// Mean entropy of the individual samples.
    pub aleatoric: f64,
    /// `total - aleatoric`, clamped at zero.
    pub epistemic: f64,
}

pub fn mutual_information(ss: &SampleSet) -> Result<MutualInformation> {
    let total = entropy(mean_distribution(ss).probs());
    if ss.len() < 2 {
        return Ok(MutualInformation {
            total,
            aleatoric: total,
            epistemic: 0.0,
        });
    }
    let aleatoric = ss.dists().iter().map(|d| entropy(d.probs())).sum::<f64>() / ss.len() as f64;
    let raw = total - aleatoric;
    if raw < -MI_TOLERANCE {
        return Err(Error::NumericalFault(format!(
            "mutual information {raw} below tolerance"
        )));
    }
    Ok(MutualInformation {
        total,
        aleatoric,
        epistemic: raw.max(0.0),
    })
}

pub fn aggregate_sequence(step_scores: &[f64], mode: Aggregation) -> Result<f64> {
    if step_scores.is_empty() {
        return Err(Error::Empty("no step scores to aggregate".into()));
    }
    Ok(match mode {
        Aggregation::Mean => step_scores.iter().sum::<f64>() / step_scores.len() as f64,
        Aggregation::Max => step_scores
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Per-token and per-sequence scores of one metric over a dataset, raw
/// polarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: Metric,
    pub polarity: Polarity,
    pub aggregation: Aggregation,
    /// Scores at kept steps only, one list per record.
    pub token_scores: Vec<Vec<f64>>,
    pub sequence_scores: Vec<f64>,
    /// Set when a multi-sample metric saw records with a single sample and
    /// therefore reported zeros.
    pub single_sample: bool,
}

impl MetricSeries {
    pub fn canonical_sequence_scores(&self) -> Vec<f64> {
        self.sequence_scores
            .iter()
            .map(|&v| self.metric.canonicalize(v))
            .collect()
    }

    /// Token scores of every record flattened in record order, uncertainty
    /// orientation.
    pub fn canonical_token_scores(&self) -> Vec<f64> {
        self.token_scores
            .iter()
            .flatten()
            .map(|&v| self.metric.canonicalize(v))
            .collect()
    }
}

/// Checks that the dataset carries what `metric` consumes.
pub fn check_available(ds: &Dataset, metric: Metric, density: Option<&DensityModel>) -> Result<()> {
    let unavailable = |reason: &str| Error::Unavailable {
        metric: metric.name().into(),
        reason: reason.into(),
    };
    match metric {
        Metric::DempsterShafer if !ds.has_logits() => Err(unavailable("dump has no logits")),
        Metric::LogDensity if !ds.has_features() => Err(unavailable("dump has no features")),
        Metric::LogDensity if density.is_none() => Err(unavailable(
            "no fitted density model (needs a train split with features)",
        )),
        _ => Ok(()),
    }
}

/// Scores every kept step of every record and aggregates per record.
/// Single-arity metrics use the mean distribution of the step's samples;
/// Dempster-Shafer uses the mean logits.
pub fn compute_series(
    ds: &Dataset,
    metric: Metric,
    mode: Aggregation,
    density: Option<&DensityModel>,
) -> Result<MetricSeries> {
    check_available(ds, metric, density)?;
    let per_record: Vec<(Vec<f64>, f64)> = ds
        .records
        .par_iter()
        .map(|r| {
            let tokens = r
                .kept_steps()
                .map(|t| -> Result<f64> {
                    match metric {
                        Metric::MaxProb => Ok(max_prob(&r.mean_distribution(t))),
                        Metric::SoftmaxGap => Ok(softmax_gap(&r.mean_distribution(t))),
                        Metric::PredictiveEntropy => {
                            Ok(predictive_entropy(&r.mean_distribution(t)))
                        }
                        Metric::DempsterShafer => {
                            dempster_shafer(&r.mean_logits(t).expect("checked above"))
                        }
                        Metric::ClassVariance => Ok(class_variance(&r.sample_set(t))),
                        Metric::MutualInformation => {
                            Ok(mutual_information(&r.sample_set(t))?.epistemic)
                        }
                        Metric::LogDensity => {
                            let x = &r.features().expect("checked above")[t];
                            density.expect("checked above").score(x)
                        }
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            let seq = aggregate_sequence(&tokens, mode)
                .map_err(|_| Error::FullyMasked { id: r.id.clone() })?;
            Ok((tokens, seq))
        })
        .collect::<Result<_>>()?;

    let single_sample =
        metric.arity() == Arity::Multi && ds.records.iter().any(|r| r.samples() < 2);
    if single_sample {
        log::warn!("{metric}: records with a single sample score 0");
    }
    let (token_scores, sequence_scores) = per_record.into_iter().unzip();
    Ok(MetricSeries {
        metric,
        polarity: metric.polarity(),
        aggregation: mode,
        token_scores,
        sequence_scores,
        single_sample,
    })
}
