//! ID-vs-OOD discrimination (AUROC, AUPR) and loss/uncertainty rank
//! correlation (Kendall's tau-b).
//!
//! Scores are expected in uncertainty orientation and OOD is the positive
//! class. Both rank statistics are computed exactly in integer arithmetic
//! before the final division.

use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{sequence_loss, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricSeries;

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty(format!("no {what} scores")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{what} scores")));
    }
    Ok(())
}

/// Scores labelled positive (OOD) or not, sorted by descending score.
fn labelled_desc(id_scores: &[f64], ood_scores: &[f64]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    all
}

/// Groups of equal scores as `(positives, negatives)`, highest score first.
fn tie_groups(sorted: &[(f64, bool)]) -> Vec<(u64, u64)> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut pos = 0;
        let mut neg = 0;
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        groups.push((pos, neg));
        i = j;
    }
    groups
}

/// Area under the ROC curve: the probability that an OOD score exceeds an ID
/// score, ties counted as one half.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, "ID")?;
    check_scores(ood_scores, "OOD")?;
    let groups = tie_groups(&labelled_desc(id_scores, ood_scores));
    // twice the Mann-Whitney U statistic
    let mut twice_u: u128 = 0;
    let mut neg_below: u64 = id_scores.len() as u64;
    for (pos, neg) in groups {
        neg_below -= neg;
        twice_u += pos as u128 * (2 * neg_below as u128 + neg as u128);
    }
    let pairs = 2 * id_scores.len() as u128 * ood_scores.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

/// Average precision with OOD as the positive class, one threshold per
/// distinct score.
pub fn aupr(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, "ID")?;
    check_scores(ood_scores, "OOD")?;
    let groups = tie_groups(&labelled_desc(id_scores, ood_scores));
    let (mut tp, mut fp) = (0u64, 0u64);
    // Summing pos * precision and dividing once keeps the result <= 1 in
    // floating point: every term is at most its integer count.
    let mut weighted = 0.0;
    for (pos, neg) in groups {
        tp += pos;
        fp += neg;
        if pos > 0 {
            weighted += pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(weighted / ood_scores.len() as f64)
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite values")
}

/// Number of pairs within runs of equal keys in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
            prev = Some(v);
        }
    }
    total + run * run.saturating_sub(1) / 2
}

/// Merge sort on `ys` counting inversions (strictly decreasing pairs).
fn sort_counting_swaps(ys: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = ys.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        sort_counting_swaps(&mut ys[..mid], buf) + sort_counting_swaps(&mut ys[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if ys[j] < ys[i] {
            buf.push(ys[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(ys[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&ys[i..mid]);
    buf.extend_from_slice(&ys[j..n]);
    ys.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b in `O(n log n)` (Knight's algorithm):
/// `(C - D) / sqrt((C + D + T_x) (C + D + T_y))`.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kendall tau input".into()));
    }
    let n = xs.len() as u64;
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp_f64(a.0, b.0).then(cmp_f64(a.1, b.1)));

    let n0 = n * (n - 1) / 2;
    let n1 = tied_pairs(pairs.iter().map(|p| p.0));
    let n3 = tied_pairs(pairs.iter().copied());
    let mut sorted_y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = sort_counting_swaps(&mut sorted_y, &mut Vec::with_capacity(pairs.len()));
    let n2 = tied_pairs(sorted_y.iter().copied());

    let untied_x = n0 - n1;
    let untied_y = n0 - n2;
    if untied_x == 0 || untied_y == 0 {
        return Err(Error::Undefined(
            "Kendall's tau is undefined when one variable is constant".into(),
        ));
    }
    // C - D = (pairs untied in both) - 2 * discordant
    let concordant_minus_discordant =
        (n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128) - 2 * swaps as i128;
    Ok(concordant_minus_discordant as f64 / ((untied_x as f64) * (untied_y as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationLevel {
    Token,
    /// Token-level tau computed inside each record, then averaged over the
    /// records where it is defined.
    TokenPerSequence,
    Sequence,
}

/// How the token-level tau is formed. `Pooled` ranks every kept step of the
/// split together.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenTau {
    #[default]
    Pooled,
    PerSequence,
}

impl TokenTau {
    pub fn level(self) -> CorrelationLevel {
        match self {
            TokenTau::Pooled => CorrelationLevel::Token,
            TokenTau::PerSequence => CorrelationLevel::TokenPerSequence,
        }
    }
}

impl FromStr for TokenTau {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(TokenTau::Pooled),
            "per_sequence" | "per-sequence" => Ok(TokenTau::PerSequence),
            other => Err(Error::Config(format!("unknown token tau mode `{other}`"))),
        }
    }
}

/// Kendall's tau between canonical uncertainty and loss. Token level pools
/// every kept step of the split (`TokenPerSequence` averages per-record taus
/// instead); sequence level pairs each record's
/// aggregated uncertainty with its mean token loss.
pub fn loss_correlation(
    ds: &Dataset,
    series: &MetricSeries,
    level: CorrelationLevel,
) -> Result<f64> {
    if series.sequence_scores.len() != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "series has {} records, dataset has {}",
            series.sequence_scores.len(),
            ds.len()
        )));
    }
    match level {
        CorrelationLevel::Token => {
            let unc = series.canonical_token_scores();
            let loss: Vec<f64> = ds.records.iter().flat_map(|r| r.token_losses()).collect();
            kendall_tau(&unc, &loss)
        }
        CorrelationLevel::TokenPerSequence => {
            let mut taus = Vec::new();
            for (r, scores) in ds.records.iter().zip(&series.token_scores) {
                let unc: Vec<f64> = scores
                    .iter()
                    .map(|&v| series.metric.canonicalize(v))
                    .collect();
                match kendall_tau(&unc, &r.token_losses()) {
                    Ok(t) => taus.push(t),
                    Err(Error::Undefined(_) | Error::InsufficientSamples { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            if taus.is_empty() {
                return Err(Error::Undefined(
                    "no record has a defined token-level tau".into(),
                ));
            }
            Ok(taus.iter().sum::<f64>() / taus.len() as f64)
        }
        CorrelationLevel::Sequence => {
            let unc = series.canonical_sequence_scores();
            let loss = ds
                .records
                .iter()
                .map(sequence_loss)
                .collect::<Result<Vec<_>>>()?;
            kendall_tau(&unc, &loss)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub auroc: f64,
    pub aupr: f64,
    pub token_tau: Option<f64>,
    pub sequence_tau: f64,
    pub n_id: usize,
    pub n_ood: usize,
}
