//! Stratified corpus sub-sampling and sample-vs-source distribution checks.
//!
//! Sequence classification draws a label by corpus frequency, then a length
//! by its frequency inside that label, then a sequence uniformly from the
//! `(label, length)` bucket. Token classification draws a length by corpus
//! frequency and then a sequence weighted by how well its label mix aligns
//! with the corpus label distribution. Both sample without replacement;
//! exhausted buckets drop out and the remaining mass is renormalized.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Distribution;
use crate::error::{Error, Result};

/// Additive smoothing applied to a sequence's label distribution.
pub const ALIGNMENT_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    /// Any other keys, carried through untouched.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl CorpusRecord {
    pub fn sequence(tokens: Vec<String>, label: usize) -> Self {
        CorpusRecord {
            tokens,
            label: Some(label),
            labels: None,
            extra: Default::default(),
        }
    }

    pub fn tagged(tokens: Vec<String>, labels: Vec<usize>) -> Self {
        CorpusRecord {
            tokens,
            label: None,
            labels: Some(labels),
            extra: Default::default(),
        }
    }

    pub fn length(&self) -> usize {
        self.tokens.len()
    }

    /// The sequence label, or every token label.
    pub fn label_list(&self) -> Vec<usize> {
        match (&self.label, &self.labels) {
            (_, Some(ls)) => ls.clone(),
            (Some(l), None) => vec![*l],
            (None, None) => Vec::new(),
        }
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let bad = |m: &str| Error::InvalidArgument(format!("corpus record {idx}: {m}"));
        if self.tokens.is_empty() {
            return Err(bad("no tokens"));
        }
        match (&self.label, &self.labels) {
            (None, None) => Err(bad("needs `label` or `labels`")),
            (_, Some(ls)) if ls.len() != self.tokens.len() => Err(bad(&format!(
                "{} labels for {} tokens",
                ls.len(),
                self.tokens.len()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleTask {
    SequenceCls,
    TokenCls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub target_size: usize,
    pub seed: u64,
    pub task: SampleTask,
}

fn check_plan(corpus: &[CorpusRecord], plan: &SamplePlan) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    if plan.target_size == 0 || plan.target_size > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "target size {} must be in 1..={}",
            plan.target_size,
            corpus.len()
        )));
    }
    for (i, r) in corpus.iter().enumerate() {
        r.validate(i)?;
    }
    Ok(())
}

/// Index drawn proportionally to `weights`; `None` if all are zero.
fn draw_weighted(
    weights: impl Iterator<Item = f64> + Clone,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let total: f64 = weights.clone().sum();
    if total <= 0.0 {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

/// A weighted bucket of sub-buckets; exhausted children are removed.
struct Stratum<C> {
    children: Vec<(f64, C)>,
}

impl<C> Stratum<C> {
    fn pick(&mut self, rng: &mut ChaCha8Rng) -> usize {
        draw_weighted(self.children.iter().map(|c| c.0), rng).expect("non-empty stratum")
    }
}

/// Indices into `corpus` chosen by the label → length → uniform scheme.
pub fn subsample_sequence_indices(
    corpus: &[CorpusRecord],
    plan: &SamplePlan,
) -> Result<Vec<usize>> {
    check_plan(corpus, plan)?;
    let mut grouped: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (i, r) in corpus.iter().enumerate() {
        let label = r.label.ok_or_else(|| {
            Error::InvalidArgument(format!("corpus record {i} has no sequence `label`"))
        })?;
        grouped
            .entry(label)
            .or_default()
            .entry(r.length())
            .or_default()
            .push(i);
    }
    let mut labels = Stratum {
        children: grouped
            .into_values()
            .map(|by_len| {
                let total: usize = by_len.values().map(Vec::len).sum();
                let lengths = Stratum {
                    children: by_len.into_values().map(|v| (v.len() as f64, v)).collect(),
                };
                (total as f64, lengths)
            })
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = Vec::with_capacity(plan.target_size);
    for _ in 0..plan.target_size {
        let li = labels.pick(&mut rng);
        let lengths = &mut labels.children[li].1;
        let bi = lengths.pick(&mut rng);
        let bucket = &mut lengths.children[bi].1;
        let j = rng.random_range(0..bucket.len());
        out.push(bucket.swap_remove(j));
        if bucket.is_empty() {
            lengths.children.remove(bi);
            if lengths.children.is_empty() {
                labels.children.remove(li);
            }
        }
    }
    Ok(out)
}

pub fn subsample_sequence_cls(
    corpus: &[CorpusRecord],
    plan: &SamplePlan,
) -> Result<Vec<CorpusRecord>> {
    Ok(subsample_sequence_indices(corpus, plan)?
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

/// Label frequencies pooled over every label in the corpus.
pub fn corpus_label_distribution(corpus: &[CorpusRecord]) -> Result<Distribution> {
    let labels: Vec<usize> = corpus.iter().flat_map(CorpusRecord::label_list).collect();
    let Some(&max) = labels.iter().max() else {
        return Err(Error::Empty("corpus has no labels".into()));
    };
    let mut counts = vec![0.0; max + 1];
    for l in &labels {
        counts[*l] += 1.0;
    }
    let n = labels.len() as f64;
    Distribution::new(counts.into_iter().map(|c| c / n).collect())
}

/// `sum_k p_corpus(k) ln p_seq(k)`: the negated cross-entropy of the
/// sequence's smoothed label distribution under the corpus distribution.
pub fn alignment_score(seq_labels: &[usize], corpus_dist: &Distribution) -> Result<f64> {
    if seq_labels.is_empty() {
        return Err(Error::Empty("sequence has no labels".into()));
    }
    let k = corpus_dist.classes();
    let mut counts = vec![0.0; k];
    for &l in seq_labels {
        if l >= k {
            return Err(Error::InvalidArgument(format!(
                "label {l} outside the corpus label set of size {k}"
            )));
        }
        counts[l] += 1.0;
    }
    let n = seq_labels.len() as f64;
    let norm = 1.0 + k as f64 * ALIGNMENT_EPS;
    Ok(corpus_dist
        .probs()
        .iter()
        .zip(&counts)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &c)| p * ((c / n + ALIGNMENT_EPS) / norm).ln())
        .sum())
}

/// Min-max normalized into `[0, 1]` and rescaled to sum to one; uniform when
/// all scores are equal.
pub fn alignment_weights(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = scores.len() as f64;
    if max.partial_cmp(&min) != Some(std::cmp::Ordering::Greater) {
        return vec![1.0 / n; scores.len()];
    }
    let scaled: Vec<f64> = scores.iter().map(|s| (s - min) / (max - min)).collect();
    let total: f64 = scaled.iter().sum();
    scaled.into_iter().map(|w| w / total).collect()
}

/// Indices into `corpus` chosen by the length → alignment-weighted scheme.
/// A bucket whose remaining members all have zero weight falls back to
/// uniform draws.
pub fn subsample_token_indices(corpus: &[CorpusRecord], plan: &SamplePlan) -> Result<Vec<usize>> {
    check_plan(corpus, plan)?;
    let dist = corpus_label_distribution(corpus)?;
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.iter().enumerate() {
        if r.labels.is_none() {
            return Err(Error::InvalidArgument(format!(
                "corpus record {i} has no token `labels`"
            )));
        }
        by_len.entry(r.length()).or_default().push(i);
    }
    let mut lengths = Stratum {
        children: by_len
            .into_values()
            .map(|members| {
                let scores = members
                    .iter()
                    .map(|&i| alignment_score(&corpus[i].label_list(), &dist))
                    .collect::<Result<Vec<_>>>()?;
                let weights = alignment_weights(&scores);
                let bucket: Vec<(usize, f64)> = members.into_iter().zip(weights).collect();
                Ok((bucket.len() as f64, bucket))
            })
            .collect::<Result<Vec<_>>>()?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = Vec::with_capacity(plan.target_size);
    for _ in 0..plan.target_size {
        let li = lengths.pick(&mut rng);
        let bucket = &mut lengths.children[li].1;
        let j = draw_weighted(bucket.iter().map(|m| m.1), &mut rng)
            .unwrap_or_else(|| rng.random_range(0..bucket.len()));
        // order within the bucket matters for reproducibility
        out.push(bucket.remove(j).0);
        if bucket.is_empty() {
            lengths.children.remove(li);
        }
    }
    Ok(out)
}

pub fn subsample_token_cls(
    corpus: &[CorpusRecord],
    plan: &SamplePlan,
) -> Result<Vec<CorpusRecord>> {
    Ok(subsample_token_indices(corpus, plan)?
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

pub fn subsample(corpus: &[CorpusRecord], plan: &SamplePlan) -> Result<Vec<CorpusRecord>> {
    match plan.task {
        SampleTask::SequenceCls => subsample_sequence_cls(corpus, plan),
        SampleTask::TokenCls => subsample_token_cls(corpus, plan),
    }
}

/// Jensen-Shannon divergence in nats; result in `[0, ln 2]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / y).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).clamp(0.0, std::f64::consts::LN_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub key: String,
    pub freq_a: f64,
    pub freq_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTables {
    pub lengths: Vec<FrequencyRow>,
    pub labels: Vec<FrequencyRow>,
    pub top_types: Vec<FrequencyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub length_js: f64,
    pub label_js: f64,
    pub top_type_js: f64,
    pub top_k: usize,
    pub tables: FrequencyTables,
}

/// Label used for the mass outside `a`'s top types.
pub const OTHER_TYPES: &str = "<other>";

fn relative<K: Ord + Clone>(counts: &BTreeMap<K, usize>, keys: &[K]) -> Vec<f64> {
    let total: usize = counts.values().sum();
    keys.iter()
        .map(|k| *counts.get(k).unwrap_or(&0) as f64 / total as f64)
        .collect()
}

fn paired_table<K: Ord + Clone + ToString>(
    a: &BTreeMap<K, usize>,
    b: &BTreeMap<K, usize>,
) -> (f64, Vec<FrequencyRow>) {
    let mut keys: Vec<K> = a.keys().chain(b.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    let fa = relative(a, &keys);
    let fb = relative(b, &keys);
    let rows = keys
        .iter()
        .zip(fa.iter().zip(&fb))
        .map(|(k, (&x, &y))| FrequencyRow {
            key: k.to_string(),
            freq_a: x,
            freq_b: y,
        })
        .collect();
    (js_divergence(&fa, &fb), rows)
}

/// Compares lengths, labels and the `top_k` most frequent types of `a`
/// between two corpora. For types, everything outside `a`'s top set is
/// pooled into one [`OTHER_TYPES`] bucket on both sides.
pub fn compare_distributions(
    a: &[CorpusRecord],
    b: &[CorpusRecord],
    top_k: usize,
) -> Result<DistributionComparison> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    let lengths = |c: &[CorpusRecord]| {
        let mut m = BTreeMap::new();
        for r in c {
            *m.entry(r.length()).or_insert(0usize) += 1;
        }
        m
    };
    let labels = |c: &[CorpusRecord]| {
        let mut m = BTreeMap::new();
        for l in c.iter().flat_map(CorpusRecord::label_list) {
            *m.entry(l).or_insert(0usize) += 1;
        }
        m
    };
    fn types(c: &[CorpusRecord]) -> HashMap<&str, usize> {
        let mut m: HashMap<&str, usize> = HashMap::new();
        for t in c.iter().flat_map(|r| r.tokens.iter()) {
            *m.entry(t.as_str()).or_insert(0) += 1;
        }
        m
    }

    let (length_js, length_rows) = paired_table(&lengths(a), &lengths(b));
    let (label_js, label_rows) = paired_table(&labels(a), &labels(b));

    let ta = types(a);
    let tb = types(b);
    let mut ranked: Vec<(&str, usize)> = ta.iter().map(|(k, v)| (*k, *v)).collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
    ranked.truncate(top_k);
    let total_a: usize = ta.values().sum();
    let total_b: usize = tb.values().sum();
    let mut pa = Vec::with_capacity(ranked.len() + 1);
    let mut pb = Vec::with_capacity(ranked.len() + 1);
    let mut type_rows = Vec::with_capacity(ranked.len() + 1);
    for (t, ca) in &ranked {
        let x = *ca as f64 / total_a as f64;
        let y = *tb.get(t).unwrap_or(&0) as f64 / total_b as f64;
        pa.push(x);
        pb.push(y);
        type_rows.push(FrequencyRow {
            key: t.to_string(),
            freq_a: x,
            freq_b: y,
        });
    }
    let other_a = (1.0 - pa.iter().sum::<f64>()).max(0.0);
    let other_b = (1.0 - pb.iter().sum::<f64>()).max(0.0);
    pa.push(other_a);
    pb.push(other_b);
    type_rows.push(FrequencyRow {
        key: OTHER_TYPES.into(),
        freq_a: other_a,
        freq_b: other_b,
    });

    Ok(DistributionComparison {
        length_js,
        label_js,
        top_type_js: js_divergence(&pa, &pb),
        top_k,
        tables: FrequencyTables {
            lengths: length_rows,
            labels: label_rows,
            top_types: type_rows,
        },
    })
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        rec.validate(out.len())?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(f))
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sidecar written next to a sub-sampled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub target_size: usize,
    pub task: SampleTask,
    pub source_size: usize,
    /// SHA-256 of the source corpus file, hex encoded.
    pub source_digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
