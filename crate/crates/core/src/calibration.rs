//! Calibration errors (ECE, SCE, ACE) and prediction-set coverage.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Distribution};
use crate::error::{Error, Result};

/// Slack for floating-point accumulation when comparing set mass to `1 - alpha`.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BinStat {
    fn gap(&self) -> f64 {
        (self.accuracy - self.mean_confidence).abs()
    }
}

/// Equal-width bin of `c` among `m` bins, right-inclusive: bin `i` covers
/// `(i/m, (i+1)/m]`, and `0` falls in the first bin.
pub fn bin_index(c: f64, m: usize) -> usize {
    let mf = m as f64;
    let mut idx = ((c * mf).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
    while idx > 0 && c <= idx as f64 / mf {
        idx -= 1;
    }
    while idx + 1 < m && c > (idx + 1) as f64 / mf {
        idx += 1;
    }
    idx
}

/// Equal-width bins over `[0, 1]` for `(confidence, hit)` pairs.
fn equal_width_bins(points: impl Iterator<Item = (f64, bool)>, m: usize) -> Vec<BinStat> {
    let mut count = vec![0usize; m];
    let mut conf = vec![0.0; m];
    let mut hits = vec![0usize; m];
    for (c, hit) in points {
        let b = bin_index(c, m);
        count[b] += 1;
        conf[b] += c;
        hits[b] += hit as usize;
    }
    (0..m)
        .map(|b| {
            let n = count[b];
            BinStat {
                count: n,
                mean_confidence: if n > 0 { conf[b] / n as f64 } else { 0.0 },
                accuracy: if n > 0 {
                    hits[b] as f64 / n as f64
                } else {
                    0.0
                },
                lo: b as f64 / m as f64,
                hi: (b + 1) as f64 / m as f64,
            }
        })
        .collect()
}

fn weighted_gap(bins: &[BinStat], n: usize) -> f64 {
    bins.iter()
        .map(|b| b.count as f64 / n as f64 * b.gap())
        .sum()
}

fn check_confidence(c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidArgument(format!(
            "confidence {c} outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_inputs(probs: &[Distribution], gold: &[usize]) -> Result<usize> {
    let Some(first) = probs.first() else {
        return Err(Error::Empty("no predictions".into()));
    };
    if probs.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} gold labels",
            probs.len(),
            gold.len()
        )));
    }
    let k = first.classes();
    if probs.iter().any(|d| d.classes() != k) {
        return Err(Error::InvalidArgument("class counts differ".into()));
    }
    if let Some(&g) = gold.iter().find(|&&g| g >= k) {
        return Err(Error::InvalidArgument(format!(
            "gold label {g} outside [0, {k})"
        )));
    }
    Ok(k)
}

/// Expected calibration error with its bin table.
pub fn ece_bins(points: &[(f64, bool)], m_bins: usize) -> Result<(f64, Vec<BinStat>)> {
    if points.is_empty() {
        return Err(Error::Empty("no calibration points".into()));
    }
    if m_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    for &(c, _) in points {
        check_confidence(c)?;
    }
    let bins = equal_width_bins(points.iter().copied(), m_bins);
    Ok((weighted_gap(&bins, points.len()), bins))
}

pub fn ece(points: &[(f64, bool)], m_bins: usize) -> Result<f64> {
    ece_bins(points, m_bins).map(|(v, _)| v)
}

/// `(max probability, argmax == gold)` per prediction.
pub fn confidence_points(probs: &[Distribution], gold: &[usize]) -> Vec<(f64, bool)> {
    probs
        .iter()
        .zip(gold)
        .map(|(d, &g)| (crate::metrics::max_prob(d), d.argmax() == g))
        .collect()
}

/// Static calibration error with one bin table per class.
pub fn sce_bins(
    probs: &[Distribution],
    gold: &[usize],
    m_bins: usize,
) -> Result<(f64, Vec<Vec<BinStat>>)> {
    let k = check_inputs(probs, gold)?;
    if m_bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let n = probs.len();
    let mut total = 0.0;
    let mut tables = Vec::with_capacity(k);
    for class in 0..k {
        let bins = equal_width_bins(
            probs
                .iter()
                .zip(gold)
                .map(|(d, &g)| (d.probs()[class].clamp(0.0, 1.0), g == class)),
            m_bins,
        );
        total += weighted_gap(&bins, n);
        tables.push(bins);
    }
    Ok((total / k as f64, tables))
}

pub fn sce(probs: &[Distribution], gold: &[usize], m_bins: usize) -> Result<f64> {
    sce_bins(probs, gold, m_bins).map(|(v, _)| v)
}

/// Adaptive calibration error with one range table per class.
///
/// Per class, predictions at or above `threshold` are sorted by that class's
/// probability and cut into `r_ranges` equal-count ranges; the first
/// `len % r_ranges` ranges take one extra point.
pub fn ace_bins(
    probs: &[Distribution],
    gold: &[usize],
    r_ranges: usize,
    threshold: f64,
) -> Result<(f64, Vec<Vec<BinStat>>)> {
    let k = check_inputs(probs, gold)?;
    if r_ranges == 0 {
        return Err(Error::InvalidArgument("need at least one range".into()));
    }
    let mut total = 0.0;
    let mut tables = Vec::with_capacity(k);
    for class in 0..k {
        let mut items: Vec<(f64, bool)> = probs
            .iter()
            .zip(gold)
            .map(|(d, &g)| (d.probs()[class], g == class))
            .filter(|&(p, _)| p >= threshold)
            .collect();
        if items.len() < r_ranges {
            return Err(Error::InsufficientSamples {
                needed: r_ranges,
                got: items.len(),
            });
        }
        // stable: equal probabilities keep input order
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        let base = items.len() / r_ranges;
        let extra = items.len() % r_ranges;
        let mut start = 0;
        let mut bins = Vec::with_capacity(r_ranges);
        for r in 0..r_ranges {
            let size = base + usize::from(r < extra);
            let chunk = &items[start..start + size];
            start += size;
            let conf = chunk.iter().map(|c| c.0).sum::<f64>() / size as f64;
            let acc = chunk.iter().filter(|c| c.1).count() as f64 / size as f64;
            let bin = BinStat {
                count: size,
                mean_confidence: conf,
                accuracy: acc,
                lo: chunk[0].0,
                hi: chunk[size - 1].0,
            };
            total += bin.gap();
            bins.push(bin);
        }
        tables.push(bins);
    }
    Ok((total / (k * r_ranges) as f64, tables))
}

pub fn ace(probs: &[Distribution], gold: &[usize], r_ranges: usize, threshold: f64) -> Result<f64> {
    ace_bins(probs, gold, r_ranges, threshold).map(|(v, _)| v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// Classes by descending probability.
    pub classes: Vec<usize>,
    pub mass: f64,
}

impl PredictionSet {
    pub fn width(&self) -> usize {
        self.classes.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.contains(&class)
    }
}

/// Smallest greedy set of most likely classes reaching `1 - alpha` mass.
/// Equal probabilities are taken in class-index order.
pub fn prediction_set(d: &Distribution, alpha: f64) -> PredictionSet {
    let p = d.probs();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let target = 1.0 - alpha - MASS_TOLERANCE;
    let mut mass = 0.0;
    let mut classes = Vec::new();
    for k in order {
        classes.push(k);
        mass += p[k];
        if mass >= target {
            break;
        }
    }
    PredictionSet { classes, mass }
}

/// Gathers the mean distribution and gold label of every kept step, in
/// record order.
pub fn pooled_predictions(ds: &Dataset) -> (Vec<Distribution>, Vec<usize>) {
    let mut probs = Vec::new();
    let mut gold = Vec::new();
    for r in &ds.records {
        for t in r.kept_steps() {
            probs.push(r.mean_distribution(t));
            gold.push(r.gold()[t] as usize);
        }
    }
    (probs, gold)
}

/// `(coverage fraction, mean set width)` over pooled predictions.
pub fn coverage_of(probs: &[Distribution], gold: &[usize], alpha: f64) -> Result<(f64, f64)> {
    if probs.is_empty() {
        return Err(Error::Empty("no kept predictions".into()));
    }
    let mut covered = 0usize;
    let mut width = 0usize;
    for (d, &g) in probs.iter().zip(gold) {
        let set = prediction_set(d, alpha);
        covered += set.contains(g) as usize;
        width += set.width();
    }
    let n = probs.len() as f64;
    Ok((covered as f64 / n, width as f64 / n))
}

pub fn coverage_stats(ds: &Dataset, alpha: f64) -> Result<(f64, f64)> {
    let (probs, gold) = pooled_predictions(ds);
    coverage_of(&probs, &gold, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub bins: usize,
    pub ranges: usize,
    pub ace_threshold: f64,
    pub alpha: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            bins: 10,
            ranges: 10,
            ace_threshold: 0.0,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub sce: f64,
    /// Absent when some class has fewer surviving points than ranges.
    pub ace: Option<f64>,
    pub coverage_pct: f64,
    pub mean_width: f64,
    pub ece_bins: Vec<BinStat>,
    pub sce_bins: Vec<Vec<BinStat>>,
    pub ace_bins: Option<Vec<Vec<BinStat>>>,
    pub n_points: usize,
}

/// All calibration statistics over every kept step of the dataset.
pub fn calibration_report(ds: &Dataset, cfg: &CalibrationConfig) -> Result<CalibrationReport> {
    let (probs, gold) = pooled_predictions(ds);
    if probs.is_empty() {
        return Err(Error::Empty("no kept predictions".into()));
    }
    let (ece, ece_bins) = ece_bins(&confidence_points(&probs, &gold), cfg.bins)?;
    let (sce, sce_bins) = sce_bins(&probs, &gold, cfg.bins)?;
    let (ace, ace_bins) = match ace_bins(&probs, &gold, cfg.ranges, cfg.ace_threshold) {
        Ok((v, bins)) => (Some(v), Some(bins)),
        Err(Error::InsufficientSamples { needed, got }) => {
            log::warn!("ACE skipped: a class has {got} points for {needed} ranges");
            (None, None)
        }
        Err(e) => return Err(e),
    };
    let (coverage_pct, mean_width) = coverage_of(&probs, &gold, cfg.alpha)?;
    Ok(CalibrationReport {
        ece,
        sce,
        ace,
        coverage_pct,
        mean_width,
        ece_bins,
        sce_bins,
        ace_bins,
        n_points: probs.len(),
    })
}
