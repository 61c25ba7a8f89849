//! Synthetic prediction dumps with known ground truth.
//!
//! Every token gets a base distribution drawn from a Dirichlet whose
//! concentration is tilted toward one "hot" class. Samples are the base
//! perturbed in log space, and logits are stored as mean-centered log
//! probabilities so that logit-based metrics see consistent data.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{save_dump, Dataset, PredictionRecord, Split};
use crate::error::{Error, Result};

/// Floor applied before taking logs of Dirichlet draws.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_id: usize,
    pub n_ood: usize,
    pub classes: usize,
    pub samples: usize,
    pub steps: usize,
    /// Dirichlet concentration on the hot class for ID records; the other
    /// classes get 1.
    pub id_concentration: f64,
    pub ood_concentration: f64,
    /// Standard deviation of the per-sample log-space perturbation.
    pub intra_sample_noise: f64,
    /// Draw gold from the mean distribution. When off, gold is its argmax.
    pub calibrated: bool,
    /// Feature dimension; 0 disables features.
    pub feature_dim: usize,
    /// Distance of each class mean from the origin.
    pub class_separation: f64,
    /// Distance of the OOD feature mean from the origin.
    pub ood_shift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train: 0,
            n_id: 1000,
            n_ood: 1000,
            classes: 5,
            samples: 1,
            steps: 1,
            id_concentration: 20.0,
            ood_concentration: 2.0,
            intra_sample_noise: 0.0,
            calibrated: true,
            feature_dim: 0,
            class_separation: 4.0,
            ood_shift: 12.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synth spec: {m}")));
        if self.classes < 2 {
            return bad(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.samples == 0 || self.steps == 0 {
            return bad("samples and steps must be positive".into());
        }
        for (name, c) in [
            ("id_concentration", self.id_concentration),
            ("ood_concentration", self.ood_concentration),
        ] {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("{name} must be positive, got {c}"));
            }
        }
        if !(self.intra_sample_noise.is_finite() && self.intra_sample_noise >= 0.0) {
            return bad(format!(
                "intra_sample_noise must be non-negative, got {}",
                self.intra_sample_noise
            ));
        }
        if !(self.class_separation.is_finite() && self.ood_shift.is_finite()) {
            return bad("feature geometry must be finite".into());
        }
        Ok(())
    }
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SynthSpec, seed: u64) -> Self {
        Generator {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn dirichlet(&mut self, hot: usize, concentration: f64) -> Vec<f64> {
        let k = self.spec.classes;
        let mut p: Vec<f64> = (0..k)
            .map(|c| {
                let a = if c == hot { concentration } else { 1.0 };
                Gamma::new(a, 1.0)
                    .expect("validated shape")
                    .sample(&mut self.rng)
            })
            .collect();
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v = (*v / total).max(LOG_FLOOR);
        }
        p
    }

    /// `samples` log-probability vectors around `base`, each centered to
    /// mean 0. Centering (rather than pinning the maximum at 0) makes sharp
    /// distributions carry large logits, as trained classifiers do.
    fn sample_logits(&mut self, base: &[f64]) -> Vec<Vec<f64>> {
        let noise = self.spec.intra_sample_noise;
        (0..self.spec.samples)
            .map(|_| {
                let mut z: Vec<f64> = base
                    .iter()
                    .map(|p| {
                        let e: f64 = if noise > 0.0 {
                            self.rng.sample(StandardNormal)
                        } else {
                            0.0
                        };
                        p.ln() + noise * e
                    })
                    .collect();
                let mean = z.iter().sum::<f64>() / z.len() as f64;
                for v in &mut z {
                    *v -= mean;
                }
                z
            })
            .collect()
    }

    fn categorical(&mut self, p: &[f64]) -> usize {
        let u: f64 = self.rng.random::<f64>() * p.iter().sum::<f64>();
        let mut acc = 0.0;
        for (i, &v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    fn feature(&mut self, center: &[f64]) -> Vec<f64> {
        center
            .iter()
            .map(|m| m + self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn record(&mut self, id: String, split: Split, concentration: f64) -> Result<PredictionRecord> {
        let spec = self.spec;
        let mut logits = vec![Vec::with_capacity(spec.steps); spec.samples];
        let mut gold = Vec::with_capacity(spec.steps);
        for _ in 0..spec.steps {
            let hot = self.rng.random_range(0..spec.classes);
            let base = self.dirichlet(hot, concentration);
            let per_sample = self.sample_logits(&base);
            let mean = mean_softmax(&per_sample);
            let g = if spec.calibrated {
                self.categorical(&mean)
            } else {
                argmax(&mean)
            };
            gold.push(g as i64);
            for (s, z) in per_sample.into_iter().enumerate() {
                logits[s].push(z);
            }
        }
        let rec = PredictionRecord::from_logits(id, split, logits, gold.clone())?;
        if spec.feature_dim == 0 {
            return Ok(rec);
        }
        let features = gold
            .iter()
            .map(|&g| {
                let center = if split == Split::OodTest {
                    ood_center(spec)
                } else {
                    class_center(spec, g as usize)
                };
                self.feature(&center)
            })
            .collect();
        rec.with_features(features)
    }

    fn split(
        &mut self,
        split: Split,
        n: usize,
        concentration: f64,
    ) -> Result<Vec<PredictionRecord>> {
        (0..n)
            .map(|i| self.record(format!("{}-{i}", split.as_str()), split, concentration))
            .collect()
    }
}

/// Class `k` sits on axis `k mod dim`, alternating sign every `dim` classes
/// and moving further out so that no two classes share a center.
fn class_center(spec: &SynthSpec, k: usize) -> Vec<f64> {
    let d = spec.feature_dim;
    let mut c = vec![0.0; d];
    let ring = (k / d) as f64;
    let sign = if (k / d).is_multiple_of(2) { 1.0 } else { -1.0 };
    c[k % d] = sign * spec.class_separation * (1.0 + ring / 2.0);
    c
}

fn ood_center(spec: &SynthSpec) -> Vec<f64> {
    let d = spec.feature_dim;
    vec![spec.ood_shift / (d as f64).sqrt(); d]
}

fn mean_softmax(logits: &[Vec<f64>]) -> Vec<f64> {
    let k = logits[0].len();
    let mut mean = vec![0.0; k];
    for z in logits {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = z.iter().map(|v| (v - max).exp()).sum();
        for (m, v) in mean.iter_mut().zip(z) {
            *m += (v - max).exp() / total;
        }
    }
    let s = logits.len() as f64;
    mean.iter_mut().for_each(|m| *m /= s);
    mean
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// ID test records whose gold labels follow the calibration mode.
pub fn gen_calibrated(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.n_id == 0 {
        return Err(Error::Config("synth spec: n_id must be positive".into()));
    }
    let mut g = Generator::new(spec, spec.seed);
    Dataset::new(g.split(Split::IdTest, spec.n_id, spec.id_concentration)?)
}

/// Train (if `n_train > 0`), ID test and OOD test records. ID and OOD differ
/// only in concentration and, with features enabled, in feature location.
pub fn gen_id_ood(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.n_id == 0 || spec.n_ood == 0 {
        return Err(Error::Config(
            "synth spec: n_id and n_ood must be positive".into(),
        ));
    }
    id_ood_with_seed(spec, spec.seed)
}

fn id_ood_with_seed(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let mut g = Generator::new(spec, seed);
    let mut records = g.split(Split::Train, spec.n_train, spec.id_concentration)?;
    records.extend(g.split(Split::IdTest, spec.n_id, spec.id_concentration)?);
    records.extend(g.split(Split::OodTest, spec.n_ood, spec.ood_concentration)?);
    Dataset::new(records)
}

/// ID test records with `samples ≥ 2` perturbed copies per token.
pub fn gen_multisample(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    if spec.samples < 2 {
        return Err(Error::Config(format!(
            "synth spec: multi-sample generation needs samples >= 2, got {}",
            spec.samples
        )));
    }
    gen_calibrated(spec)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Calibrated,
    #[default]
    IdOod,
    Multisample,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibrated" => Ok(SynthKind::Calibrated),
            "id_ood" | "id-ood" => Ok(SynthKind::IdOod),
            "multisample" => Ok(SynthKind::Multisample),
            other => Err(Error::Config(format!("unknown synth kind `{other}`"))),
        }
    }
}

pub fn generate(spec: &SynthSpec, kind: SynthKind) -> Result<Dataset> {
    match kind {
        SynthKind::Calibrated => gen_calibrated(spec),
        SynthKind::IdOod => gen_id_ood(spec),
        SynthKind::Multisample => gen_multisample(spec),
    }
}

/// Spec echo plus ground truth measured on the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub kind: SynthKind,
    pub spec: SynthSpec,
    pub calibration_mode: String,
    /// Predictive-entropy AUROC (mean over steps) of the emitted ID vs OOD
    /// records, by exhaustive pair counting.
    pub target_auroc: Option<f64>,
    /// The same statistic on an independent draw from the same spec.
    pub reference_auroc: Option<f64>,
    /// Split name → file name, in split order.
    pub files: Vec<(String, String)>,
    pub record_counts: Vec<(String, usize)>,
}

fn record_entropy(r: &PredictionRecord) -> f64 {
    let steps: Vec<f64> = r
        .kept_steps()
        .map(|t| {
            -r.mean_distribution(t)
                .probs()
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>()
        })
        .collect();
    steps.iter().sum::<f64>() / steps.len().max(1) as f64
}

/// Pair-counting AUROC of OOD-vs-ID entropy; ties count one half.
fn pairwise_auroc(ds: &Dataset) -> Option<f64> {
    let collect = |split| -> Vec<f64> {
        ds.records
            .iter()
            .filter(|r| r.split == split && r.kept_count() > 0)
            .map(record_entropy)
            .collect()
    };
    let id = collect(Split::IdTest);
    let ood = collect(Split::OodTest);
    if id.is_empty() || ood.is_empty() {
        return None;
    }
    let mut twice_wins: u64 = 0;
    for o in &ood {
        for i in &id {
            twice_wins += match o.partial_cmp(i) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Some(twice_wins as f64 / (2.0 * id.len() as f64 * ood.len() as f64))
}

pub fn manifest_for(spec: &SynthSpec, kind: SynthKind, ds: &Dataset) -> Result<SynthManifest> {
    let (target, reference) = if kind == SynthKind::IdOod {
        let reference = id_ood_with_seed(spec, spec.seed ^ 0x9E37_79B9_7F4A_7C15)?;
        (pairwise_auroc(ds), pairwise_auroc(&reference))
    } else {
        (None, None)
    };
    let mut files = Vec::new();
    let mut counts = Vec::new();
    for split in [Split::Train, Split::IdTest, Split::OodTest] {
        let n = ds.records.iter().filter(|r| r.split == split).count();
        if n > 0 {
            files.push((
                split.as_str().to_string(),
                format!("{}.jsonl", split.as_str()),
            ));
            counts.push((split.as_str().to_string(), n));
        }
    }
    Ok(SynthManifest {
        kind,
        spec: spec.clone(),
        calibration_mode: if spec.calibrated {
            "calibrated"
        } else {
            "argmax_gold"
        }
        .into(),
        target_auroc: target,
        reference_auroc: reference,
        files,
        record_counts: counts,
    })
}

/// Generates, writes one dump per split plus `manifest.json` into `dir`.
pub fn write_synth(
    dir: impl AsRef<Path>,
    spec: &SynthSpec,
    kind: SynthKind,
) -> Result<SynthManifest> {
    let dir = dir.as_ref();
    let ds = generate(spec, kind)?;
    let manifest = manifest_for(spec, kind, &ds)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split_name, file) in &manifest.files {
        let split: Split = split_name.parse()?;
        let records: Vec<_> = ds
            .records
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect();
        save_dump(dir.join(file), &records)?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{confidence_points, ece, pooled_predictions};
    use crate::metrics::{compute_series, Aggregation, Metric};

    fn small(kind_seed: u64) -> SynthSpec {
        SynthSpec {
            n_id: 200,
            n_ood: 200,
            seed: kind_seed,
            ..Default::default()
        }
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        for spec in [
            SynthSpec {
                classes: 1,
                ..small(0)
            },
            SynthSpec {
                id_concentration: 0.0,
                ..small(0)
            },
            SynthSpec {
                ood_concentration: f64::NAN,
                ..small(0)
            },
            SynthSpec {
                intra_sample_noise: -1.0,
                ..small(0)
            },
            SynthSpec {
                steps: 0,
                ..small(0)
            },
        ] {
            let e = gen_id_ood(&spec).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{e}");
        }
        assert!(gen_multisample(&small(0)).is_err());
        assert!(gen_id_ood(&SynthSpec {
            n_ood: 0,
            ..small(0)
        })
        .is_err());
    }

    #[test]
    fn same_seed_same_data() {
        let a = gen_id_ood(&small(3)).unwrap();
        let b = gen_id_ood(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_id_ood(&small(4)).unwrap());
    }

    #[test]
    fn argmax_gold_gives_one_minus_confidence() {
        let spec = SynthSpec {
            n_id: 5000,
            classes: 10,
            id_concentration: 3.0,
            calibrated: false,
            ..small(1)
        };
        let ds = gen_calibrated(&spec).unwrap();
        let (p, g) = pooled_predictions(&ds);
        let pts = confidence_points(&p, &g);
        assert!(pts.iter().all(|x| x.1));
        let mean_conf = pts.iter().map(|x| x.0).sum::<f64>() / pts.len() as f64;
        assert!((ece(&pts, 10).unwrap() - (1.0 - mean_conf)).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_means_identical_samples() {
        let spec = SynthSpec {
            samples: 4,
            steps: 3,
            n_id: 50,
            ..small(2)
        };
        let ds = gen_multisample(&spec).unwrap();
        for m in [Metric::MutualInformation, Metric::ClassVariance] {
            let s = compute_series(&ds, m, Aggregation::Max, None).unwrap();
            assert!(s.sequence_scores.iter().all(|&v| v.abs() < 1e-12), "{m}");
        }
    }

    #[test]
    fn mutual_information_grows_with_noise() {
        let mut last = -1.0;
        for noise in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let spec = SynthSpec {
                samples: 5,
                n_id: 400,
                intra_sample_noise: noise,
                ..small(5)
            };
            let ds = gen_multisample(&spec).unwrap();
            let s =
                compute_series(&ds, Metric::MutualInformation, Aggregation::Mean, None).unwrap();
            let mean = s.sequence_scores.iter().sum::<f64>() / s.sequence_scores.len() as f64;
            assert!(mean > last, "noise {noise}: {mean} <= {last}");
            last = mean;
        }
    }

    #[test]
    fn extreme_separation_is_perfect() {
        let spec = SynthSpec {
            id_concentration: 1e6,
            ood_concentration: 1.0,
            ..small(6)
        };
        let ds = gen_id_ood(&spec).unwrap();
        let m = manifest_for(&spec, SynthKind::IdOod, &ds).unwrap();
        assert_eq!(m.target_auroc, Some(1.0));
    }

    #[test]
    fn features_follow_the_split() {
        let spec = SynthSpec {
            feature_dim: 3,
            n_train: 20,
            ..small(7)
        };
        let ds = gen_id_ood(&spec).unwrap();
        assert!(ds.has_features());
        assert_eq!(ds.split(Split::Train).unwrap().len(), 20);
        let ood = ds.split(Split::OodTest).unwrap();
        let far = ood.records.iter().all(|r| {
            let x = &r.features().unwrap()[0];
            x.iter().sum::<f64>() > 0.0
        });
        assert!(far);
    }

    #[test]
    fn class_centers_are_distinct() {
        let spec = SynthSpec {
            feature_dim: 2,
            classes: 7,
            ..small(0)
        };
        let centers: Vec<_> = (0..7).map(|k| class_center(&spec, k)).collect();
        for i in 0..7 {
            for j in 0..i {
                assert_ne!(centers[i], centers[j]);
            }
        }
    }
}
