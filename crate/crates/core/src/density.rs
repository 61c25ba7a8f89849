//! Feature-space density scoring: optional PCA projection followed by a
//! Gaussian discriminant model with one full-covariance component per class.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const INITIAL_JITTER: f64 = 1e-6;
pub const MAX_JITTER_DOUBLINGS: u32 = 40;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d_out × D`, orthonormal rows, ordered by explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(x, self.input_dim())?;
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(w, (v, m))| w * (v - m))
                    .sum()
            })
            .collect())
    }
}

fn check_dim(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::InvalidArgument(format!(
            "feature dimension {} does not match model dimension {expected}",
            x.len()
        )));
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = rows.first() else {
        return Err(Error::Empty("feature matrix".into()));
    };
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged feature matrix".into()));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        d,
        rows.iter().flatten().copied(),
    ))
}

/// Principal components of the centred rows (sample covariance,
/// symmetric eigendecomposition). Each component is signed so its
/// largest-magnitude entry is positive.
pub fn fit_pca(features: &[Vec<f64>], d_out: usize) -> Result<PcaModel> {
    let x = to_matrix(features)?;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if d_out == 0 || d_out > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "PCA output dimension {d_out} must be in 1..={}",
            n.min(d)
        )));
    }
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    if centred.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate(
            "all feature rows are identical; disable PCA (dimension 0) instead".into(),
        ));
    }
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(d_out);
    let mut explained_variance = Vec::with_capacity(d_out);
    for &idx in order.iter().take(d_out) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        mean: mean.iter().copied().collect(),
        components,
        explained_variance,
    })
}

#[derive(Debug, Clone)]
struct Component {
    class: usize,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_prior: f64,
    log_det: f64,
}

/// Class-conditional Gaussians with class-frequency priors.
#[derive(Debug, Clone)]
pub struct GdaModel {
    dim: usize,
    components: Vec<Component>,
    jitter_used: f64,
    dropped: Vec<usize>,
}

impl GdaModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Classes in `0..K` that had no samples and so have no component.
    pub fn dropped_classes(&self) -> &[usize] {
        &self.dropped
    }

    pub fn classes(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.class).collect()
    }

    pub fn class_mean(&self, class: usize) -> Option<Vec<f64>> {
        self.component(class)
            .map(|c| c.mean.iter().copied().collect())
    }

    /// Covariance including jitter.
    pub fn class_covariance(&self, class: usize) -> Option<DMatrix<f64>> {
        self.component(class).map(|c| c.covariance.clone())
    }

    pub fn log_prior(&self, class: usize) -> Option<f64> {
        self.component(class).map(|c| c.log_prior)
    }

    fn component(&self, class: usize) -> Option<&Component> {
        self.components.iter().find(|c| c.class == class)
    }

    /// Log mixture density at `x`, in nats.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(x, self.dim)?;
        let x = DVector::from_column_slice(x);
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let diff = &x - &c.mean;
                let z = c
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&diff)
                    .expect("Cholesky factor has a positive diagonal");
                c.log_prior
                    - 0.5 * z.norm_squared()
                    - 0.5 * c.log_det
                    - 0.5 * self.dim as f64 * LN_2PI
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    fn from_parts(
        dim: usize,
        parts: Vec<(usize, DVector<f64>, DMatrix<f64>, f64)>,
        jitter_used: f64,
        dropped: Vec<usize>,
    ) -> Result<Self> {
        let components = parts
            .into_iter()
            .map(|(class, mean, covariance, log_prior)| {
                let chol = Cholesky::new(covariance.clone()).ok_or(Error::Cholesky {
                    class,
                    doublings: 0,
                })?;
                let log_det = 2.0
                    * chol
                        .l_dirty()
                        .diagonal()
                        .iter()
                        .map(|v| v.ln())
                        .sum::<f64>();
                Ok(Component {
                    class,
                    mean,
                    covariance,
                    chol,
                    log_prior,
                    log_det,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GdaModel {
            dim,
            components,
            jitter_used,
            dropped,
        })
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Fits one Gaussian per class present in `labels`. Covariances are the
/// population (divide-by-count) scatter plus `eps * I`, where `eps` starts at
/// [`INITIAL_JITTER`] and doubles until every class factorizes.
pub fn fit_gda(features: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<GdaModel> {
    let x = to_matrix(features)?;
    let (n, d) = x.shape();
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {n} feature rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {classes})"
        )));
    }

    let mut counts = vec![0usize; classes];
    let mut sums = vec![DVector::<f64>::zeros(d); classes];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        sums[l] += x.row(i).transpose();
    }
    let dropped: Vec<usize> = (0..classes).filter(|&k| counts[k] == 0).collect();
    if !dropped.is_empty() {
        log::warn!("classes {dropped:?} have no training features and are left out of the mixture");
    }
    let means: Vec<DVector<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { s.clone() })
        .collect();
    let mut scatter = vec![DMatrix::<f64>::zeros(d, d); classes];
    for (i, &l) in labels.iter().enumerate() {
        let diff = x.row(i).transpose() - &means[l];
        scatter[l] += &diff * diff.transpose();
    }

    let present: Vec<usize> = (0..classes).filter(|&k| counts[k] > 0).collect();
    let mut jitter = INITIAL_JITTER;
    for doubling in 0..=MAX_JITTER_DOUBLINGS {
        let covs: Vec<DMatrix<f64>> = present
            .iter()
            .map(|&k| &scatter[k] / counts[k] as f64 + DMatrix::<f64>::identity(d, d) * jitter)
            .collect();
        if covs.iter().all(|c| Cholesky::new(c.clone()).is_some()) {
            let parts = present
                .iter()
                .zip(covs)
                .map(|(&k, cov)| {
                    let prior = counts[k] as f64 / n as f64;
                    (k, means[k].clone(), cov, prior.ln())
                })
                .collect();
            return GdaModel::from_parts(d, parts, jitter, dropped);
        }
        if doubling == MAX_JITTER_DOUBLINGS {
            let class = present
                .iter()
                .zip(covs)
                .find(|(_, c)| Cholesky::new(c.clone()).is_none())
                .map(|(&k, _)| k)
                .unwrap_or(0);
            return Err(Error::Cholesky {
                class,
                doublings: MAX_JITTER_DOUBLINGS,
            });
        }
        jitter *= 2.0;
    }
    unreachable!()
}

/// PCA (optional) plus GDA, fitted on a training split.
#[derive(Debug, Clone)]
pub struct DensityModel {
    pub pca: Option<PcaModel>,
    pub gda: GdaModel,
}

impl DensityModel {
    /// Fits on the features of every kept step, labelled by its gold class.
    /// Sequence-classification dumps contribute one row per record.
    pub fn fit(train: &Dataset, pca_dim: Option<usize>) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for r in &train.records {
            let feats = r.features().ok_or_else(|| Error::Unavailable {
                metric: "log_density".into(),
                reason: format!("training record `{}` has no features", r.id),
            })?;
            for t in r.kept_steps() {
                rows.push(feats[t].clone());
                labels.push(r.gold()[t] as usize);
            }
        }
        if rows.is_empty() {
            return Err(Error::Empty("no kept training features".into()));
        }
        let pca = match pca_dim {
            Some(k) if k > 0 => Some(fit_pca(&rows, k)?),
            _ => None,
        };
        if let Some(p) = &pca {
            rows = rows
                .iter()
                .map(|x| p.transform(x))
                .collect::<Result<Vec<_>>>()?;
        }
        let gda = fit_gda(&rows, &labels, train.class_count)?;
        Ok(DensityModel { pca, gda })
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match &self.pca {
            Some(p) => self.gda.log_density(&p.transform(x)?),
            None => self.gda.log_density(x),
        }
    }

    pub fn to_file(&self) -> DensityModelFile {
        DensityModelFile {
            dim: self.gda.dim,
            jitter_used: self.gda.jitter_used,
            dropped_classes: self.gda.dropped.clone(),
            pca: self.pca.clone(),
            components: self
                .gda
                .components
                .iter()
                .map(|c| {
                    let l = c.chol.l();
                    ComponentFile {
                        class: c.class,
                        mean: c.mean.iter().copied().collect(),
                        cholesky_lower: (0..self.gda.dim)
                            .map(|i| (0..=i).map(|j| l[(i, j)]).collect())
                            .collect(),
                        log_prior: c.log_prior,
                    }
                })
                .collect(),
        }
    }

    pub fn from_file(file: DensityModelFile) -> Result<Self> {
        let d = file.dim;
        let parts = file
            .components
            .into_iter()
            .map(|c| {
                if c.mean.len() != d || c.cholesky_lower.len() != d {
                    return Err(Error::InvalidArgument(format!(
                        "component for class {} has the wrong dimension",
                        c.class
                    )));
                }
                let mut l = DMatrix::<f64>::zeros(d, d);
                for (i, row) in c.cholesky_lower.iter().enumerate() {
                    if row.len() != i + 1 {
                        return Err(Error::InvalidArgument(
                            "Cholesky rows must be lower-triangular".into(),
                        ));
                    }
                    for (j, v) in row.iter().enumerate() {
                        l[(i, j)] = *v;
                    }
                }
                let cov = &l * l.transpose();
                Ok((c.class, DVector::from_vec(c.mean), cov, c.log_prior))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DensityModel {
            pca: file.pca,
            gda: GdaModel::from_parts(d, parts, file.jitter_used, file.dropped_classes)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &self.to_file())?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// On-disk form of a [`DensityModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModelFile {
    pub dim: usize,
    pub jitter_used: f64,
    pub dropped_classes: Vec<usize>,
    pub pca: Option<PcaModel>,
    pub components: Vec<ComponentFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    pub class: usize,
    pub mean: Vec<f64>,
    /// Row `i` holds entries `0..=i` of the lower factor.
    pub cholesky_lower: Vec<Vec<f64>>,
    pub log_prior: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pca_collinear_points() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let pca = fit_pca(&pts, 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(pca.components[0][0], s, epsilon = 1e-10);
        assert_abs_diff_eq!(pca.components[0][1], s, epsilon = 1e-10);
        assert_abs_diff_eq!(pca.explained_variance[1], 0.0, epsilon = 1e-10);
        assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
    }

    #[test]
    fn pca_three_points_on_axis() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]];
        let pca = fit_pca(&pts, 1).unwrap();
        assert_eq!(pca.mean, vec![1.0, 0.0]);
        assert_abs_diff_eq!(pca.components[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pca.components[0][1], 0.0, epsilon = 1e-12);
        // sample variance of {0,1,2}
        assert_abs_diff_eq!(pca.explained_variance[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pca_full_rank_preserves_distances() {
        let pts = vec![
            vec![1.0, 2.0, 0.5],
            vec![-0.3, 1.1, 4.0],
            vec![2.2, -1.0, 0.0],
            vec![0.7, 0.7, -2.0],
            vec![3.0, 0.1, 1.0],
        ];
        let pca = fit_pca(&pts, 3).unwrap();
        for (i, a) in pca.components.iter().enumerate() {
            for (j, b) in pca.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert_abs_diff_eq!(dot, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-8);
            }
        }
        let proj: Vec<Vec<f64>> = pts.iter().map(|p| pca.transform(p).unwrap()).collect();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert_abs_diff_eq!(
                    dist(&pts[i], &pts[j]),
                    dist(&proj[i], &proj[j]),
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn pca_errors() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(fit_pca(&pts, 1), Err(Error::Degenerate(_))));
        let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(fit_pca(&pts, 3), Err(Error::InvalidArgument(_))));
        assert!(fit_pca(&pts[..1], 1).is_err());
    }

    #[test]
    fn gda_hand_covariance() {
        let pts = vec![
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, -1.0],
            vec![0.0, 1.0],
        ];
        let m = fit_gda(&pts, &[0, 0, 0, 0], 1).unwrap();
        assert_eq!(m.class_mean(0).unwrap(), vec![0.0, 0.0]);
        let cov = m.class_covariance(0).unwrap();
        let j = m.jitter_used();
        assert_eq!(j, INITIAL_JITTER);
        assert_abs_diff_eq!(cov[(0, 0)], 0.5 + j, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(1, 1)], 0.5 + j, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gda_single_sample_is_pure_jitter_and_priors_are_frequencies() {
        let pts = vec![vec![3.0, 4.0], vec![-1.0, 2.0]];
        let m = fit_gda(&pts, &[0, 1], 3).unwrap();
        let cov = m.class_covariance(1).unwrap();
        assert_eq!(cov, DMatrix::identity(2, 2) * m.jitter_used());
        assert_abs_diff_eq!(m.log_prior(0).unwrap(), 0.5f64.ln());
        assert_abs_diff_eq!(m.log_prior(1).unwrap(), 0.5f64.ln());
        assert_eq!(m.dropped_classes(), &[2]);
        assert_eq!(m.classes(), vec![0, 1]);
    }

    #[test]
    fn gda_collinear_needs_only_initial_jitter() {
        // rank-1 scatter: singular without jitter
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = fit_gda(&pts, &[0; 5], 1).unwrap();
        assert!(m.jitter_used() >= INITIAL_JITTER);
        assert!(m.log_density(&[1.0, 2.0]).unwrap().is_finite());
    }

    fn unit_model() -> GdaModel {
        GdaModel::from_parts(
            2,
            vec![(0, DVector::zeros(2), DMatrix::identity(2, 2), 0.0)],
            0.0,
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn log_density_closed_form() {
        let m = unit_model();
        let two_pi_ln = (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(
            m.log_density(&[0.0, 0.0]).unwrap(),
            -two_pi_ln,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            m.log_density(&[3.0, 0.0]).unwrap(),
            -two_pi_ln - 4.5,
            epsilon = 1e-12
        );
        assert!(m.log_density(&[1.0]).is_err());
    }

    #[test]
    fn log_density_translation_invariant_and_radially_decreasing() {
        let pts = vec![
            vec![0.2, 1.0],
            vec![1.4, -0.3],
            vec![-0.9, 0.5],
            vec![0.1, -1.2],
            vec![2.0, 0.3],
        ];
        let shift = [10.0, -7.5];
        let moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| vec![p[0] + shift[0], p[1] + shift[1]])
            .collect();
        let a = fit_gda(&pts, &[0; 5], 1).unwrap();
        let b = fit_gda(&moved, &[0; 5], 1).unwrap();
        let x = [0.7, 0.2];
        assert_abs_diff_eq!(
            a.log_density(&x).unwrap(),
            b.log_density(&[x[0] + shift[0], x[1] + shift[1]]).unwrap(),
            epsilon = 1e-9
        );
        let mu = a.class_mean(0).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let r = step as f64 * 0.3;
            let v = a.log_density(&[mu[0] + r * 0.6, mu[1] + r * 0.8]).unwrap();
            assert!(v < prev || step == 0);
            prev = v;
        }
    }

    #[test]
    fn identical_components_match_single() {
        let single = unit_model();
        let many = GdaModel::from_parts(
            2,
            (0..3)
                .map(|k| {
                    (
                        k,
                        DVector::zeros(2),
                        DMatrix::identity(2, 2),
                        (1.0f64 / 3.0).ln(),
                    )
                })
                .collect(),
            0.0,
            vec![],
        )
        .unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0], [3.5, 0.25]] {
            assert_abs_diff_eq!(
                single.log_density(&x).unwrap(),
                many.log_density(&x).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn model_file_round_trip() {
        let pts = vec![
            vec![0.2, 1.0, 0.0],
            vec![1.4, -0.3, 1.0],
            vec![-0.9, 0.5, 0.3],
            vec![0.1, -1.2, -0.4],
            vec![2.0, 0.3, 0.9],
            vec![1.0, 1.0, 1.0],
        ];
        let pca = fit_pca(&pts, 2).unwrap();
        let proj: Vec<Vec<f64>> = pts.iter().map(|p| pca.transform(p).unwrap()).collect();
        let gda = fit_gda(&proj, &[0, 1, 0, 1, 0, 1], 2).unwrap();
        let model = DensityModel {
            pca: Some(pca),
            gda,
        };
        let json = serde_json::to_string(&model.to_file()).unwrap();
        let back = DensityModel::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        for p in &pts {
            assert_abs_diff_eq!(
                model.score(p).unwrap(),
                back.score(p).unwrap(),
                epsilon = 1e-9
            );
        }
    }
}
