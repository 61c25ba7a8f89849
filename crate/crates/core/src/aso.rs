//! Almost Stochastic Order test for comparing score distributions across
//! runs (e.g. one score per random seed and model).
//!
//! The violation ratio measures, on a uniform quantile grid, how much of the
//! squared quantile distance between `a` and `b` comes from points where `a`
//! is worse than `b`. `epsilon_min` adds a one-sided bootstrap upper bound
//! on top of it, so `a` is only declared almost stochastically dominant when
//! the evidence survives resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsoConfig {
    pub confidence_alpha: f64,
    pub decision_threshold: f64,
    pub n_bootstrap: usize,
    pub quantile_grid: usize,
    pub seed: u64,
}

impl Default for AsoConfig {
    fn default() -> Self {
        AsoConfig {
            confidence_alpha: 0.05,
            decision_threshold: 0.3,
            n_bootstrap: 1000,
            quantile_grid: 1000,
            seed: 0,
        }
    }
}

impl AsoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_alpha > 0.0 && self.confidence_alpha < 1.0) {
            return Err(Error::Config(format!(
                "confidence alpha {} must lie in (0, 1)",
                self.confidence_alpha
            )));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold <= 0.5) {
            return Err(Error::Config(format!(
                "decision threshold {} must lie in (0, 0.5]",
                self.decision_threshold
            )));
        }
        if self.n_bootstrap < 100 {
            return Err(Error::Config(format!(
                "need at least 100 bootstrap resamples, got {}",
                self.n_bootstrap
            )));
        }
        if self.quantile_grid == 0 {
            return Err(Error::Config("quantile grid must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsoResult {
    pub epsilon_hat: f64,
    pub epsilon_min: f64,
    pub dominant: bool,
    pub n_a: usize,
    pub n_b: usize,
}

fn sorted_checked(xs: &[f64], what: &str) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Empty(format!("no scores for {what}")));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("scores for {what}")));
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Left-continuous inverse of the empirical step CDF of sorted data.
fn quantile(sorted: &[f64], t: f64) -> f64 {
    let n = sorted.len();
    let idx = ((t * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

fn violation_ratio_sorted(a: &[f64], b: &[f64], grid: usize) -> f64 {
    let mut violation = 0.0;
    let mut total = 0.0;
    for i in 0..grid {
        let t = (i as f64 + 0.5) / grid as f64;
        let d = quantile(a, t) - quantile(b, t);
        let sq = d * d;
        total += sq;
        if d < 0.0 {
            violation += sq;
        }
    }
    if total == 0.0 {
        0.5
    } else {
        violation / total
    }
}

/// Share of the squared quantile distance where `a` falls below `b`
/// (higher scores are better). `0.5` when the two quantile functions agree
/// everywhere on the grid.
pub fn violation_ratio(a: &[f64], b: &[f64], grid: usize) -> Result<f64> {
    if grid == 0 {
        return Err(Error::InvalidArgument(
            "quantile grid must be non-empty".into(),
        ));
    }
    let a = sorted_checked(a, "a")?;
    let b = sorted_checked(b, "b")?;
    Ok(violation_ratio_sorted(&a, &b, grid))
}

fn resample(src: &[f64], rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..src.len()).map(|_| src[rng.random_range(0..src.len())]));
    out.sort_by(f64::total_cmp);
}

/// Empirical `q`-quantile with linear interpolation between order
/// statistics.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `epsilon_min = clamp(eps_hat + q_{1-alpha}(eps* - eps_hat), 0, 1)` with
/// the bootstrap distribution `eps*` from resampling both sides with
/// replacement. Resample `i` draws from its own ChaCha stream `i` under the
/// configured seed, so the result does not depend on thread scheduling.
pub fn aso_min_epsilon(a: &[f64], b: &[f64], cfg: &AsoConfig) -> Result<AsoResult> {
    cfg.validate()?;
    let min_len = a.len().min(b.len());
    if min_len < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: min_len,
        });
    }
    let sa = sorted_checked(a, "a")?;
    let sb = sorted_checked(b, "b")?;
    let eps_hat = violation_ratio_sorted(&sa, &sb, cfg.quantile_grid);

    let mut deviations: Vec<f64> = (0..cfg.n_bootstrap as u64)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(ra, rb), i| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i);
                resample(&sa, &mut rng, ra);
                resample(&sb, &mut rng, rb);
                violation_ratio_sorted(ra, rb, cfg.quantile_grid) - eps_hat
            },
        )
        .collect();
    deviations.sort_by(f64::total_cmp);
    let correction = interpolated_quantile(&deviations, 1.0 - cfg.confidence_alpha).max(0.0);
    let epsilon_min = (eps_hat + correction).clamp(0.0, 1.0);
    Ok(AsoResult {
        epsilon_hat: eps_hat,
        epsilon_min,
        dominant: epsilon_min <= cfg.decision_threshold,
        n_a: a.len(),
        n_b: b.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceMatrix {
    pub names: Vec<String>,
    /// `results[i][j]` tests group `i` against group `j`; `None` on the
    /// diagonal.
    pub results: Vec<Vec<Option<AsoResult>>>,
    /// Groups almost stochastically dominant over every other group.
    pub dominant: Vec<String>,
}

impl DominanceMatrix {
    /// Fixed-width text rendering of the `epsilon_min` matrix.
    pub fn render(&self) -> String {
        let width = self.names.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut out = format!("{:width$}", "eps_min");
        for n in &self.names {
            out.push_str(&format!("  {n:>width$}"));
        }
        out.push('\n');
        for (i, row) in self.results.iter().enumerate() {
            out.push_str(&format!("{:width$}", self.names[i]));
            for cell in row {
                match cell {
                    Some(r) => {
                        let mark = if r.dominant { "*" } else { " " };
                        out.push_str(&format!("  {:>w$.4}{mark}", r.epsilon_min, w = width - 1));
                    }
                    None => out.push_str(&format!("  {:>width$}", "-")),
                }
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "dominant over all others: {}\n",
            if self.dominant.is_empty() {
                "none".to_string()
            } else {
                self.dominant.join(", ")
            }
        ));
        out
    }
}

/// Runs the test for every ordered pair of groups. Pair `(i, j)` uses the
/// seed `cfg.seed + i * n + j` so every cell is reproducible on its own.
pub fn dominance_matrix(groups: &[(String, Vec<f64>)], cfg: &AsoConfig) -> Result<DominanceMatrix> {
    if groups.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: groups.len(),
        });
    }
    let n = groups.len();
    let mut results = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let cell_cfg = AsoConfig {
                seed: cfg.seed.wrapping_add((i * n + j) as u64),
                ..*cfg
            };
            results[i][j] = Some(aso_min_epsilon(&groups[i].1, &groups[j].1, &cell_cfg)?);
        }
    }
    let dominant = (0..n)
        .filter(|&i| {
            results[i]
                .iter()
                .enumerate()
                .all(|(j, r)| j == i || r.is_some_and(|r| r.dominant))
        })
        .map(|i| groups[i].0.clone())
        .collect();
    Ok(DominanceMatrix {
        names: groups.iter().map(|g| g.0.clone()).collect(),
        results,
        dominant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> AsoConfig {
        AsoConfig {
            n_bootstrap: 200,
            seed: 7,
            ..AsoConfig::default()
        }
    }

    #[test]
    fn violation_ratio_examples() {
        let a = [10.0, 11.0, 12.0];
        let b = [1.0, 2.0, 3.0];
        assert_eq!(violation_ratio(&a, &b, 1000).unwrap(), 0.0);
        assert_eq!(violation_ratio(&b, &a, 1000).unwrap(), 1.0);
        assert_eq!(violation_ratio(&a, &a, 1000).unwrap(), 0.5);
        assert!(violation_ratio(&[], &a, 1000).is_err());
    }

    #[test]
    fn quantile_is_left_continuous_inverse() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.25), 1.0);
        assert_eq!(quantile(&s, 0.2500001), 2.0);
        assert_eq!(quantile(&s, 0.0001), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
    }

    #[test]
    fn min_epsilon_examples() {
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 10.0).collect();
        let r = aso_min_epsilon(
            &a,
            &b,
            &AsoConfig {
                seed: 1,
                ..AsoConfig::default()
            },
        )
        .unwrap();
        assert_eq!(r.epsilon_hat, 0.0);
        assert!(r.epsilon_min <= 0.05);
        assert!(r.dominant);
        assert_eq!((r.n_a, r.n_b), (20, 20));

        assert!(matches!(
            aso_min_epsilon(&[1.0], &b, &cfg()),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn config_validation() {
        for bad in [
            AsoConfig {
                confidence_alpha: 0.0,
                ..cfg()
            },
            AsoConfig {
                decision_threshold: 0.6,
                ..cfg()
            },
            AsoConfig {
                n_bootstrap: 10,
                ..cfg()
            },
        ] {
            assert!(matches!(
                aso_min_epsilon(&[1.0, 2.0], &[1.0, 2.0], &bad),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = [0.71, 0.69, 0.73, 0.70, 0.72];
        let b = [0.70, 0.68, 0.74, 0.69, 0.71];
        let x = aso_min_epsilon(&a, &b, &cfg()).unwrap();
        let y = aso_min_epsilon(&a, &b, &cfg()).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.epsilon_min.to_bits(), y.epsilon_min.to_bits());
    }

    #[test]
    fn matrix_examples() {
        let low: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let high: Vec<f64> = low.iter().map(|v| v + 5.0).collect();
        let m = dominance_matrix(
            &[("low".into(), low.clone()), ("high".into(), high)],
            &cfg(),
        )
        .unwrap();
        assert_eq!(m.dominant, vec!["high".to_string()]);
        assert!(m.render().contains("high"));

        let same: Vec<(String, Vec<f64>)> =
            (0..3).map(|i| (format!("m{i}"), low.clone())).collect();
        let m = dominance_matrix(&same, &cfg()).unwrap();
        assert!(m.dominant.is_empty());

        let groups = vec![
            ("a".to_string(), vec![0.1, 0.5, 0.3, 0.9, 0.4]),
            ("b".to_string(), vec![0.2, 0.35, 0.6, 0.45, 0.5]),
            ("c".to_string(), vec![0.7, 0.15, 0.25, 0.55, 0.8]),
        ];
        let m = dominance_matrix(&groups, &cfg()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let s =
                        m.results[i][j].unwrap().epsilon_hat + m.results[j][i].unwrap().epsilon_hat;
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
        assert!(dominance_matrix(&groups[..1], &cfg()).is_err());
    }

    proptest! {
        #[test]
        fn complement_and_shift_properties(
            a in proptest::collection::vec(-10.0f64..10.0, 2..15),
            b in proptest::collection::vec(-10.0f64..10.0, 2..15),
            c in -5.0f64..5.0,
            up in 0.0f64..3.0,
        ) {
            let ab = violation_ratio(&a, &b, 200).unwrap();
            let ba = violation_ratio(&b, &a, 200).unwrap();
            if ab != 0.5 || ba != 0.5 {
                prop_assert!((ab + ba - 1.0).abs() < 1e-9);
            }
            let sa: Vec<f64> = a.iter().map(|v| v + c).collect();
            let sb: Vec<f64> = b.iter().map(|v| v + c).collect();
            prop_assert!((violation_ratio(&sa, &sb, 200).unwrap() - ab).abs() < 1e-9);
            let lifted: Vec<f64> = a.iter().map(|v| v + up).collect();
            prop_assert!(violation_ratio(&lifted, &b, 200).unwrap() <= ab + 1e-12);
        }

        #[test]
        fn bootstrap_bound_never_below_estimate(
            a in proptest::collection::vec(-1.0f64..1.0, 2..10),
            b in proptest::collection::vec(-1.0f64..1.0, 2..10),
        ) {
            let r = aso_min_epsilon(&a, &b, &AsoConfig { n_bootstrap: 100, quantile_grid: 100, ..cfg() }).unwrap();
            prop_assert!(r.epsilon_min >= r.epsilon_hat);
            prop_assert!((0.0..=1.0).contains(&r.epsilon_min));
            prop_assert_eq!(r.dominant, r.epsilon_min <= 0.3);
        }
    }
}
