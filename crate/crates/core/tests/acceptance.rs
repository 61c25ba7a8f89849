//! Acceptance criteria, one PASS/FAIL line each. Oracles here are written
//! independently of the library code they check.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Gamma, Normal, StandardNormal};

use uqeval::aso::{aso_min_epsilon, violation_ratio, AsoConfig};
use uqeval::calibration::{
    ace, confidence_points, coverage_of, ece, pooled_predictions, prediction_set,
};
use uqeval::cli::{cmd_evaluate, cmd_synth, RunConfig, RunSpec};
use uqeval::density::{fit_gda, DensityModel};
use uqeval::discrimination::{auroc, kendall_tau};
use uqeval::metrics::{compute_series, entropy, mutual_information, predictive_entropy};
use uqeval::sampler::{compare_distributions, subsample, CorpusRecord, SamplePlan, SampleTask};
use uqeval::synth::{gen_calibrated, gen_id_ood, SynthKind, SynthSpec};
use uqeval::{Aggregation, Distribution, Metric, SampleSet, Split};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(
        elapsed < Duration::from_secs(limit_s),
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn entropy_oracle(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum()
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize) -> Distribution {
    let alpha = [0.05, 0.3, 1.0, 5.0][rng.random_range(0..4)];
    let gamma = Gamma::new(alpha, 1.0).unwrap();
    loop {
        let mut w: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        // exact zeros exercise the 0 ln 0 convention
        if rng.random_bool(0.2) {
            let z = rng.random_range(0..k);
            w[z] = 0.0;
        }
        let t: f64 = w.iter().sum();
        if t > 0.0 {
            return Distribution::new(w.iter().map(|x| x / t).collect()).unwrap();
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_identity = 0.0f64;
    let mut min_pre_clamp = f64::INFINITY;
    for _ in 0..10_000 {
        let k = rng.random_range(2..=50);
        let s = rng.random_range(1..=20);
        let dists: Vec<Distribution> = (0..s).map(|_| random_distribution(&mut rng, k)).collect();
        let mut mean = vec![0.0; k];
        for d in &dists {
            for (m, p) in mean.iter_mut().zip(d.probs()) {
                *m += p / s as f64;
            }
        }
        let h_mean = entropy_oracle(&mean);
        let mean_h = dists.iter().map(|d| entropy_oracle(d.probs())).sum::<f64>() / s as f64;
        let expected = h_mean - mean_h;
        if s >= 2 {
            min_pre_clamp = min_pre_clamp.min(expected);
        }

        let set = SampleSet::new(dists.clone()).unwrap();
        let mi = mutual_information(&set).map_err(|e| format!("mutual_information failed: {e}"))?;
        worst_identity = worst_identity.max((mi.epistemic - expected.max(0.0)).abs());
        worst_identity = worst_identity.max((mi.total - mi.aleatoric - mi.epistemic).abs());

        let ln_k = (k as f64).ln();
        for d in &dists {
            let h = predictive_entropy(d);
            ensure(
                (0.0..=ln_k).contains(&h),
                format!("entropy {h} outside [0, ln {k}]"),
            )?;
            ensure(
                (entropy(d.probs()) - entropy_oracle(d.probs())).abs() < 1e-9,
                "entropy mismatch",
            )?;
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst_identity <= 1e-9,
        format!("MI identity error {worst_identity:e} > 1e-9"),
    )?;
    ensure(
        min_pre_clamp >= -1e-8,
        format!("pre-clamp MI {min_pre_clamp:e} < -1e-8"),
    )?;
    within(elapsed, 10)?;
    Ok(format!(
        "max |MI - (H(mean) - mean H)| = {worst_identity:.2e}, min pre-clamp MI (S >= 2) = {min_pre_clamp:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn auroc_oracle(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for o in ood {
        for i in id {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

fn tau_b_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                _ if (dx > 0.0) == (dy > 0.0) => c += 1,
                _ => d += 1,
            }
        }
    }
    let denom = (((c + d + tx) * (c + d + ty)) as f64).sqrt();
    (denom > 0.0).then(|| (c - d) as f64 / denom)
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize, tied: bool) -> Vec<f64> {
    if tied {
        let levels = rng.random_range(1..8);
        (0..n).map(|_| rng.random_range(0..levels) as f64).collect()
    } else {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_auroc = 0.0f64;
    let mut worst_tau = 0.0f64;
    let mut undefined = 0;
    for case in 0..500 {
        let tied = case % 2 == 0;
        let n_id = rng.random_range(1..=200);
        let n_ood = rng.random_range(1..=200);
        let id = random_scores(&mut rng, n_id, tied);
        let ood = random_scores(&mut rng, n_ood, tied);
        let fast = auroc(&id, &ood).map_err(|e| e.to_string())?;
        worst_auroc = worst_auroc.max((fast - auroc_oracle(&id, &ood)).abs());

        let n = rng.random_range(2..=200);
        let x = random_scores(&mut rng, n, tied);
        let y = random_scores(&mut rng, n, tied);
        match (kendall_tau(&x, &y), tau_b_oracle(&x, &y)) {
            (Ok(a), Some(b)) => worst_tau = worst_tau.max((a - b).abs()),
            (Err(_), None) => undefined += 1,
            (a, b) => return Err(format!("tau disagreement: fast {a:?}, oracle {b:?}")),
        }
    }
    let elapsed = start.elapsed();
    ensure(worst_auroc <= 1e-12, format!("AUROC error {worst_auroc:e}"))?;
    ensure(worst_tau <= 1e-12, format!("tau error {worst_tau:e}"))?;
    within(elapsed, 30)?;
    Ok(format!(
        "max AUROC error {worst_auroc:.1e}, max tau-b error {worst_tau:.1e} ({undefined} undefined cases agree), {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_3() -> Outcome {
    let spec = SynthSpec {
        n_id: 50_000,
        classes: 10,
        seed: 3,
        ..Default::default()
    };
    let ds = gen_calibrated(&spec).map_err(|e| e.to_string())?;
    let (probs, gold) = pooled_predictions(&ds);
    let e = ece(&confidence_points(&probs, &gold), 10).map_err(|e| e.to_string())?;
    let a = ace(&probs, &gold, 10, 0.0).map_err(|e| e.to_string())?;
    let (coverage, width) = coverage_of(&probs, &gold, 0.05).map_err(|e| e.to_string())?;
    let detail = format!("ECE {e:.4}, ACE {a:.4}, coverage {coverage:.4}, mean width {width:.2}");
    ensure(e <= 0.02, format!("ECE too high: {detail}"))?;
    ensure(a <= 0.03, format!("ACE too high: {detail}"))?;
    ensure(
        (0.93..=0.97).contains(&coverage),
        format!("coverage out of range: {detail}"),
    )?;
    Ok(detail)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target = 0.95;
    let mut min_mass = f64::INFINITY;
    let mut max_without_last = f64::NEG_INFINITY;
    let mut cases: Vec<Distribution> = (0..9_999)
        .map(|_| {
            let k = rng.random_range(2..=30);
            random_distribution(&mut rng, k)
        })
        .collect();
    cases.push(Distribution::uniform(20));
    for d in &cases {
        let set = prediction_set(d, 0.05);
        let p = d.probs();
        let mass: f64 = set.classes.iter().map(|&c| p[c]).sum();
        let last = *set.classes.last().ok_or("empty prediction set")?;
        // members must be the highest-probability classes
        let smallest_in = set
            .classes
            .iter()
            .map(|&c| p[c])
            .fold(f64::INFINITY, f64::min);
        let largest_out = (0..p.len())
            .filter(|c| !set.classes.contains(c))
            .map(|c| p[c])
            .fold(f64::NEG_INFINITY, f64::max);
        ensure(
            smallest_in >= largest_out,
            "set skips a more probable class",
        )?;
        min_mass = min_mass.min(mass);
        max_without_last = max_without_last.max(mass - p[last]);
    }
    // 1e-12 absorbs summation order on sets like uniform K = 20
    ensure(
        min_mass >= target - 1e-12,
        format!("set mass {min_mass} < 0.95"),
    )?;
    ensure(
        max_without_last < target,
        format!("mass without last member {max_without_last} >= 0.95"),
    )?;
    Ok(format!(
        "min set mass {min_mass:.6}, max mass without last member {max_without_last:.6}, {} distributions",
        cases.len()
    ))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let na = rng.random_range(2..=50);
        let nb = rng.random_range(2..=50);
        let a: Vec<f64> = (0..na).map(|_| rng.random::<f64>() * 10.0).collect();
        let b: Vec<f64> = (0..nb)
            .map(|_| rng.random::<f64>() * 10.0 + rng.random::<f64>())
            .collect();
        let s = violation_ratio(&a, &b, 1000).map_err(|e| e.to_string())?
            + violation_ratio(&b, &a, 1000).map_err(|e| e.to_string())?;
        worst = worst.max((s - 1.0).abs());
    }
    ensure(worst <= 1e-9, format!("complement error {worst:e}"))?;

    let mut worst_sep = 0.0f64;
    for i in 0..20u64 {
        let n = 5 + i as usize * 2;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let b: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let a: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng) + 10.0).collect();
        let cfg = AsoConfig {
            seed: i,
            ..Default::default()
        };
        let r = aso_min_epsilon(&a, &b, &cfg).map_err(|e| e.to_string())?;
        ensure(r.dominant, format!("separated pair {i} not dominant"))?;
        worst_sep = worst_sep.max(r.epsilon_min);
    }
    ensure(worst_sep <= 0.05, format!("separated eps_min {worst_sep}"))?;

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut one_sided = 0;
    let mut either = 0;
    for trial in 0..200u64 {
        let mut trng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let a: Vec<f64> = (0..20).map(|_| normal.sample(&mut trng)).collect();
        let b: Vec<f64> = (0..20).map(|_| normal.sample(&mut trng)).collect();
        let cfg = AsoConfig {
            seed: trial,
            ..Default::default()
        };
        let ab = aso_min_epsilon(&a, &b, &cfg)
            .map_err(|e| e.to_string())?
            .dominant;
        let ba = aso_min_epsilon(&b, &a, &cfg)
            .map_err(|e| e.to_string())?
            .dominant;
        one_sided += ab as usize;
        either += (ab || ba) as usize;
    }
    let rate = one_sided as f64 / 200.0;
    ensure(rate <= 0.10, format!("false dominance rate {rate}"))?;
    let elapsed = start.elapsed();
    within(elapsed, 120)?;
    Ok(format!(
        "complement error {worst:.1e}; separated max eps_min {worst_sep:.3}; identical pairs: a>b declared in {:.1}% (either direction {:.1}%), {:.1}s",
        100.0 * rate,
        100.0 * either as f64 / 200.0,
        elapsed.as_secs_f64()
    ))
}

struct Gaussian2 {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
}

impl Gaussian2 {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let l11 = self.cov[0][0].sqrt();
        let l21 = self.cov[1][0] / l11;
        let l22 = (self.cov[1][1] - l21 * l21).sqrt();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        vec![self.mean[0] + l11 * z1, self.mean[1] + l21 * z1 + l22 * z2]
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let [[a, b], [_, d]] = self.cov;
        let det = a * d - b * b;
        let (u, v) = (x[0] - self.mean[0], x[1] - self.mean[1]);
        let quad = (d * u * u - 2.0 * b * u * v + a * v * v) / det;
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let classes = [
        Gaussian2 {
            mean: [0.0, 0.0],
            cov: [[1.0, 0.3], [0.3, 0.5]],
        },
        Gaussian2 {
            mean: [3.0, -1.0],
            cov: [[0.6, -0.2], [-0.2, 1.2]],
        },
    ];
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (k, g) in classes.iter().enumerate() {
        for _ in 0..10_000 {
            feats.push(g.sample(&mut rng));
            labels.push(k);
        }
    }
    let gda = fit_gda(&feats, &labels, 2).map_err(|e| e.to_string())?;
    let mut abs_err = 0.0;
    let held_out = 4000;
    for i in 0..held_out {
        let x = classes[i % 2].sample(&mut rng);
        let truth = (0.5 * classes[0].log_pdf(&x).exp() + 0.5 * classes[1].log_pdf(&x).exp()).ln();
        abs_err += (gda.log_density(&x).map_err(|e| e.to_string())? - truth).abs();
    }
    let mae = abs_err / held_out as f64;
    ensure(mae <= 0.05, format!("log-density MAE {mae}"))?;

    let spec = SynthSpec {
        n_train: 2000,
        n_id: 1000,
        n_ood: 1000,
        feature_dim: 8,
        seed: 6,
        ..Default::default()
    };
    let ds = gen_id_ood(&spec).map_err(|e| e.to_string())?;
    let model =
        DensityModel::fit(&ds.split(Split::Train).unwrap(), None).map_err(|e| e.to_string())?;
    let score = |split| -> Result<Vec<f64>, String> {
        let part = ds.split(split).unwrap();
        let s = compute_series(&part, Metric::LogDensity, Aggregation::Mean, Some(&model))
            .map_err(|e| e.to_string())?;
        Ok(s.canonical_sequence_scores())
    };
    let a = auroc(&score(Split::IdTest)?, &score(Split::OodTest)?).map_err(|e| e.to_string())?;
    ensure(a >= 0.95, format!("near/far log-density AUROC {a}"))?;
    Ok(format!(
        "held-out log-density MAE {mae:.4} nats; near/far AUROC {a:.4}"
    ))
}

fn source_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<CorpusRecord> {
    let label_weights = [0.45, 0.25, 0.15, 0.1, 0.05];
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let label = label_weights
                .iter()
                .position(|w| {
                    acc += w;
                    u < acc
                })
                .unwrap_or(4);
            // label-dependent length profile
            let len = (rng.random_range(1..=25) + 3 * label).min(40);
            let tokens = (0..len)
                .map(|_| format!("w{}", rng.random_range(0..400)))
                .collect();
            CorpusRecord::sequence(tokens, label)
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let corpus = source_corpus(&mut rng, 20_000);
    let mut worst_label = 0.0f64;
    let mut worst_length = 0.0f64;
    for seed in 0..50 {
        let plan = SamplePlan {
            target_size: 1000,
            seed,
            task: SampleTask::SequenceCls,
        };
        let sample = subsample(&corpus, &plan).map_err(|e| e.to_string())?;
        let cmp = compare_distributions(&corpus, &sample, 50).map_err(|e| e.to_string())?;
        worst_label = worst_label.max(cmp.label_js);
        worst_length = worst_length.max(cmp.length_js);
    }
    ensure(worst_label <= 0.01, format!("label JS {worst_label}"))?;
    ensure(worst_length <= 0.02, format!("length JS {worst_length}"))?;
    Ok(format!(
        "over 50 seeded samples of 1000: max label JS {worst_label:.5}, max length JS {worst_length:.5}"
    ))
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth_cfg = |dir: &str, kind, spec: SynthSpec| RunConfig {
        synth: spec,
        synth_kind: kind,
        output_dir: tmp.path().join(dir),
        seed: Some(8),
        ..Default::default()
    };
    let id_ood = SynthSpec {
        n_id: 5000,
        n_ood: 5000,
        id_concentration: 6.0,
        ood_concentration: 2.0,
        ..Default::default()
    };
    let manifest = cmd_synth(&synth_cfg("synth_a", SynthKind::IdOod, id_ood.clone()))
        .map_err(|e| e.to_string())?;
    cmd_synth(&synth_cfg("synth_b", SynthKind::IdOod, id_ood)).map_err(|e| e.to_string())?;
    let target = manifest.target_auroc.ok_or("manifest lacks target AUROC")?;
    let reference = manifest
        .reference_auroc
        .ok_or("manifest lacks reference AUROC")?;

    let eval_cfg = |synth_dir: &str, out: &str| RunConfig {
        runs: vec![RunSpec {
            model: "synthetic".into(),
            seed: None,
            dumps: vec![
                tmp.path().join(synth_dir).join("id_test.jsonl"),
                tmp.path().join(synth_dir).join("ood_test.jsonl"),
            ],
        }],
        metrics: Some(vec![Metric::PredictiveEntropy, Metric::MaxProb]),
        output_dir: tmp.path().join(out),
        ..Default::default()
    };
    let table = cmd_evaluate(&eval_cfg("synth_a", "eval_a")).map_err(|e| e.to_string())?;
    cmd_evaluate(&eval_cfg("synth_b", "eval_b")).map_err(|e| e.to_string())?;
    let engine = table
        .row("synthetic", Metric::PredictiveEntropy)
        .and_then(|r| r.auroc)
        .ok_or("no AUROC in table")?
        .mean;
    ensure(
        (engine - target).abs() <= 0.02,
        format!("engine AUROC {engine} vs manifest {target}"),
    )?;
    ensure(
        (engine - reference).abs() <= 0.02,
        format!("engine AUROC {engine} vs independent draw {reference}"),
    )?;

    let cal_spec = SynthSpec {
        n_id: 20_000,
        classes: 10,
        ..Default::default()
    };
    cmd_synth(&synth_cfg("cal", SynthKind::Calibrated, cal_spec)).map_err(|e| e.to_string())?;
    let cal_eval = RunConfig {
        runs: vec![RunSpec {
            model: "calibrated".into(),
            seed: None,
            dumps: vec![tmp.path().join("cal").join("id_test.jsonl")],
        }],
        output_dir: tmp.path().join("eval_cal"),
        ..Default::default()
    };
    let cal_table = cmd_evaluate(&cal_eval).map_err(|e| e.to_string())?;
    let cal_ece = cal_table.rows[0].ece.mean;
    ensure(cal_ece <= 0.02, format!("calibrated-mode ECE {cal_ece}"))?;

    let same = |a: &str, b: &str, file: &str| -> Result<(), String> {
        let x = std::fs::read(tmp.path().join(a).join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(tmp.path().join(b).join(file)).map_err(|e| e.to_string())?;
        ensure(x == y, format!("{a}/{file} and {b}/{file} differ"))
    };
    for f in ["id_test.jsonl", "ood_test.jsonl", "manifest.json"] {
        same("synth_a", "synth_b", f)?;
    }
    for f in ["results.json", "results.csv"] {
        same("eval_a", "eval_b", f)?;
    }
    Ok(format!(
        "engine AUROC {engine:.4} vs manifest {target:.4} (independent draw {reference:.4}); calibrated ECE {cal_ece:.4}; reruns byte-identical"
    ))
}

fn main() {
    let start = Instant::now();
    let criteria: [Criterion; 8] = [
        ("metric identities", criterion_1),
        ("fast vs brute-force AUROC and tau-b", criterion_2),
        ("calibration soundness", criterion_3),
        ("prediction-set contract", criterion_4),
        ("ASO properties", criterion_5),
        ("density fit and OOD separation", criterion_6),
        ("sampler fidelity", criterion_7),
        ("end to end synth -> evaluate", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of 8 passed in {:.1}s",
        8 - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
