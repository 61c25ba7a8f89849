//! Calibration errors and prediction-set coverage on synthetic data: one
//! dataset whose gold labels are drawn from the predicted distribution, one
//! where the prediction is always right (so confidence is too low).

use uqeval::calibration::{calibration_report, prediction_set, CalibrationConfig};
use uqeval::synth::{gen_calibrated, SynthSpec};
use uqeval::Distribution;

fn main() -> uqeval::Result<()> {
    let cfg = CalibrationConfig::default();
    for calibrated in [true, false] {
        let spec = SynthSpec {
            n_id: 20_000,
            classes: 10,
            id_concentration: 6.0,
            calibrated,
            seed: 1,
            ..Default::default()
        };
        let report = calibration_report(&gen_calibrated(&spec)?, &cfg)?;
        println!(
            "calibrated={calibrated:<5}  ECE {:.4}  SCE {:.4}  ACE {:.4}  coverage {:.3}  width {:.2}",
            report.ece,
            report.sce,
            report.ace.unwrap_or(f64::NAN),
            report.coverage_pct,
            report.mean_width
        );
        for b in report.ece_bins.iter().filter(|b| b.count > 0) {
            println!(
                "    ({:.1}, {:.1}]  n={:<6} conf {:.3}  acc {:.3}",
                b.lo, b.hi, b.count, b.mean_confidence, b.accuracy
            );
        }
    }

    let d = Distribution::new(vec![0.5, 0.3, 0.17, 0.03])?;
    let set = prediction_set(&d, cfg.alpha);
    println!(
        "\n95% prediction set of {:?}: classes {:?}, mass {:.2}",
        d.probs(),
        set.classes,
        set.mass
    );
    Ok(())
}
