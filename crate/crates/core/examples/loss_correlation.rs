//! Kendall's tau-b between uncertainty and loss, per token and per sequence.
//! A useful uncertainty score ranks high-loss predictions as uncertain.

use uqeval::discrimination::{kendall_tau, loss_correlation, CorrelationLevel};
use uqeval::metrics::compute_series;
use uqeval::synth::{gen_calibrated, SynthSpec};
use uqeval::{Aggregation, Metric};

fn main() -> uqeval::Result<()> {
    println!(
        "tau-b with ties: {:.4}",
        kendall_tau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0])?
    );

    let spec = SynthSpec {
        n_id: 2000,
        steps: 12,
        classes: 5,
        id_concentration: 4.0,
        seed: 3,
        ..Default::default()
    };
    let ds = gen_calibrated(&spec)?;
    println!(
        "\n{:<20} {:>9} {:>12} {:>9}",
        "metric", "token", "per-record", "sequence"
    );
    for metric in [
        Metric::MaxProb,
        Metric::SoftmaxGap,
        Metric::PredictiveEntropy,
        Metric::DempsterShafer,
    ] {
        let s = compute_series(&ds, metric, Aggregation::Mean, None)?;
        println!(
            "{:<20} {:>9.4} {:>12.4} {:>9.4}",
            metric.name(),
            loss_correlation(&ds, &s, CorrelationLevel::Token)?,
            loss_correlation(&ds, &s, CorrelationLevel::TokenPerSequence)?,
            loss_correlation(&ds, &s, CorrelationLevel::Sequence)?
        );
    }
    Ok(())
}
