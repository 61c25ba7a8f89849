//! OOD detection: every uncertainty score as a detector of out-of-domain
//! records, measured by AUROC and AUPR with OOD as the positive class.

use uqeval::discrimination::{aupr, auroc};
use uqeval::metrics::compute_series;
use uqeval::synth::{gen_id_ood, SynthSpec};
use uqeval::{Aggregation, Metric, Split};

fn main() -> uqeval::Result<()> {
    let spec = SynthSpec {
        n_id: 3000,
        n_ood: 3000,
        classes: 6,
        steps: 5,
        samples: 4,
        id_concentration: 10.0,
        ood_concentration: 2.5,
        intra_sample_noise: 0.4,
        seed: 7,
        ..Default::default()
    };
    let ds = gen_id_ood(&spec)?;
    let id = ds.split(Split::IdTest).expect("generated");
    let ood = ds.split(Split::OodTest).expect("generated");

    println!("{:<20} {:>7} {:>7}", "metric", "AUROC", "AUPR");
    for metric in Metric::ALL.into_iter().filter(|m| *m != Metric::LogDensity) {
        for agg in [Aggregation::Mean, Aggregation::Max] {
            let a = compute_series(&id, metric, agg, None)?.canonical_sequence_scores();
            let b = compute_series(&ood, metric, agg, None)?.canonical_sequence_scores();
            println!(
                "{:<20} {:>7.4} {:>7.4}  ({agg:?})",
                metric.name(),
                auroc(&a, &b)?,
                aupr(&a, &b)?
            );
        }
    }
    Ok(())
}
