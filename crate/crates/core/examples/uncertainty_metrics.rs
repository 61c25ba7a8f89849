//! Token-level uncertainty scores from logits, including the ensemble
//! decomposition of total entropy into aleatoric and epistemic parts.

use uqeval::data::softmax;
use uqeval::metrics::{
    class_variance, compute_series, dempster_shafer, max_prob, mutual_information,
    predictive_entropy, softmax_gap,
};
use uqeval::{Aggregation, Dataset, Metric, PredictionRecord, SampleSet, Split};

fn main() -> uqeval::Result<()> {
    let logits = [2.0, 0.5, -1.0];
    let d = softmax(&logits)?;
    println!("probs            {:?}", d.probs());
    println!("max_prob         {:.4}", max_prob(&d));
    println!("softmax_gap      {:.4}", softmax_gap(&d));
    println!("entropy          {:.4}", predictive_entropy(&d));
    println!("dempster_shafer  {:.4}", dempster_shafer(&logits)?);

    // three ensemble members that disagree about the winner
    let members = SampleSet::new(vec![
        softmax(&[3.0, 0.0, 0.0])?,
        softmax(&[0.0, 3.0, 0.0])?,
        softmax(&[1.5, 1.5, 0.0])?,
    ])?;
    let mi = mutual_information(&members)?;
    println!(
        "\nensemble: total {:.4} = aleatoric {:.4} + epistemic {:.4}; class variance {:.4}",
        mi.total,
        mi.aleatoric,
        mi.epistemic,
        class_variance(&members)
    );

    // a two-token sequence, second token masked with the ignore index
    let rec = PredictionRecord::from_logits(
        "s0",
        Split::IdTest,
        vec![
            vec![vec![2.0, 0.0], vec![9.0, -9.0]],
            vec![vec![0.0, 2.0], vec![9.0, -9.0]],
        ],
        vec![0, -100],
    )?;
    let ds = Dataset::new(vec![rec])?;
    for metric in [
        Metric::MaxProb,
        Metric::PredictiveEntropy,
        Metric::MutualInformation,
    ] {
        let s = compute_series(&ds, metric, Aggregation::Max, None)?;
        println!(
            "{:<20} token {:?} sequence {:.4} ({:?})",
            metric.name(),
            s.token_scores[0],
            s.sequence_scores[0],
            metric.polarity()
        );
    }
    Ok(())
}
