//! Stratified sub-sampling of a labelled corpus and a check that the sample
//! keeps the source's length, label and vocabulary distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uqeval::sampler::{compare_distributions, subsample, CorpusRecord, SamplePlan, SampleTask};

fn corpus(tagged: bool) -> Vec<CorpusRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..10_000)
        .map(|_| {
            let label = [0, 0, 0, 1, 1, 2][rng.random_range(0..6)];
            let len = rng.random_range(2..30) + 4 * label;
            let tokens: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.random_range(0..500)))
                .collect();
            if tagged {
                let tags = (0..len)
                    .map(|_| [0, 0, 0, 1, 2][rng.random_range(0..5)])
                    .collect();
                CorpusRecord::tagged(tokens, tags)
            } else {
                CorpusRecord::sequence(tokens, label)
            }
        })
        .collect()
}

fn main() -> uqeval::Result<()> {
    for (task, tagged) in [
        (SampleTask::SequenceCls, false),
        (SampleTask::TokenCls, true),
    ] {
        let source = corpus(tagged);
        for target in [100, 1000, 5000] {
            let plan = SamplePlan {
                target_size: target,
                seed: 42,
                task,
            };
            let sample = subsample(&source, &plan)?;
            let c = compare_distributions(&source, &sample, 50)?;
            println!(
                "{task:?} n={target:<5} JS length {:.5}  label {:.5}  top-50 types {:.5}",
                c.length_js, c.label_js, c.top_type_js
            );
        }
    }
    Ok(())
}
