//! Feature-density uncertainty: fit class-conditional Gaussians on training
//! features (optionally after PCA) and score test features by log density.

use uqeval::density::DensityModel;
use uqeval::discrimination::auroc;
use uqeval::metrics::compute_series;
use uqeval::synth::{gen_id_ood, SynthSpec};
use uqeval::{Aggregation, Metric, Split};

fn main() -> uqeval::Result<()> {
    let spec = SynthSpec {
        n_train: 3000,
        n_id: 1000,
        n_ood: 1000,
        feature_dim: 16,
        class_separation: 3.0,
        ood_shift: 5.0,
        seed: 11,
        ..Default::default()
    };
    let ds = gen_id_ood(&spec)?;
    let train = ds.split(Split::Train).expect("generated");
    let id = ds.split(Split::IdTest).expect("generated");
    let ood = ds.split(Split::OodTest).expect("generated");

    // PCA keeps the directions of largest training variance. Here the OOD
    // shift lies mostly outside them, so projecting hides it.
    for pca in [None, Some(8), Some(2)] {
        let model = DensityModel::fit(&train, pca)?;
        let score = |part| -> uqeval::Result<Vec<f64>> {
            Ok(
                compute_series(part, Metric::LogDensity, Aggregation::Mean, Some(&model))?
                    .canonical_sequence_scores(),
            )
        };
        println!(
            "pca {:<8} dim {:>2}  jitter {:.0e}  OOD AUROC {:.4}",
            format!("{pca:?}"),
            model.gda.dim(),
            model.gda.jitter_used(),
            auroc(&score(&id)?, &score(&ood)?)?
        );
    }

    let path = std::env::temp_dir().join("uqeval-density-example.json");
    DensityModel::fit(&train, Some(8))?.save(&path)?;
    let back = DensityModel::load(&path)?;
    println!(
        "reloaded model from {} (dim {})",
        path.display(),
        back.gda.dim()
    );
    Ok(())
}
