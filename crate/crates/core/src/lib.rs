//! Evaluation of uncertainty estimates from classifier prediction dumps.
//!
//! The crate reads JSON Lines dumps of per-instance logits or probabilities
//! (optionally several samples per prediction and per-token features) and
//! measures:
//!
//! * uncertainty scores per token and sequence ([`metrics`]), including a
//!   Gaussian feature-density score ([`density`]),
//! * calibration: ECE, SCE, ACE and prediction-set coverage ([`calibration`]),
//! * OOD detection and loss correlation: AUROC, AUPR, Kendall's tau-b
//!   ([`discrimination`]),
//! * significance between models via Almost Stochastic Order ([`aso`]).
//!
//! [`sampler`] builds stratified training subsets, [`synth`] generates dumps
//! with known ground truth, and [`cli`] ties it together for the `uqeval`
//! binary.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```text
//! cargo run --example uncertainty_metrics
//! cargo run --example calibration
//! cargo run --example ood_detection
//! cargo run --example loss_correlation
//! cargo run --example aso_compare
//! cargo run --example density_scoring
//! cargo run --example subsample_corpus
//! cargo run --example synth_end_to_end
//! ```

pub mod aso;
pub mod calibration;
pub mod cli;
pub mod data;
pub mod density;
pub mod discrimination;
pub mod error;
pub mod metrics;
pub mod sampler;
pub mod synth;

pub use data::{Dataset, Distribution, PredictionRecord, SampleSet, Split, Task};
pub use error::{Error, Result};
pub use metrics::{Aggregation, Metric, Polarity};
