//! Surface-EMG screening for cervical spondylosis.
//!
//! The pipeline turns multi-muscle sEMG recordings into six families of
//! per-signal features, arranges each family as an anatomically ordered
//! 6 x 7 grid, and classifies the six grids with a six-channel convolutional
//! network.
//!
//! Module map:
//!
//! - [`dataset`]: recordings, subject bundles, sample assembly, splits
//! - [`features`]: time, frequency, wavelet, autoregressive and entropy features
//! - [`spatial`]: grid layout, imputation, standardisation, label encoding
//! - [`nn`]: tensors, layers, the multi-channel model and its loss
//! - [`train`]: Adam, minibatch training with early stopping, prediction
//! - [`metrics`]: confusion counts, accuracy / sensitivity / specificity, AUC
//! - [`synth`]: synthetic cohorts for end-to-end runs
//! - [`checkpoint`] and [`pipeline`]: persistence and stage orchestration

pub mod checkpoint;
pub mod dataset;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod spatial;
pub mod synth;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
