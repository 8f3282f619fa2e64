//! Open-set recognition of multichannel EMG motions with prototype extractors
//! and the simplified log-Euclidean distance (SLED) between lifted SPD matrices.
//!
//! Module map:
//! - [`signal`]: windowing, the 8x10 feature map and its 80x80 nearest upsampling
//! - [`spdmetric`]: vector lifting, matrix logarithm, LED and the closed-form SLED
//! - [`extractors`]: convolutional prototype network and LDA extractors
//! - [`openset`]: nearest-prototype classification and threshold rejection
//! - [`eval`]: ROC/AUC, confusion matrices, repetition-wise k-fold protocol
//! - [`synthdata`]: deterministic synthetic recordings and the dataset directory format
//! - [`metricbench`]: wall-clock comparison of SLED against eigendecomposition LED

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod extractors;
pub mod metricbench;
pub mod openset;
pub mod rng;
pub mod signal;
pub mod spdmetric;
pub mod synthdata;

mod gemm;

pub use error::{Error, Result};
pub use eval::{EvalReport, ExperimentConfig, Method, RocCurve};
pub use extractors::{CpnModel, ExtractorModel, LdaModel, TrainConfig};
pub use openset::{DetectionOutcome, Detector};
pub use signal::{FeatureMap, RawRecording, UpsampledMap, WindowConfig};
pub use spdmetric::{MetricKind, SpdMatrix};
pub use synthdata::{Dataset, SynthConfig};
