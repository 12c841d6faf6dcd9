//! Attention concatenation cost volumes for stereo matching.
//!
//! Dense volume containers and the operations that build attention
//! concatenation volumes (ACV) and their fast variant (Fast-ACV), a
//! deterministic non-learned stereo matcher composed from them, evaluation
//! metrics, and disparity/image codecs.

pub mod accounting;
pub mod acv;
pub mod error;
pub mod fast_acv;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod reference;
pub mod rng;
pub mod volume;

pub use accounting::VolumeAccounting;
pub use acv::{AcvConfig, PatchWeights, VolumeRegularizer};
pub use error::{Error, FormatError, Result};
pub use fast_acv::{HypothesisSet, VapConfig};
pub use metrics::EvalMask;
pub use pipeline::{run_acv_pipeline, run_fast_acv_pipeline, PipelineConfig, PipelineMode};
pub use volume::{CostVolume, DisparityMap, FeatureMap, ProbabilityVolume};
