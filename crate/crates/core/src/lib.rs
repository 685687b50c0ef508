//! Pitch contour modeling toolkit: penalized-spline GAMs with AR(1) errors
//! for F0 contours of disyllabic word tokens, model comparison and
//! cross-validation, fixed-length pitch vectors, and linear / residual-network
//! mappings between pitch contours and high-dimensional meaning vectors.

pub mod corpus;
pub mod design;
pub mod dlm;
pub mod frame;
pub mod gam;
pub mod mlp;
pub mod spline;
pub mod suite;
pub mod synth;
pub mod vectorize;

pub use corpus::{F0Sample, FilterPolicy, FilterReport, TokenRecord, TokenTable};
pub use design::{ModelSpec, Term};
pub use frame::{Frame, ObservationTable};
pub use gam::{evidence_ratio, FitOptions, FittedGam, PredictOptions, PredictionResult};
pub use suite::{ComparisonReport, CvResult, ModelLabel};
pub use synth::{GroundTruth, SynthConfig};
pub use vectorize::{Embedding, EmbeddingTable, PitchVector};
