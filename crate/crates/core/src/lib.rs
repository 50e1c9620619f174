//! Out-of-distribution detection from per-point PRDC statistics.
//!
//! Embeddings are summarized, point by point, by how they sit on the k-NN
//! manifold of a reference set ([`prdc`]). Density models fitted on those
//! summaries for in-distribution data ([`density`]) turn them into anomaly
//! scores, which [`evaluation`] rates with AUROC and FPR@95. [`pipeline`]
//! ties the steps together; [`baselines`] and [`theory`] hold the comparison
//! battery and the Monte Carlo checks of the expected per-point values.

pub mod baselines;
pub mod cli;
pub mod density;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod matrix;
pub mod neighborhood;
pub mod par;
pub mod pipeline;
pub mod prdc;
pub mod theory;

pub use embedding::{EmbeddingMatrix, SeededRng, SplitTriple};
pub use error::{ForteError, Result};
pub use matrix::FeatureMatrix;
pub use neighborhood::NeighborhoodProfile;
pub use prdc::{DensityNormalization, PrdcConfig, PrdcFeatureMatrix, RadiusSource};
