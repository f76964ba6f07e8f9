//! Contextualized word topic model.
//!
//! Topic vectors are learned per word occurrence from contextual word
//! embeddings and pooled into document-topic vectors. Training follows the
//! Wasserstein autoencoder recipe: document embeddings are reconstructed from
//! document-topic vectors while an MMD penalty under the information
//! diffusion kernel matches document-topic and topic-word vectors to a
//! sparse Dirichlet prior.

pub mod autograd;
pub mod backbone;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod topics;

pub use error::{CwtmError, Result};
