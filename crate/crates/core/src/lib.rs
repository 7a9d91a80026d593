//! Unsupervised risk-minimization tuning for binary semantic-decoder heads.
//!
//! A shared-representation decoder (convolutional N-best encoder, recurrent
//! context encoder, `tanh` combination layer) feeds one binary softmax head per
//! slot. Heads are first trained with supervision, jointly or independently.
//! Each head's margin vector can then be re-tuned on unlabeled turns by
//! coordinate-wise finite-difference descent on a closed-form hinge risk,
//! computed from a two-component Gaussian mixture fitted to the head's margins.
//!
//! Module map:
//!
//! - [`corpus`]: turns, vocabularies, embeddings, synthetic rare-slot corpora
//! - [`encoder`]: sentence/context encoders and the combination layer
//! - [`heads`]: binary softmax heads, supervised training, gradient checks
//! - [`scoremodel`]: 1-D two-component EM and Gaussianity diagnostics
//! - [`risk`]: hinge loss, closed-form risk and its quadrature/Monte Carlo oracles
//! - [`tuner`]: the unsupervised coordinate descent
//! - [`eval`]: macro-F metrics and the independent/joint/tuned benchmark
//! - [`cli`]: the `rmtune` command-line front end

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod heads;
pub mod risk;
pub mod scoremodel;
pub mod tensor;
pub mod tuner;

mod error;

pub use error::{Error, Result};
