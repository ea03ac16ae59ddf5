//! End-to-end neural symbolic integration at desk scale.
//!
//! The pipeline: enumerate primitive functions as products of elementary
//! factors, differentiate them to obtain integrands, serialize both sides in
//! four token schemes (string/subtree crossed with Polish/reverse-Polish
//! order), train LSTM and Transformer sequence-to-sequence models on the
//! pairs, verify model outputs by differentiating them back, combine the
//! trained variants into a verified-answer selector, and analyze attention
//! maps with JS divergence, entropy, and MDS embeddings.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`expr`] — expression AST, evaluation, normalization, equivalence oracle
//! - [`calculus`] — symbolic differentiation and pair verification
//! - [`notation`] — the four token encodings and vocabulary management
//! - [`datagen`] — corpus enumeration, splits, and dataset files
//! - [`autodiff`] — dense f64 tensors with reverse-mode gradients
//! - [`model`] — LSTM and Transformer encoder-decoders, greedy/beam decoding
//! - [`training`] — loss, Adam, cross-validation, checkpoints
//! - [`evaluation`] — correct-answer rate, integrated selector, benchmarks
//! - [`analysis`] — attention-map divergence, entropy, and MDS

pub mod analysis;
pub mod autodiff;
pub mod calculus;
pub mod datagen;
pub mod evaluation;
pub mod expr;
pub mod fuzz;
pub mod model;
pub mod notation;
pub mod training;
