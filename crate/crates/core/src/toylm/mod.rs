//! The toy policy model: vocabulary, c-gram parameters, exact log-likelihood
//! and gradients, and decoding.

pub mod decode;
pub mod model;
pub mod rng;
pub mod vocab;

pub use decode::{
    filter_logits, filter_logits_excluding, next_token_distribution, sample_k_responses,
    sample_response, GenerationConfig,
};
pub use model::ToyLMParams;
pub use rng::RngStream;
pub use vocab::{Prompt, Response, TokenId, Vocab, BOS, EOS, FIRST_CONTENT, PAD, SEP};
