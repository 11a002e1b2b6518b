//! Everything around the math: configuration, dataset and checkpoint
//! formats, synthetic scene generation, and the CLI entry points.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod synth;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::concepts::ConceptVocabulary;
use crate::error::Result;
use crate::net::Detector;
use crate::prompts::PromptBank;
use crate::Tensor;

pub use config::Config;

/// RNG stream ids: one run seed fans out into independent streams so adding
/// draws in one consumer never shifts another.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_BATCH: u64 = 2;
pub const STREAM_NEGATIVES: u64 = 3;
pub const STREAM_SYNTH_VOCAB: u64 = 4;
pub const STREAM_SYNTH_IMAGES: u64 = 5;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds a fresh detector and prompt bank from the config under the init
/// stream of `seed`. The draw order (bank, then detector) is part of the
/// determinism contract; every entry point constructs models through here.
pub fn init_model(
    config: &Config,
    vocab: &ConceptVocabulary,
    seed: u64,
) -> Result<(Detector, PromptBank)> {
    let mut rng = stream_rng(seed, STREAM_INIT);
    let bank = PromptBank::init(
        config.prompt.l,
        config.prompt.d,
        config.prompt.m,
        config.prompt.k,
        &mut rng,
    )?;
    let detector = Detector::init(
        vocab.c_t + 2,
        config.net.c,
        config.net.heads,
        config.net.blocks,
        config.net.n_queries,
        vocab.c_t,
        &mut rng,
    )?;
    Ok((detector, bank))
}

/// Checkpoint parameter list: detector tensors then bank tensors, the order
/// shared by training, checkpoint IO and the optimizer.
pub fn model_parameters(detector: &Detector, bank: &PromptBank) -> Vec<(String, Tensor)> {
    let mut params = detector.named_parameters();
    params.extend(bank.named_parameters());
    params
}
