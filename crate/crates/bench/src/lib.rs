//! Fixtures shared by the benchmarks.

use convbias_core::biasspec::{BiasSpecification, BiasType};
use convbias_core::corpus::synth_planted_corpus;
use convbias_core::lm::{CausalLM, LMConfig, Tokenizer};

/// Planted-bias sentences and an untrained model of the desk size over them.
pub fn desk_model(seed: u64) -> (CausalLM, Vec<String>) {
    let spec = BiasSpecification::bundled(BiasType::Religion1).expect("bundled spec");
    let corpus = synth_planted_corpus(&spec, 0.95, 400, seed).expect("planted corpus");
    let tok = Tokenizer::build(&corpus.sentences, 2048).expect("tokenizer");
    let config = LMConfig {
        layers: 2,
        model_dim: 32,
        heads: 2,
        ffn_dim: 64,
        max_seq: 32,
        vocab_size: tok.len(),
        tied_embeddings: true,
    };
    (CausalLM::new(config, tok, seed).expect("model"), corpus.sentences)
}
