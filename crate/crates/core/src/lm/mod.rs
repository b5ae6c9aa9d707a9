//! A small decoder-only causal language model with its own tokenizer,
//! automatic differentiation, training loop and checkpoint format.

mod checkpoint;
mod generate;
mod model;
pub mod tape;
mod tokenizer;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Manifest, TensorEntry, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, MANIFEST_FILE,
    WEIGHTS_FILE,
};
pub use generate::{generate, Decoding};
pub use model::{Batch, CausalLM, Forward, LMConfig, ParamStore};
pub use tape::{ParamGrads, Tape, Var};
pub use tokenizer::{split_words, Tokenizer, BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID, UNK, UNK_ID};
pub use train::{encode_corpus, train_lm, Adam, LmObjective, Objective, TrainConfig, TrainReport};
