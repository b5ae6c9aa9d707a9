use std::path::{Path, PathBuf};

use convbias_core::biasspec::{load_specification, BiasSpecification, BiasType};
use convbias_core::corpus::SplitFractions;
use convbias_core::debias::{DebiasConfig, Method};
use convbias_core::eval::{DownstreamConfig, Task};
use convbias_core::lm::{LMConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "CONVBIAS_SEED";

/// Where the biased phrases and the pretraining text come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorpusSource {
    /// Planted-association corpus generated from the specification.
    Synthetic { skew: f64, sentences: usize },
    /// Newline-delimited JSON comments on disk.
    Fixture {
        path: PathBuf,
        until: i64,
        size_limit: usize,
    },
    /// Pushshift-compatible search API.
    Endpoint { url: String, until: i64, size_limit: usize },
    /// A labelled annotation CSV; its comments double as pretraining text.
    Annotated { path: PathBuf },
}

/// Model shape; the vocabulary size is fixed once the tokenizer is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq: usize,
    pub max_vocab: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: 2,
            model_dim: 32,
            heads: 2,
            ffn_dim: 64,
            max_seq: 32,
            max_vocab: 2048,
        }
    }
}

impl ModelSection {
    pub fn lm_config(&self, vocab_size: usize) -> LMConfig {
        LMConfig {
            layers: self.layers,
            model_dim: self.model_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            max_seq: self.max_seq,
            vocab_size,
            tied_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasSection {
    /// Methods run by `reproduce`.
    pub methods: Vec<Method>,
    pub lambda_lm: f64,
    pub lambda_d: f64,
    pub hd_threshold: f64,
    pub train: TrainConfig,
}

impl Default for DebiasSection {
    fn default() -> Self {
        let d = DebiasConfig::default();
        DebiasSection {
            methods: Method::ALL.to_vec(),
            lambda_lm: d.lambda_lm,
            lambda_d: d.lambda_d,
            hd_threshold: d.hd_threshold,
            train: TrainConfig::default(),
        }
    }
}

impl DebiasSection {
    pub fn config(&self, method: Method) -> DebiasConfig {
        DebiasConfig {
            method,
            lambda_lm: self.lambda_lm,
            lambda_d: self.lambda_d,
            hd_threshold: self.hd_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub tasks: Vec<Task>,
    pub alpha: f64,
    /// Reference utterances for perplexity, one per line. Synthetic neutral
    /// utterances are used when absent.
    pub references: Option<PathBuf>,
    pub n_references: usize,
    pub dst_dialogs: usize,
    pub crg_pairs: usize,
    pub crg_references: usize,
    pub downstream: DownstreamConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            tasks: vec![Task::Lmp, Task::Dst, Task::Crg],
            alpha: 0.05,
            references: None,
            n_references: 300,
            dst_dialogs: 2000,
            crg_pairs: 1000,
            crg_references: 3,
            downstream: DownstreamConfig {
                dst_epochs: 3,
                crg_epochs: 20,
                ..DownstreamConfig::default()
            },
        }
    }
}

/// One experiment, read from a single JSON document. Nested seeds are
/// derived from `seed` by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub bias_type: BiasType,
    /// Specification file; the bundled one for `bias_type` when absent.
    pub spec_path: Option<PathBuf>,
    pub corpus: CorpusSource,
    pub split: SplitFractions,
    pub model: ModelSection,
    /// Pretraining phases, run in order.
    pub pretrain: Vec<TrainConfig>,
    pub debias: DebiasSection,
    pub eval: EvalSection,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            bias_type: BiasType::Religion1,
            spec_path: None,
            corpus: CorpusSource::Synthetic {
                skew: 0.95,
                sentences: 2000,
            },
            split: SplitFractions::default(),
            model: ModelSection::default(),
            pretrain: vec![
                TrainConfig {
                    lr: 3e-3,
                    epochs: 20,
                    batch_size: 32,
                    ..TrainConfig::default()
                },
                TrainConfig {
                    lr: 1e-3,
                    epochs: 100,
                    batch_size: 500,
                    linear_decay: true,
                    ..TrainConfig::default()
                },
            ],
            debias: DebiasSection::default(),
            eval: EvalSection::default(),
            out_dir: PathBuf::from("convbias-out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file; `CONVBIAS_SEED` overrides its seed.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))?;
        Ok(config.with_env_seed()?.resolve())
    }

    pub fn with_env_seed(mut self) -> CliResult<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::validation(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(self)
    }

    /// Sets `seed` and rederives every nested seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolve()
    }

    /// Pretraining phase `i` uses `seed + i`; debiasing and the downstream
    /// probes use `seed`.
    pub fn resolve(mut self) -> Self {
        for (i, phase) in self.pretrain.iter_mut().enumerate() {
            phase.seed = self.seed.wrapping_add(i as u64);
        }
        self.debias.train.seed = self.seed;
        self.eval.downstream.seed = self.seed;
        self
    }

    pub fn validate(&self) -> CliResult<()> {
        let check_path = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::validation(format!("{what} {} does not exist", p.display())))
            }
        };
        if let Some(p) = &self.spec_path {
            check_path("spec_path", p)?;
        } else if self.bias_type == BiasType::Custom {
            return Err(CliError::validation("bias_type custom needs spec_path"));
        }
        match &self.corpus {
            CorpusSource::Synthetic { skew, sentences } => {
                if !(0.5..=1.0).contains(skew) {
                    return Err(CliError::validation(format!("corpus.skew {skew} outside [0.5, 1]")));
                }
                if *sentences < 10 {
                    return Err(CliError::validation("corpus.sentences must be at least 10"));
                }
            }
            CorpusSource::Fixture { path, .. } | CorpusSource::Annotated { path } => check_path("corpus.path", path)?,
            CorpusSource::Endpoint { url, .. } => {
                if url.is_empty() {
                    return Err(CliError::validation("corpus.url is empty"));
                }
            }
        }
        if let Some(p) = &self.eval.references {
            check_path("eval.references", p)?;
        }
        SplitFractions::new(self.split.train, self.split.dev, self.split.test)?;
        self.model.lm_config(self.model.max_vocab).validate()?;
        if self.pretrain.is_empty() {
            return Err(CliError::validation("pretrain needs at least one phase"));
        }
        for phase in &self.pretrain {
            phase.validate()?;
        }
        self.debias.train.validate()?;
        for m in &self.debias.methods {
            self.debias.config(*m).validate()?;
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(CliError::validation("eval.alpha must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn specification(&self) -> CliResult<BiasSpecification> {
        Ok(match &self.spec_path {
            Some(p) => load_specification(p)?,
            None => BiasSpecification::bundled(self.bias_type)?,
        })
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory so
    /// that identical experiments written to different places hash alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
