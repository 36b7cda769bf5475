//! Pipeline configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kgsr_core::metrics::DEFAULT_K;
use kgsr_core::train::TrainConfig;
use kgsr_core::transe::{Norm, TranseConfig};

use crate::chat::ChatClientConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub triples: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub reviews: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    /// Where stage outputs go; see [`crate::pipeline::Workspace`].
    pub work_dir: PathBuf,
    /// Trained model; defaults to `model.ckpt` in the work directory.
    pub checkpoint: Option<PathBuf>,
    /// Report / recommendation output; defaults inside the work directory.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Shared by the split, TransE, initialization and the shuffles.
    pub seed: u64,
    /// Fraction of each user's interactions kept for training.
    pub split: f64,
    pub k: usize,
    pub threads: usize,
    pub train: TrainConfig,
    pub transe: TranseConfig,
    pub llm: ChatClientConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let transe = TranseConfig {
            dim: train.dim,
            seed: train.seed,
            ..TranseConfig::default()
        };
        Self {
            paths: Paths {
                work_dir: PathBuf::from("kgsr-work"),
                ..Paths::default()
            },
            seed: train.seed,
            split: 0.8,
            k: DEFAULT_K,
            threads: 1,
            train,
            transe,
            llm: ChatClientConfig::default(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("triples", "input triples file"),
    ("interactions", "input user-item interactions file"),
    ("reviews", "input reviews file (JSON lines)"),
    ("lexicon", "offline extraction lexicon"),
    ("targets", "extraction targets file"),
    ("work_dir", "directory for stage outputs"),
    ("checkpoint", "trained model file (default: <work_dir>/model.ckpt)"),
    ("output", "report or recommendation output file"),
    ("seed", "seed for the split, initialization and sampling"),
    ("split", "fraction of each user's interactions used for training"),
    ("k", "ranking cutoff K"),
    ("threads", "worker threads for training and evaluation"),
    ("batch_size", "users per optimizer step"),
    ("epochs", "training epochs"),
    ("dim", "embedding dimension d"),
    ("top_n", "nodes kept per diffusion step (N)"),
    ("steps", "diffusion steps"),
    ("learning_rate", "Adam learning rate"),
    ("contrastive", "add sampled negative terms to the loss"),
    ("negatives", "negatives per user when contrastive"),
    ("attention_hidden", "attention hidden width (default: d)"),
    ("encoder_hidden", "encoder hidden width (default: d)"),
    ("slope", "LeakyReLU negative slope"),
    ("transe_epochs", "TransE epochs"),
    ("transe_margin", "TransE margin"),
    ("transe_learning_rate", "TransE SGD learning rate"),
    ("transe_negatives", "TransE corruptions per triple"),
    ("transe_norm", "TransE distance: l1 or l2"),
    ("llm_endpoint", "chat-completions URL"),
    ("llm_model", "chat model name"),
    ("llm_api_key_env", "environment variable holding the API key"),
    ("llm_timeout_secs", "per-request timeout"),
    ("llm_retries", "retries on transport errors, 429 and 5xx"),
];

fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("invalid value `{value}` for {key}: {e}"))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn opt_num(key: &str, value: &str) -> std::result::Result<Option<usize>, String> {
    if value.is_empty() || value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "triples" => self.paths.triples = path(value),
            "interactions" => self.paths.interactions = path(value),
            "reviews" => self.paths.reviews = path(value),
            "lexicon" => self.paths.lexicon = path(value),
            "targets" => self.paths.targets = path(value),
            "work_dir" => self.paths.work_dir = path(value).ok_or("work_dir cannot be empty")?,
            "checkpoint" => self.paths.checkpoint = path(value),
            "output" => self.paths.output = path(value),
            "seed" => {
                self.seed = num(key, value)?;
                self.train.seed = self.seed;
                self.transe.seed = self.seed;
            }
            "split" => self.split = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "threads" => self.threads = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "dim" => {
                self.train.dim = num(key, value)?;
                self.transe.dim = self.train.dim;
            }
            "top_n" => self.train.top_n = num(key, value)?,
            "steps" => self.train.steps = num(key, value)?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "contrastive" => self.train.contrastive = num(key, value)?,
            "negatives" => self.train.negatives = num(key, value)?,
            "attention_hidden" => self.train.attention_hidden = opt_num(key, value)?,
            "encoder_hidden" => self.train.encoder_hidden = opt_num(key, value)?,
            "slope" => self.train.slope = num(key, value)?,
            "transe_epochs" => self.transe.epochs = num(key, value)?,
            "transe_margin" => self.transe.margin = num(key, value)?,
            "transe_learning_rate" => self.transe.learning_rate = num(key, value)?,
            "transe_negatives" => self.transe.negatives = num(key, value)?,
            "transe_norm" => {
                self.transe.norm = match value.to_ascii_lowercase().as_str() {
                    "l1" => Norm::L1,
                    "l2" => Norm::L2,
                    _ => return Err(format!("invalid value `{value}` for transe_norm: expected l1 or l2")),
                }
            }
            "llm_endpoint" => self.llm.endpoint = value.into(),
            "llm_model" => self.llm.model = value.into(),
            "llm_api_key_env" => self.llm.api_key_env = value.into(),
            "llm_timeout_secs" => self.llm.timeout_secs = num(key, value)?,
            "llm_retries" => self.llm.retries = num(key, value)?,
            _ => return Err(format!("unknown configuration key `{key}`")),
        }
        Ok(())
    }

    /// Current value of `key` in the form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let hidden = |h: Option<usize>| h.map(|h| h.to_string()).unwrap_or_else(|| "auto".into());
        Some(match key {
            "triples" => show_path(&self.paths.triples),
            "interactions" => show_path(&self.paths.interactions),
            "reviews" => show_path(&self.paths.reviews),
            "lexicon" => show_path(&self.paths.lexicon),
            "targets" => show_path(&self.paths.targets),
            "work_dir" => self.paths.work_dir.display().to_string(),
            "checkpoint" => show_path(&self.paths.checkpoint),
            "output" => show_path(&self.paths.output),
            "seed" => self.seed.to_string(),
            "split" => self.split.to_string(),
            "k" => self.k.to_string(),
            "threads" => self.threads.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "dim" => self.train.dim.to_string(),
            "top_n" => self.train.top_n.to_string(),
            "steps" => self.train.steps.to_string(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "contrastive" => self.train.contrastive.to_string(),
            "negatives" => self.train.negatives.to_string(),
            "attention_hidden" => hidden(self.train.attention_hidden),
            "encoder_hidden" => hidden(self.train.encoder_hidden),
            "slope" => self.train.slope.to_string(),
            "transe_epochs" => self.transe.epochs.to_string(),
            "transe_margin" => self.transe.margin.to_string(),
            "transe_learning_rate" => self.transe.learning_rate.to_string(),
            "transe_negatives" => self.transe.negatives.to_string(),
            "transe_norm" => match self.transe.norm {
                Norm::L1 => "l1".into(),
                Norm::L2 => "l2".into(),
            },
            "llm_endpoint" => self.llm.endpoint.clone(),
            "llm_model" => self.llm.model.clone(),
            "llm_api_key_env" => self.llm.api_key_env.clone(),
            "llm_timeout_secs" => self.llm.timeout_secs.to_string(),
            "llm_retries" => self.llm.retries.to_string(),
            _ => return None,
        })
    }

    /// Applies a config file's lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            self.set(key.trim(), value).map_err(|m| Error::parse(origin, i + 1, m))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Every key and value, one `key = value` line each.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::Usage("split must lie in (0, 1]".into()));
        }
        if self.k == 0 {
            return Err(Error::Usage("k must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Usage("threads must be at least 1".into()));
        }
        self.train.validate().map_err(|e| Error::Usage(e.to_string()))?;
        self.transe.validate().map_err(|e| Error::Usage(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!((c.train.batch_size, c.train.epochs, c.train.dim, c.train.top_n), (256, 10, 100, 100));
        assert_eq!(c.k, 10);
        assert_eq!(c.threads, 1);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = PipelineConfig::default();
        c.set("epochs", "3").unwrap();
        c.set("transe_norm", "L1").unwrap();
        c.set("encoder_hidden", "16").unwrap();
        c.set("reviews", "r.jsonl").unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&c.echo(), Path::new("echo")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = PipelineConfig::default()
            .apply_text("# c\nepochs = 2\nepoch = 3\n", Path::new("x.conf"))
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn seed_and_dim_are_shared() {
        let mut c = PipelineConfig::default();
        c.set("seed", "9").unwrap();
        c.set("dim", "8").unwrap();
        assert_eq!((c.train.seed, c.transe.seed, c.transe.dim), (9, 9, 8));
    }
}
