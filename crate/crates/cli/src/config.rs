//! Run configuration: flat key=value files merged with command-line
//! overrides. The fully resolved configuration is echoed into the output
//! directory and can be fed back through --config to reproduce a run.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use answerseq_core::checkpoint::{config_to_kv, decode_layers, kv_to_text};
use answerseq_core::embedding::EmbeddingSource;
use answerseq_core::model::{Mode, ModelConfig};
use answerseq_core::tower::default_layer_specs;
use answerseq_core::train::TrainConfig;

/// Everything a command needs, resolved from defaults, then the config file,
/// then command-line flags (highest precedence).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embedding: EmbeddingSource,
    pub data: Option<String>,
    pub dev: Option<String>,
    pub test: Option<String>,
    pub checkpoint: Option<String>,
    pub out: String,
}

/// Flag-level overrides shared across subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Flat key=value configuration file (same keys as the resolved echo).
    #[arg(long)]
    pub config: Option<String>,
    /// Training/input data path (.xml task format, otherwise canonical).
    #[arg(long)]
    pub data: Option<String>,
    /// Development split path.
    #[arg(long)]
    pub dev: Option<String>,
    /// Test split path.
    #[arg(long)]
    pub test: Option<String>,
    /// Word-embedding text file; omitted = seeded hash-derived vectors.
    #[arg(long)]
    pub embeddings: Option<String>,
    /// Checkpoint path to load.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// RNG seed (initialization, shuffling, dropout, hashed embeddings).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Head: "rcnn" (LSTM over the answer sequence) or "cnn" (per-answer).
    #[arg(long)]
    pub mode: Option<String>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Learning-rate scale on the ADADELTA delta.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Dropout rate in [0,1).
    #[arg(long)]
    pub dropout: Option<f64>,
}

fn parse_config_file(path: &str) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {path}"))?;
    let mut kv = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("{path}:{}: expected key=value, got '{line}'", lineno + 1))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

fn get_num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match kv.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| anyhow::anyhow!("bad value '{v}' for {key}")),
    }
}

impl RunConfig {
    /// Defaults, overlaid with the config file, overlaid with flags.
    pub fn resolve(flags: &Overrides) -> Result<RunConfig> {
        let kv = match &flags.config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };

        // Defaults, then each key that the file provides.
        let mut model = ModelConfig::default();
        let mut train = TrainConfig::default();
        let mut embedding: Option<EmbeddingSource> = None;

        if let Some(v) = get_num(&kv, "model.embed_dim")? {
            model.embed_dim = v;
        }
        if let Some(v) = get_num(&kv, "model.window")? {
            model.window = v;
        }
        if let Some(v) = get_num(&kv, "model.max_len")? {
            model.max_len = v;
        }
        if let Some(v) = get_num(&kv, "model.sentence_dim")? {
            model.sentence_dim = v;
        }
        if let Some(v) = get_num(&kv, "model.joint_dim")? {
            model.joint_dim = v;
        }
        if let Some(v) = get_num(&kv, "model.hidden")? {
            model.hidden = v;
        }
        if let Some(maps) = get_num::<usize>(&kv, "model.feature_maps")? {
            model.layer_specs = default_layer_specs(maps);
        }
        // An explicit layer encoding (as written by the echo) wins over
        // model.feature_maps.
        if let Some(layers) = kv.get("model.layers") {
            model.layer_specs = decode_layers(layers).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        if let Some(m) = kv.get("model.mode") {
            model.mode = Mode::parse(m).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        if let Some(v) = get_num(&kv, "train.rho")? {
            train.rho = v;
        }
        if let Some(v) = get_num(&kv, "train.epsilon")? {
            train.epsilon = v;
        }
        if let Some(v) = get_num(&kv, "train.dropout")? {
            train.dropout = v;
        }
        if let Some(v) = get_num(&kv, "train.patience")? {
            train.patience = v;
        }
        if let Some(v) = get_num(&kv, "train.max_epochs")? {
            train.max_epochs = v;
        }
        if let Some(v) = get_num(&kv, "train.seed")? {
            train.seed = v;
        }
        if let Some(v) = get_num(&kv, "train.learning_rate")? {
            train.learning_rate = v;
        }
        if let Some(w) = kv.get("train.class_weights") {
            let ws: Vec<f64> = w
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| anyhow::anyhow!("bad train.class_weights '{w}'"))?;
            if ws.len() != 3 {
                bail!("train.class_weights needs exactly 3 values");
            }
            train.class_weights = [ws[0], ws[1], ws[2]];
        }
        if let Some(c) = kv.get("train.grad_clip") {
            train.grad_clip = if c == "none" {
                None
            } else {
                Some(c.parse::<f64>().map_err(|_| anyhow::anyhow!("bad train.grad_clip"))?)
            };
        }

        // Run-section paths.
        let mut data = kv.get("run.data").cloned();
        let mut dev = kv.get("run.dev").cloned();
        let mut test = kv.get("run.test").cloned();
        let mut checkpoint = kv.get("run.checkpoint").cloned();
        let mut out = kv.get("run.out").cloned().unwrap_or_else(|| "runs/out".into());
        let mut embeddings_path = kv.get("run.embeddings").cloned();

        // Flags override everything.
        if let Some(v) = &flags.data {
            data = Some(v.clone());
        }
        if let Some(v) = &flags.dev {
            dev = Some(v.clone());
        }
        if let Some(v) = &flags.test {
            test = Some(v.clone());
        }
        if let Some(v) = &flags.checkpoint {
            checkpoint = Some(v.clone());
        }
        if let Some(v) = &flags.out {
            out = v.clone();
        }
        if let Some(v) = &flags.embeddings {
            embeddings_path = Some(v.clone());
        }
        if let Some(v) = flags.seed {
            train.seed = v;
        }
        if let Some(m) = &flags.mode {
            model.mode = Mode::parse(m).map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        if let Some(v) = flags.epochs {
            train.max_epochs = v;
        }
        if let Some(v) = flags.patience {
            train.patience = v;
        }
        if let Some(v) = flags.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = flags.dropout {
            train.dropout = v;
        }

        // Embedding source precedence: --embeddings / run.embeddings file,
        // then an embedding.source entry (as echoed), then hash-derived
        // vectors seeded by the run seed.
        if embedding.is_none() {
            if let Some(src) = kv.get("embedding.source") {
                embedding = Some(if src == "hashed" {
                    EmbeddingSource::Hashed {
                        seed: get_num::<u64>(&kv, "embedding.seed")?.unwrap_or(train.seed),
                    }
                } else if let Some(p) = src.strip_prefix("file:") {
                    EmbeddingSource::File(p.to_string())
                } else {
                    bail!("unknown embedding.source '{src}'");
                });
            }
        }
        let embedding = match embeddings_path {
            Some(p) => EmbeddingSource::File(p),
            None => embedding.unwrap_or(EmbeddingSource::Hashed { seed: train.seed }),
        };

        train.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(RunConfig {
            model,
            train,
            embedding,
            data,
            dev,
            test,
            checkpoint,
            out,
        })
    }

    /// The full resolved key=value echo (deterministic ordering).
    pub fn echo(&self) -> String {
        let mut extra: Vec<(String, String)> = Vec::new();
        if let Some(v) = &self.data {
            extra.push(("run.data".into(), v.clone()));
        }
        if let Some(v) = &self.dev {
            extra.push(("run.dev".into(), v.clone()));
        }
        if let Some(v) = &self.test {
            extra.push(("run.test".into(), v.clone()));
        }
        if let Some(v) = &self.checkpoint {
            extra.push(("run.checkpoint".into(), v.clone()));
        }
        extra.push(("run.out".into(), self.out.clone()));
        let kv = config_to_kv(&self.model, &self.train, &self.embedding, &extra);
        kv_to_text(&kv)
    }

    pub fn require_data(&self) -> Result<&str> {
        self.data
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("no data path given (use --data or run.data)"))
    }

    pub fn require_checkpoint(&self) -> Result<&str> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("no checkpoint given (use --checkpoint)"))
    }

    pub fn out_dir(&self) -> &Path {
        Path::new(&self.out)
    }
}
