//! Checkpoint container: a self-describing binary file holding the format
//! version, the resolved configuration, every parameter tensor tagged by
//! path and shape, the optimizer accumulators, and the RNG state — enough to
//! resume training bit-identically. A human-readable manifest accompanies
//! each checkpoint.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::embedding::EmbeddingSource;
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::tower::ConvLayerSpec;
use crate::train::TrainConfig;

const MAGIC: &[u8; 4] = b"ASQC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub embedding: EmbeddingSource,
    pub params: ModelParams,
    pub eg2: ModelParams,
    pub edx2: ModelParams,
    pub rng_state: [u64; 4],
    pub epochs_run: u32,
    pub best_epoch: u32,
    pub best_metric: f64,
    pub clamp_events: u64,
    pub optimizer_faults: u64,
    /// Any further resolved-configuration entries carried for reproducibility.
    pub extra_config: Vec<(String, String)>,
}

/// "ch,cw,ph,pw,maps;..." encoding of the conv/pool stack.
pub fn encode_layers(specs: &[ConvLayerSpec]) -> String {
    specs
        .iter()
        .map(|s| {
            format!(
                "{},{},{},{},{}",
                s.conv.0, s.conv.1, s.pool.0, s.pool.1, s.maps
            )
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn decode_layers(s: &str) -> Result<Vec<ConvLayerSpec>> {
    let mut out = Vec::new();
    for part in s.split(';') {
        let nums: Vec<usize> = part
            .split(',')
            .map(|x| x.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad layer spec '{part}'")))?;
        if nums.len() != 5 {
            return Err(Error::Config(format!("bad layer spec '{part}'")));
        }
        out.push(ConvLayerSpec::new((nums[0], nums[1]), (nums[2], nums[3]), nums[4]));
    }
    Ok(out)
}

/// Flattens the run configuration into sorted key=value lines.
pub fn config_to_kv(
    model: &ModelConfig,
    train: &TrainConfig,
    embedding: &EmbeddingSource,
    extra: &[(String, String)],
) -> BTreeMap<String, String> {
    let mut kv = BTreeMap::new();
    kv.insert("model.embed_dim".into(), model.embed_dim.to_string());
    kv.insert("model.window".into(), model.window.to_string());
    kv.insert("model.max_len".into(), model.max_len.to_string());
    kv.insert("model.sentence_dim".into(), model.sentence_dim.to_string());
    kv.insert("model.joint_dim".into(), model.joint_dim.to_string());
    kv.insert("model.hidden".into(), model.hidden.to_string());
    kv.insert("model.mode".into(), model.mode.as_str().to_string());
    kv.insert("model.layers".into(), encode_layers(&model.layer_specs));
    kv.insert("train.learning_rate".into(), train.learning_rate.to_string());
    kv.insert("train.rho".into(), train.rho.to_string());
    kv.insert("train.epsilon".into(), train.epsilon.to_string());
    kv.insert("train.dropout".into(), train.dropout.to_string());
    kv.insert("train.patience".into(), train.patience.to_string());
    kv.insert("train.max_epochs".into(), train.max_epochs.to_string());
    kv.insert("train.seed".into(), train.seed.to_string());
    kv.insert(
        "train.class_weights".into(),
        format!(
            "{},{},{}",
            train.class_weights[0], train.class_weights[1], train.class_weights[2]
        ),
    );
    kv.insert(
        "train.grad_clip".into(),
        train
            .grad_clip
            .map(|c| c.to_string())
            .unwrap_or_else(|| "none".into()),
    );
    match embedding {
        EmbeddingSource::File(p) => {
            kv.insert("embedding.source".into(), format!("file:{p}"));
        }
        EmbeddingSource::Hashed { seed } => {
            kv.insert("embedding.source".into(), "hashed".into());
            kv.insert("embedding.seed".into(), seed.to_string());
        }
    }
    for (k, v) in extra {
        kv.insert(k.clone(), v.clone());
    }
    kv
}

pub fn kv_to_text(kv: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in kv {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut kv = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

fn req<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    kv.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("missing config key '{key}'")))
}

fn parse_num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    req(kv, key)?
        .parse::<T>()
        .map_err(|_| Error::Checkpoint(format!("bad value for '{key}'")))
}

/// Reconstructs the typed configs from key=value form. Returns the leftover
/// entries untouched.
pub fn config_from_kv(
    kv: &BTreeMap<String, String>,
) -> Result<(ModelConfig, TrainConfig, EmbeddingSource, Vec<(String, String)>)> {
    let model = ModelConfig {
        embed_dim: parse_num(kv, "model.embed_dim")?,
        window: parse_num(kv, "model.window")?,
        max_len: parse_num(kv, "model.max_len")?,
        sentence_dim: parse_num(kv, "model.sentence_dim")?,
        joint_dim: parse_num(kv, "model.joint_dim")?,
        hidden: parse_num(kv, "model.hidden")?,
        mode: Mode::parse(req(kv, "model.mode")?)?,
        layer_specs: decode_layers(req(kv, "model.layers")?)?,
    };
    let weights_raw = req(kv, "train.class_weights")?;
    let ws: Vec<f64> = weights_raw
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Checkpoint("bad train.class_weights".into()))?;
    if ws.len() != 3 {
        return Err(Error::Checkpoint("train.class_weights needs 3 values".into()));
    }
    let clip_raw = req(kv, "train.grad_clip")?;
    let grad_clip = if clip_raw == "none" {
        None
    } else {
        Some(clip_raw.parse::<f64>().map_err(|_| {
            Error::Checkpoint("bad train.grad_clip".into())
        })?)
    };
    let train = TrainConfig {
        learning_rate: parse_num(kv, "train.learning_rate")?,
        rho: parse_num(kv, "train.rho")?,
        epsilon: parse_num(kv, "train.epsilon")?,
        dropout: parse_num(kv, "train.dropout")?,
        patience: parse_num(kv, "train.patience")?,
        max_epochs: parse_num(kv, "train.max_epochs")?,
        seed: parse_num(kv, "train.seed")?,
        class_weights: [ws[0], ws[1], ws[2]],
        grad_clip,
    };
    let embedding = match req(kv, "embedding.source")? {
        "hashed" => EmbeddingSource::Hashed {
            seed: parse_num(kv, "embedding.seed")?,
        },
        s if s.starts_with("file:") => EmbeddingSource::File(s["file:".len()..].to_string()),
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown embedding source '{other}'"
            )))
        }
    };
    let known = |k: &str| {
        k.starts_with("model.")
            || k.starts_with("train.")
            || k == "embedding.source"
            || k == "embedding.seed"
    };
    let extra: Vec<(String, String)> = kv
        .iter()
        .filter(|(k, _)| !known(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok((model, train, embedding, extra))
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        let name_bytes = name.as_bytes();
        self.buf
            .extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        self.bytes(name_bytes);
        self.buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: wanted {} bytes at offset {}, file holds {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("bad tensor name encoding".into()))?;
        let ndim = self.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Ok((name, Tensor::from_vec(&shape, data)?))
    }
}

fn serialize(ckpt: &Checkpoint) -> Vec<u8> {
    let kv = config_to_kv(
        &ckpt.model_cfg,
        &ckpt.train_cfg,
        &ckpt.embedding,
        &ckpt.extra_config,
    );
    let config_text = kv_to_text(&kv);

    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(config_text.len() as u64);
    w.bytes(config_text.as_bytes());
    for word in ckpt.rng_state {
        w.u64(word);
    }
    w.u32(ckpt.epochs_run);
    w.u32(ckpt.best_epoch);
    w.f64(ckpt.best_metric);
    w.u64(ckpt.clamp_events);
    w.u64(ckpt.optimizer_faults);

    let params = ckpt.params.tensors();
    let eg2 = ckpt.eg2.tensors();
    let edx2 = ckpt.edx2.tensors();
    w.u32((params.len() + eg2.len() + edx2.len()) as u32);
    for (name, t) in &params {
        w.tensor(&format!("param.{name}"), t);
    }
    for (name, t) in &eg2 {
        w.tensor(&format!("eg2.{name}"), t);
    }
    for (name, t) in &edx2 {
        w.tensor(&format!("edx2.{name}"), t);
    }
    w.buf
}

fn assign_group(
    target: &mut ModelParams,
    stored: &BTreeMap<String, Tensor>,
    prefix: &str,
) -> Result<()> {
    for (name, t) in target.tensors_mut() {
        let key = format!("{prefix}.{name}");
        let src = stored
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{key}'")))?;
        if src.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{key}' has shape {:?}, model expects {:?}",
                src.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}

fn deserialize(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let config_len = r.u64()? as usize;
    let config_text = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("bad config encoding".into()))?;
    let kv = parse_kv(&config_text)?;
    let (model_cfg, train_cfg, embedding, extra_config) = config_from_kv(&kv)?;

    let mut rng_state = [0u64; 4];
    for word in rng_state.iter_mut() {
        *word = r.u64()?;
    }
    let epochs_run = r.u32()?;
    let best_epoch = r.u32()?;
    let best_metric = r.f64()?;
    let clamp_events = r.u64()?;
    let optimizer_faults = r.u64()?;

    let count = r.u32()? as usize;
    let mut stored: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        stored.insert(name, t);
    }

    // Rebuild typed parameter structs and overwrite from the stored tensors.
    let mut seed_rng = Rng::seed(0, 0);
    let mut params = ModelParams::init(&model_cfg, &mut seed_rng)?;
    let mut eg2 = params.zeros_like();
    let mut edx2 = params.zeros_like();
    assign_group(&mut params, &stored, "param")?;
    assign_group(&mut eg2, &stored, "eg2")?;
    assign_group(&mut edx2, &stored, "edx2")?;

    Ok(Checkpoint {
        model_cfg,
        train_cfg,
        embedding,
        params,
        eg2,
        edx2,
        rng_state,
        epochs_run,
        best_epoch,
        best_metric,
        clamp_events,
        optimizer_faults,
        extra_config,
    })
}

/// Human-readable companion file content.
pub fn manifest_text(ckpt: &Checkpoint) -> String {
    let kv = config_to_kv(
        &ckpt.model_cfg,
        &ckpt.train_cfg,
        &ckpt.embedding,
        &ckpt.extra_config,
    );
    let mut out = String::new();
    out.push_str(&format!("format_version: {FORMAT_VERSION}\n"));
    out.push_str(&format!("epochs_run: {}\n", ckpt.epochs_run));
    out.push_str(&format!("best_epoch: {}\n", ckpt.best_epoch));
    out.push_str(&format!("best_metric: {}\n", ckpt.best_metric));
    out.push_str(&format!("clamp_events: {}\n", ckpt.clamp_events));
    out.push_str(&format!("optimizer_faults: {}\n", ckpt.optimizer_faults));
    out.push_str("\n[config]\n");
    out.push_str(&kv_to_text(&kv));
    out.push_str("\n[tensors]\n");
    let mut total = 0usize;
    for (name, t) in ckpt.params.tensors() {
        out.push_str(&format!("param.{name} {:?} ({} values)\n", t.shape(), t.numel()));
        total += t.numel();
    }
    out.push_str(&format!(
        "\n{total} trainable values; optimizer accumulators mirror each tensor twice\n"
    ));
    out
}

/// Writes the checkpoint and its `<path>.manifest.txt` companion.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = serialize(ckpt);
    let mut f = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest_path = format!("{}.manifest.txt", path.display());
    std::fs::write(&manifest_path, manifest_text(ckpt))
        .map_err(|e| Error::io(manifest_path.clone(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    deserialize(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::AdadeltaState;

    fn sample_checkpoint() -> Checkpoint {
        let model_cfg = ModelConfig::reduced();
        let mut rng = Rng::seed(77, 1);
        let params = ModelParams::init(&model_cfg, &mut rng).unwrap();
        let mut opt = AdadeltaState::new(&params);
        for (_, t) in opt.eg2.tensors_mut() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = 0.25 + i as f64 * 0.001;
            }
        }
        Checkpoint {
            model_cfg,
            train_cfg: TrainConfig::default(),
            embedding: EmbeddingSource::Hashed { seed: 99 },
            params,
            eg2: opt.eg2,
            edx2: opt.edx2,
            rng_state: [1, 2, 3, 4],
            epochs_run: 7,
            best_epoch: 5,
            best_metric: 61.25,
            clamp_events: 2,
            optimizer_faults: 0,
            extra_config: vec![("run.out_dir".into(), "runs/example".into())],
        }
    }

    #[test]
    fn round_trip() {
        let ckpt = sample_checkpoint();
        let bytes = serialize(&ckpt);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(back.model_cfg, ckpt.model_cfg);
        assert_eq!(back.train_cfg, ckpt.train_cfg);
        assert_eq!(back.embedding, ckpt.embedding);
        assert_eq!(back.rng_state, ckpt.rng_state);
        assert_eq!(back.epochs_run, 7);
        assert_eq!(back.best_epoch, 5);
        assert_eq!(back.best_metric, 61.25);
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.eg2, ckpt.eg2);
        assert_eq!(back.edx2, ckpt.edx2);
        assert_eq!(back.extra_config, ckpt.extra_config);
    }

    #[test]
    fn serialization_is_deterministic() {
        let ckpt = sample_checkpoint();
        assert_eq!(serialize(&ckpt), serialize(&ckpt));
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let ckpt = sample_checkpoint();
        let mut bytes = serialize(&ckpt);
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        match deserialize(&bytes).unwrap_err() {
            Error::CheckpointVersion { found, supported } => {
                assert_eq!(found, 9);
                assert_eq!(supported, FORMAT_VERSION);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_file_errors_cleanly() {
        let ckpt = sample_checkpoint();
        let bytes = serialize(&ckpt);
        let cut = &bytes[..bytes.len() / 2];
        match deserialize(cut).unwrap_err() {
            Error::Checkpoint(msg) => assert!(msg.contains("truncated")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let err = deserialize(b"nope").unwrap_err();
        assert!(err.to_string().contains("magic") || err.to_string().contains("truncated"));
    }

    #[test]
    fn config_kv_round_trip() {
        let model = ModelConfig::default();
        let train = TrainConfig {
            grad_clip: Some(5.0),
            class_weights: [1.0, 0.5, 2.5],
            ..TrainConfig::default()
        };
        let emb = EmbeddingSource::File("vectors.txt".into());
        let kv = config_to_kv(&model, &train, &emb, &[]);
        let (m2, t2, e2, extra) = config_from_kv(&kv).unwrap();
        assert_eq!(m2, model);
        assert_eq!(t2, train);
        assert_eq!(e2, emb);
        assert!(extra.is_empty());
    }
}
