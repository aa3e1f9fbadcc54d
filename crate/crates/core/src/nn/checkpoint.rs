use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{AdamW, ParamStore};
use crate::blob::BlobFile;
use crate::error::{Error, Result};

const PARAM: &str = "param/";
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

/// Hex SHA-256 of the compact JSON form (object keys are sorted).
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(serde_json::to_vec(config).expect("JSON serializes"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parameters plus optimizer moments, written as one blob file whose header
/// records the config, its hash, the iteration and RNG seed.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Value,
    pub iteration: u64,
    pub seed: u64,
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
    /// Caller-specific header fields.
    pub extra: Map<String, Value>,
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        config_hash(&self.config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = Map::new();
        header.insert("config".into(), self.config.clone());
        header.insert("config_hash".into(), json!(self.config_hash()));
        header.insert("iteration".into(), json!(self.iteration));
        header.insert("rng".into(), json!({"algorithm": "chacha8", "seed": self.seed, "stream": self.iteration}));
        header.insert("extra".into(), Value::Object(self.extra.clone()));
        if let Some(opt) = &self.optimizer {
            header.insert(
                "optimizer".into(),
                json!({
                    "kind": "adamw",
                    "step": opt.step,
                    "beta1": opt.beta1,
                    "beta2": opt.beta2,
                    "eps": opt.eps,
                    "weight_decay": opt.weight_decay,
                }),
            );
        }
        let mut f = BlobFile::new(header);
        for (name, t) in self.params.iter() {
            f.push(format!("{PARAM}{name}"), t.clone());
        }
        if let Some(opt) = &self.optimizer {
            for (name, t) in &opt.m {
                f.push(format!("{MOMENT1}{name}"), t.clone());
            }
            for (name, t) in &opt.v {
                f.push(format!("{MOMENT2}{name}"), t.clone());
            }
        }
        f.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let f = BlobFile::read(path)?;
        let bad = |msg: &str| Error::Header {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let config = f.header.get("config").cloned().ok_or_else(|| bad("missing config"))?;
        let iteration = f.header["iteration"].as_u64().ok_or_else(|| bad("missing iteration"))?;
        let seed = f.header["rng"]["seed"].as_u64().ok_or_else(|| bad("missing rng seed"))?;
        let extra = match f.header.get("extra") {
            Some(Value::Object(m)) => m.clone(),
            _ => Map::new(),
        };
        let mut params = ParamStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for b in &f.blobs {
            if let Some(n) = b.name.strip_prefix(PARAM) {
                params.insert(n, b.tensor.clone());
            } else if let Some(n) = b.name.strip_prefix(MOMENT1) {
                m.insert(n.to_string(), b.tensor.clone());
            } else if let Some(n) = b.name.strip_prefix(MOMENT2) {
                v.insert(n.to_string(), b.tensor.clone());
            }
        }
        let optimizer = match f.header.get("optimizer") {
            Some(o) => {
                let num = |k: &str| o[k].as_f64().ok_or_else(|| bad("incomplete optimizer state"));
                let mut opt = AdamW::new(num("beta1")?, num("beta2")?, num("eps")?, num("weight_decay")?);
                opt.step = o["step"].as_u64().ok_or_else(|| bad("missing optimizer step"))?;
                opt.m = m;
                opt.v = v;
                Some(opt)
            }
            None => None,
        };
        let stored = f.header.get("config_hash").and_then(Value::as_str);
        if stored != Some(config_hash(&config).as_str()) {
            return Err(bad("config hash does not match stored config"));
        }
        Ok(Self {
            config,
            iteration,
            seed,
            params,
            optimizer,
            extra,
        })
    }

    /// Fails with a config error when `config` differs from the stored one.
    pub fn ensure_config(&self, config: &Value) -> Result<()> {
        if config_hash(config) != self.config_hash() {
            return Err(Error::Config(
                "checkpoint was written with a different configuration".into(),
            ));
        }
        Ok(())
    }

    /// Replaces `store` values by the checkpointed ones, checking names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, t) in store.iter_mut() {
            let saved = self
                .params
                .get(name)
                .ok_or_else(|| Error::Shape(format!("parameter `{name}` missing from checkpoint")))?;
            if saved.shape() != t.shape() {
                return Err(Error::Shape(format!("parameter `{name}` has a different shape")));
            }
            *t = saved.clone();
        }
        Ok(())
    }
}
