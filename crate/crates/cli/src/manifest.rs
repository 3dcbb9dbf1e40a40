//! Stage manifest: which configuration produced each artifact and the
//! SHA-256 of every file a stage read and wrote. Consumers refuse artifacts
//! whose producer ran under a different configuration or that changed since.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "voyagecast.manifest.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_sha256: String,
    /// Path, relative to the output directory when inside it, to content hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA.into(),
            stages: BTreeMap::new(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Hash of a configuration value's canonical JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_bytes(&serde_json::to_vec(value).expect("config serializes"))
}

/// Manifest of an output directory plus a per-run hash cache.
pub struct Workspace {
    pub dir: PathBuf,
    pub manifest: Manifest,
    cache: HashMap<PathBuf, String>,
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let m: Manifest = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            if m.schema != MANIFEST_SCHEMA {
                bail!(
                    "{}: schema `{}`, expected `{MANIFEST_SCHEMA}`",
                    path.display(),
                    m.schema
                );
            }
            m
        } else {
            Manifest::default()
        };
        Ok(Workspace {
            dir: dir.to_path_buf(),
            manifest,
            cache: HashMap::new(),
        })
    }

    /// Resolves a name or relative path against the output directory.
    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    /// Manifest key of a path: relative to the output directory when inside it.
    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir)
            .unwrap_or(path)
            .display()
            .to_string()
    }

    pub fn hash(&mut self, path: &Path) -> Result<String> {
        if let Some(h) = self.cache.get(path) {
            return Ok(h.clone());
        }
        let h = sha256_file(path)?;
        self.cache.insert(path.to_path_buf(), h.clone());
        Ok(h)
    }

    fn producer(&self, key: &str) -> Option<(&String, &StageRecord)> {
        self.manifest
            .stages
            .iter()
            .find(|(_, r)| r.outputs.contains_key(key))
    }

    /// Checks that an input exists and is consistent with the recorded
    /// history. `expected` maps producing stages to the configuration hash
    /// the current run would use for them. Returns the input's hash.
    pub fn require(&mut self, path: &Path, expected: &BTreeMap<String, String>) -> Result<String> {
        if !path.exists() {
            bail!(
                "missing artifact {}; run the stage that produces it first",
                path.display()
            );
        }
        let mut pending = vec![path.to_path_buf()];
        let mut seen = Vec::new();
        while let Some(p) = pending.pop() {
            if seen.contains(&p) {
                continue;
            }
            seen.push(p.clone());
            let key = self.key(&p);
            let Some((stage, record)) = self.producer(&key).map(|(s, r)| (s.clone(), r.clone()))
            else {
                continue;
            };
            if let Some(want) = expected.get(&stage) {
                if *want != record.config_sha256 {
                    bail!(
                        "stale artifact {}: stage `{stage}` ran with a different configuration; re-run it",
                        p.display()
                    );
                }
            }
            if !p.exists() || self.hash(&p)? != record.outputs[&key] {
                bail!(
                    "stale artifact {}: changed since stage `{stage}` wrote it; re-run it",
                    p.display()
                );
            }
            for (input, h) in &record.inputs {
                let ip = self.dir.join(input);
                if !ip.exists() || self.hash(&ip)? != *h {
                    bail!(
                        "stale artifact {}: its input {input} changed since stage `{stage}` ran",
                        p.display()
                    );
                }
                pending.push(ip);
            }
        }
        self.hash(path)
    }

    pub fn record(
        &mut self,
        stage: &str,
        config_sha256: String,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<()> {
        let mut rec = StageRecord {
            config_sha256,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        for p in inputs {
            let h = self.hash(p)?;
            rec.inputs.insert(self.key(p), h);
        }
        for p in outputs {
            self.cache.remove(p);
            let h = self.hash(p)?;
            rec.outputs.insert(self.key(p), h);
        }
        // An output now belongs to this stage only.
        for (name, other) in self.manifest.stages.iter_mut() {
            if name != stage {
                other.outputs.retain(|k, _| !rec.outputs.contains_key(k));
            }
        }
        self.manifest.stages.insert(stage.to_string(), rec);
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
