//! Output-directory layout, content hashes and run manifests.
//!
//! Every stage writes `<stage>.manifest.json` next to its artifacts. A manifest
//! records the stage key (a hash chained from the upstream key and the config
//! sections the stage reads), the full canonical config, the seeds, and the
//! hash of every file written. Downstream stages recompute the key they expect
//! and refuse to run on a missing or stale upstream artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use codcl::config::RunConfig;
use codcl::{Event, Graph};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const GRAPH: &str = "graph.json";
pub const TREATMENTS: &str = "treatments.csv";
pub const AUGMENT: &str = "augment.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

/// Hash of an upstream key followed by config text.
pub fn chain(upstream: &str, text: &str) -> String {
    sha256_hex(format!("{upstream}\n{text}").as_bytes())
}

/// Canonical `key = value` lines for the given prefixes. Worker count never
/// changes results, so it is left out of every key.
pub fn config_text(cfg: &RunConfig, prefixes: &[&str]) -> String {
    cfg.entries()
        .into_iter()
        .filter(|(k, _)| *k != "eval.workers" && prefixes.iter().any(|p| k.starts_with(p)))
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

pub fn treat_key(graph_key: &str, cfg: &RunConfig) -> String {
    chain(graph_key, &config_text(cfg, &["treatment.", "eval."]))
}

pub fn augment_key(treat_key: &str, cfg: &RunConfig) -> String {
    chain(treat_key, &config_text(cfg, &["search.", "train.disable_similarity"]))
}

pub fn train_key(treat_key: &str, cfg: &RunConfig) -> String {
    chain(treat_key, &config_text(cfg, &["search.", "model.", "train."]))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub key: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Stage-specific results (θ, coverage, per-seed training summaries).
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    /// Canonical config text; together with the dataset hash it reproduces every artifact.
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, key: String, cfg: &RunConfig) -> Self {
        let config = config_text(cfg, &[""]);
        Self {
            command: command.into(),
            version: VERSION.into(),
            key,
            config_hash: sha256_hex(config.as_bytes()),
            seeds: cfg.experiment.seeds.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            extra: BTreeMap::new(),
            config,
        }
    }
}

/// Which command produces each stage's manifest, for error messages.
fn producer(stage: &str) -> &'static str {
    match stage {
        "graph" => "ingest` or `codcl synth",
        "treat" => "treat",
        "augment" => "augment",
        "train" => "train",
        _ => "the corresponding command",
    }
}

pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a file and records its hash in the manifest.
    pub fn write(&self, manifest: &mut Manifest, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        manifest.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save_manifest(&self, stage: &str, manifest: &Manifest) -> Result<()> {
        let text = serde_json::to_string_pretty(manifest)? + "\n";
        fs::write(self.path(&format!("{stage}.manifest.json")), text)?;
        Ok(())
    }

    /// Loads an upstream manifest and checks that its outputs are intact and,
    /// when `expected_key` is given, that it was produced for the current inputs.
    pub fn require(&self, stage: &str, expected_key: Option<&str>) -> Result<Manifest> {
        let cmd = producer(stage);
        let path = self.path(&format!("{stage}.manifest.json"));
        if !path.exists() {
            bail!("missing {} in {}: run `codcl {cmd}` first", path.file_name().unwrap().to_string_lossy(), self.root.display());
        }
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
            .with_context(|| format!("unreadable manifest {}", path.display()))?;
        for (name, hash) in &m.outputs {
            let file = self.path(name);
            if !file.exists() {
                bail!("missing {name} in {}: run `codcl {cmd}` first", self.root.display());
            }
            if &file_hash(&file)? != hash {
                bail!("{name} was modified after it was written: rerun `codcl {cmd}`");
            }
        }
        if let Some(k) = expected_key {
            if m.key != k {
                bail!("{stage} artifacts are stale for the current config or inputs: rerun `codcl {cmd}`");
            }
        }
        Ok(m)
    }
}

/// Parsed graph as cached by `ingest` and `synth`.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphCache {
    pub ids: Vec<String>,
    pub self_loops: bool,
    pub node_features: Vec<Vec<f64>>,
    pub events: Vec<Event>,
}

impl GraphCache {
    pub fn of(g: &Graph) -> Result<Self> {
        let node_features = (0..g.num_nodes()).map(|u| g.node_feature(u).map(<[f64]>::to_vec)).collect::<Result<_, _>>()?;
        Ok(Self {
            ids: g.original_ids().to_vec(),
            self_loops: g.allows_self_loops(),
            node_features,
            events: g.events().to_vec(),
        })
    }

    pub fn into_graph(self) -> Result<Graph> {
        Ok(Graph::from_events(self.events, self.ids.len(), self.self_loops)?
            .with_node_features(self.node_features)?
            .with_original_ids(self.ids)?)
    }
}

/// Loads the cached graph and returns it with its content key.
pub fn load_graph(out: &OutDir) -> Result<(Graph, String)> {
    let m = out.require("graph", None)?;
    let bytes = fs::read(out.path(GRAPH))?;
    let cache: GraphCache = serde_json::from_slice(&bytes).context("unreadable graph cache")?;
    Ok((cache.into_graph()?, m.key))
}
