//! Flat `key = value` run configuration with dotted section prefixes.
//!
//! ```text
//! # comments start with '#'
//! dataset.path = data/wikipedia.csv
//! treatment.p = 50
//! search.k_max = 2
//! train.seeds = 0, 1, 2
//! sweep.p = 10, 30, 50, 70, 90
//! ```
//!
//! Unknown keys and malformed values are rejected with their line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{CodclError, Result};
use crate::pipeline::{ExperimentConfig, SyntheticConfig};
use crate::tgraph::{ColumnMap, IngestConfig};
use crate::treatment::{IndicatorStat, IntensityMode, TreatmentKind};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    /// `auto`, `triples` or `jodie`, or explicit indices through the column keys.
    pub format: String,
    pub src: Option<usize>,
    pub dst: Option<usize>,
    pub time: Option<usize>,
    pub label: Option<usize>,
    pub weight: Option<usize>,
    pub features_from: Option<usize>,
    pub header: bool,
    pub bipartite: bool,
    pub self_loops: bool,
}

impl DatasetConfig {
    pub fn ingest_config(&self) -> Result<IngestConfig> {
        let columns = match self.format.as_str() {
            "auto" | "" => None,
            "triples" => Some(ColumnMap::triples()),
            "jodie" => Some(ColumnMap::jodie()),
            "columns" => Some(ColumnMap {
                src: self.src.ok_or_else(|| CodclError::config("dataset.src is required with format = columns"))?,
                dst: self.dst.ok_or_else(|| CodclError::config("dataset.dst is required with format = columns"))?,
                time: self.time.ok_or_else(|| CodclError::config("dataset.time is required with format = columns"))?,
                label: self.label,
                weight: self.weight,
                features_from: self.features_from,
            }),
            other => return Err(CodclError::config(format!("unknown dataset.format `{other}`"))),
        };
        Ok(IngestConfig {
            columns,
            has_header: self.header,
            allow_self_loops: self.self_loops,
            bipartite: self.bipartite,
        })
    }
}

/// Grid for the sweep command; empty axes are not swept.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    pub p: Vec<f64>,
    pub k_max: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl SweepConfig {
    pub fn cells(&self) -> usize {
        [self.p.len(), self.k_max.len(), self.alpha.len()]
            .into_iter()
            .map(|n| n.max(1))
            .product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub experiment: ExperimentConfig<f64>,
    pub sweep: SweepConfig,
    pub synth: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig {
                format: "auto".into(),
                header: true,
                ..Default::default()
            },
            experiment: ExperimentConfig::default(),
            sweep: SweepConfig::default(),
            synth: SyntheticConfig::default(),
        }
    }
}

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| CodclError::config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CodclError::config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

fn parse_list<V: FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_opt<V: FromStr>(key: &str, v: &str) -> Result<Option<V>> {
    if v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn fmt_opt<V: ToString>(v: &Option<V>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

fn fmt_list<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CodclError::Parse {
                line: i as u64 + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| CodclError::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.synth.validate()?;
        self.dataset.ingest_config()?;
        if self.sweep.p.iter().any(|p| !(*p > 0.0 && *p < 100.0)) {
            return Err(CodclError::config("sweep.p values must lie in (0, 100)"));
        }
        if self.sweep.k_max.contains(&0) {
            return Err(CodclError::config("sweep.k_max values must be >= 1"));
        }
        if self.sweep.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(CodclError::config("sweep.alpha values must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Sets one key. Does not re-validate the whole config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.dataset;
        let x = &mut self.experiment;
        let t = &mut x.treatment;
        let tr = &mut x.train;
        let s = &mut self.synth;
        match key {
            "dataset.path" => d.path = Some(PathBuf::from(v)),
            "dataset.format" => d.format = v.to_ascii_lowercase(),
            "dataset.src" => d.src = parse_opt(key, v)?,
            "dataset.dst" => d.dst = parse_opt(key, v)?,
            "dataset.time" => d.time = parse_opt(key, v)?,
            "dataset.label" => d.label = parse_opt(key, v)?,
            "dataset.weight" => d.weight = parse_opt(key, v)?,
            "dataset.features_from" => d.features_from = parse_opt(key, v)?,
            "dataset.header" => d.header = parse_bool(key, v)?,
            "dataset.bipartite" => d.bipartite = parse_bool(key, v)?,
            "dataset.self_loops" => d.self_loops = parse_bool(key, v)?,

            "treatment.delta" => t.delta = parse(key, v)?,
            "treatment.lambda" => t.lambda = parse(key, v)?,
            "treatment.p" => t.percentile = parse(key, v)?,
            "treatment.mode" => {
                t.intensity_mode = match v.to_ascii_lowercase().as_str() {
                    "cumulative" => IntensityMode::Cumulative,
                    "decay" | "exponential" | "exponential-decay" => IntensityMode::ExponentialDecay,
                    _ => return Err(CodclError::config(format!("`{key}`: expected cumulative or decay, got `{v}`"))),
                }
            }
            "treatment.indicator" => {
                t.indicator = match v.to_ascii_lowercase().as_str() {
                    "common-neighbors" | "cn" => IndicatorStat::CommonNeighbors,
                    "intensity" => IndicatorStat::Intensity,
                    _ => return Err(CodclError::config(format!("`{key}`: expected common-neighbors or intensity, got `{v}`"))),
                }
            }
            "treatment.kind" => t.kind = TreatmentKind::from_str(v)?,
            "treatment.literal_threshold" => t.literal_threshold = parse_bool(key, v)?,
            "treatment.degree_gap" => t.degree_gap = parse(key, v)?,
            "treatment.proximity" => t.proximity_threshold = parse_opt(key, v)?,
            "treatment.frequency" => t.frequency_threshold = parse_opt(key, v)?,
            "treatment.core_order" => t.core_order = parse(key, v)?,

            "search.k_max" => x.search.k_max = parse(key, v)?,
            "search.d_h" => x.selection_dim = parse(key, v)?,
            "search.global_argmax" => x.search.global_argmax = parse_bool(key, v)?,
            "search.seed" => x.search.seed = parse(key, v)?,
            "search.delta" => x.search.delta = parse(key, v)?,
            "search.state_window" => x.search.state_window = parse(key, v)?,

            "model.d_t" => x.model.time_dim = parse(key, v)?,
            "model.d_h" => x.model.embed_dim = parse(key, v)?,
            "model.hidden" => x.model.hidden_dim = parse(key, v)?,
            "model.k" => tr.recent_k = parse(key, v)?,

            "train.alpha" => tr.alpha = parse(key, v)?,
            "train.tau" => tr.temperature = parse(key, v)?,
            "train.batch" => tr.batch_size = parse(key, v)?,
            "train.lr" => tr.learning_rate = parse(key, v)?,
            "train.beta1" => tr.beta1 = parse(key, v)?,
            "train.beta2" => tr.beta2 = parse(key, v)?,
            "train.eps" => tr.epsilon = parse(key, v)?,
            "train.epochs" => tr.epochs = parse(key, v)?,
            "train.patience" => tr.patience = parse(key, v)?,
            "train.bn_momentum" => tr.bn_momentum = parse(key, v)?,
            "train.refresh_cf" => tr.refresh_counterfactuals = parse_bool(key, v)?,
            "train.seeds" => x.seeds = parse_list(key, v)?,
            "train.disable_counterfactual" => tr.ablations.disable_counterfactual = parse_bool(key, v)?,
            "train.disable_time_encoding" => tr.ablations.disable_time_encoding = parse_bool(key, v)?,
            "train.disable_contrastive" => tr.ablations.disable_contrastive = parse_bool(key, v)?,
            "train.disable_similarity" => tr.ablations.disable_similarity = parse_bool(key, v)?,

            "eval.inductive_fraction" => x.eval.inductive_fraction = parse(key, v)?,
            "eval.seed" => x.eval.seed = parse(key, v)?,
            "eval.split" => {
                let r: Vec<f64> = parse_list(key, v)?;
                x.eval.split = r
                    .try_into()
                    .map_err(|_| CodclError::config("eval.split needs exactly three ratios"))?;
            }
            "eval.workers" => x.workers = parse(key, v)?,

            "sweep.p" => self.sweep.p = parse_list(key, v)?,
            "sweep.k_max" => self.sweep.k_max = parse_list(key, v)?,
            "sweep.alpha" => self.sweep.alpha = parse_list(key, v)?,

            "synth.nodes" => s.nodes = parse(key, v)?,
            "synth.communities" => s.communities = parse(key, v)?,
            "synth.friends" => s.friends = parse(key, v)?,
            "synth.theta" => s.planted_theta = parse(key, v)?,
            "synth.duration" => s.duration = parse(key, v)?,
            "synth.proposals" => s.proposals = parse(key, v)?,
            "synth.base_rate" => s.base_rate = parse(key, v)?,
            "synth.beta" => s.beta = parse(key, v)?,
            "synth.friend_share" => s.friend_share = parse(key, v)?,
            "synth.community_bias" => s.community_bias = parse(key, v)?,
            "synth.feature_noise" => s.feature_noise = parse(key, v)?,

            _ => return Err(CodclError::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, sorted. Parsing this text yields an equal config.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let d = &self.dataset;
        let x = &self.experiment;
        let t = &x.treatment;
        let tr = &x.train;
        let s = &self.synth;
        let mut m = BTreeMap::new();
        m.insert("dataset.path", d.path.as_ref().map_or_else(String::new, |p| p.display().to_string()));
        m.insert("dataset.format", d.format.clone());
        m.insert("dataset.src", fmt_opt(&d.src));
        m.insert("dataset.dst", fmt_opt(&d.dst));
        m.insert("dataset.time", fmt_opt(&d.time));
        m.insert("dataset.label", fmt_opt(&d.label));
        m.insert("dataset.weight", fmt_opt(&d.weight));
        m.insert("dataset.features_from", fmt_opt(&d.features_from));
        m.insert("dataset.header", d.header.to_string());
        m.insert("dataset.bipartite", d.bipartite.to_string());
        m.insert("dataset.self_loops", d.self_loops.to_string());

        m.insert("treatment.delta", t.delta.to_string());
        m.insert("treatment.lambda", t.lambda.to_string());
        m.insert("treatment.p", t.percentile.to_string());
        m.insert(
            "treatment.mode",
            match t.intensity_mode {
                IntensityMode::Cumulative => "cumulative",
                IntensityMode::ExponentialDecay => "decay",
            }
            .into(),
        );
        m.insert(
            "treatment.indicator",
            match t.indicator {
                IndicatorStat::CommonNeighbors => "common-neighbors",
                IndicatorStat::Intensity => "intensity",
            }
            .into(),
        );
        m.insert("treatment.kind", t.kind.name().into());
        m.insert("treatment.literal_threshold", t.literal_threshold.to_string());
        m.insert("treatment.degree_gap", t.degree_gap.to_string());
        m.insert("treatment.proximity", fmt_opt(&t.proximity_threshold));
        m.insert("treatment.frequency", fmt_opt(&t.frequency_threshold));
        m.insert("treatment.core_order", t.core_order.to_string());

        m.insert("search.k_max", x.search.k_max.to_string());
        m.insert("search.d_h", x.selection_dim.to_string());
        m.insert("search.global_argmax", x.search.global_argmax.to_string());
        m.insert("search.seed", x.search.seed.to_string());
        m.insert("search.delta", x.search.delta.to_string());
        m.insert("search.state_window", x.search.state_window.to_string());

        m.insert("model.d_t", x.model.time_dim.to_string());
        m.insert("model.d_h", x.model.embed_dim.to_string());
        m.insert("model.hidden", x.model.hidden_dim.to_string());
        m.insert("model.k", tr.recent_k.to_string());

        m.insert("train.alpha", tr.alpha.to_string());
        m.insert("train.tau", tr.temperature.to_string());
        m.insert("train.batch", tr.batch_size.to_string());
        m.insert("train.lr", tr.learning_rate.to_string());
        m.insert("train.beta1", tr.beta1.to_string());
        m.insert("train.beta2", tr.beta2.to_string());
        m.insert("train.eps", tr.epsilon.to_string());
        m.insert("train.epochs", tr.epochs.to_string());
        m.insert("train.patience", tr.patience.to_string());
        m.insert("train.bn_momentum", tr.bn_momentum.to_string());
        m.insert("train.refresh_cf", tr.refresh_counterfactuals.to_string());
        m.insert("train.seeds", fmt_list(&x.seeds));
        m.insert("train.disable_counterfactual", tr.ablations.disable_counterfactual.to_string());
        m.insert("train.disable_time_encoding", tr.ablations.disable_time_encoding.to_string());
        m.insert("train.disable_contrastive", tr.ablations.disable_contrastive.to_string());
        m.insert("train.disable_similarity", tr.ablations.disable_similarity.to_string());

        m.insert("eval.inductive_fraction", x.eval.inductive_fraction.to_string());
        m.insert("eval.seed", x.eval.seed.to_string());
        m.insert("eval.split", fmt_list(&x.eval.split));
        m.insert("eval.workers", x.workers.to_string());

        m.insert("sweep.p", fmt_list(&self.sweep.p));
        m.insert("sweep.k_max", fmt_list(&self.sweep.k_max));
        m.insert("sweep.alpha", fmt_list(&self.sweep.alpha));

        m.insert("synth.nodes", s.nodes.to_string());
        m.insert("synth.communities", s.communities.to_string());
        m.insert("synth.friends", s.friends.to_string());
        m.insert("synth.theta", s.planted_theta.to_string());
        m.insert("synth.duration", s.duration.to_string());
        m.insert("synth.proposals", s.proposals.to_string());
        m.insert("synth.base_rate", s.base_rate.to_string());
        m.insert("synth.beta", s.beta.to_string());
        m.insert("synth.friend_share", s.friend_share.to_string());
        m.insert("synth.community_bias", s.community_bias.to_string());
        m.insert("synth.feature_noise", s.feature_noise.to_string());
        m
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            if k == "dataset.path" && v.is_empty() {
                continue;
            }
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Canonical text of the keys under one section prefix (e.g. `"treatment."`).
    pub fn section_text(&self, prefix: &str) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            if k.starts_with(prefix) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}
