//! Immutable temporal graph with time-cutoff and time-window neighborhood queries.
//!
//! Every event `(u, v, t)` is indexed under both endpoints, so all queries see
//! the graph as undirected. Per-node incidence lists are sorted by timestamp and
//! queried by binary search.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CodclError, Result};
use crate::scalar::Scalar;

/// Dense node index assigned at ingest.
pub type NodeId = usize;

/// One timestamped interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEvent<T> {
    pub src: NodeId,
    pub dst: NodeId,
    pub timestamp: T,
    pub weight: T,
    pub features: Vec<T>,
    pub label: u8,
}

impl<T: Scalar> TemporalEvent<T> {
    /// Unit-weight, featureless event.
    pub fn new(src: NodeId, dst: NodeId, timestamp: T) -> Self {
        Self {
            src,
            dst,
            timestamp,
            weight: T::one(),
            features: Vec::new(),
            label: 0,
        }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.src == node || self.dst == node
    }
}

/// Entry of a per-node incidence list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incidence<T> {
    pub time: T,
    pub other: NodeId,
    /// Index into [`TemporalGraph::events`].
    pub event: usize,
}

/// Build-once, read-many temporal graph.
#[derive(Debug, Clone)]
pub struct TemporalGraph<T> {
    events: Vec<TemporalEvent<T>>,
    adjacency: Vec<Vec<Incidence<T>>>,
    node_features: Vec<Vec<T>>,
    feature_dim: usize,
    original_ids: Vec<String>,
    allow_self_loops: bool,
    t_min: T,
    t_max: T,
}

/// Which CSV columns hold which event fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub src: usize,
    pub dst: usize,
    pub time: usize,
    pub label: Option<usize>,
    pub weight: Option<usize>,
    /// Every column from this index onward is an edge feature.
    pub features_from: Option<usize>,
}

impl ColumnMap {
    /// Plain `src,dst,t` triples.
    pub fn triples() -> Self {
        Self {
            src: 0,
            dst: 1,
            time: 2,
            label: None,
            weight: None,
            features_from: None,
        }
    }

    /// `user_id,item_id,timestamp,state_label,f1,f2,...`
    pub fn jodie() -> Self {
        Self {
            src: 0,
            dst: 1,
            time: 2,
            label: Some(3),
            weight: None,
            features_from: Some(4),
        }
    }

    /// Detects the layout from header names.
    ///
    /// Recognized names (case-insensitive): source `user_id|src|source|u|from`,
    /// destination `item_id|dst|destination|target|v|i|to`, time
    /// `timestamp|ts|t|time`, label `state_label|label|y`, weight `weight|w`.
    /// Columns after the last recognized one are features.
    pub fn detect(header: &[String]) -> Result<Self> {
        let mut src = None;
        let mut dst = None;
        let mut time = None;
        let mut label = None;
        let mut weight = None;
        let mut last_known = 0;
        for (i, raw) in header.iter().enumerate() {
            let name = raw.trim().to_ascii_lowercase();
            let slot = match name.as_str() {
                "user_id" | "src" | "source" | "u" | "from" => &mut src,
                "item_id" | "dst" | "destination" | "target" | "v" | "i" | "to" => &mut dst,
                "timestamp" | "ts" | "t" | "time" => &mut time,
                "state_label" | "label" | "y" => &mut label,
                "weight" | "w" => &mut weight,
                _ => continue,
            };
            if slot.is_none() {
                *slot = Some(i);
                last_known = i;
            }
        }
        let missing = |what: &str| CodclError::Parse {
            line: 1,
            message: format!("header has no recognizable {what} column"),
        };
        Ok(Self {
            src: src.ok_or_else(|| missing("source"))?,
            dst: dst.ok_or_else(|| missing("destination"))?,
            time: time.ok_or_else(|| missing("timestamp"))?,
            label,
            weight,
            features_from: Some(last_known + 1),
        })
    }

    fn fixed_width(&self) -> usize {
        [Some(self.src), Some(self.dst), Some(self.time), self.label, self.weight]
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(0)
            + 1
    }
}

/// CSV ingest options.
#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// `None` detects the layout from the header (or assumes JODIE order without one).
    pub columns: Option<ColumnMap>,
    pub has_header: bool,
    pub allow_self_loops: bool,
    /// Source and destination ids live in separate namespaces (user-item data).
    pub bipartite: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            columns: None,
            has_header: true,
            allow_self_loops: false,
            bipartite: false,
        }
    }
}

struct RawEvent<T> {
    src: String,
    dst: String,
    timestamp: T,
    weight: T,
    features: Vec<T>,
    label: u8,
}

fn parse_num<T: Scalar>(field: &str, line: u64, what: &str) -> Result<T> {
    let v: f64 = field.trim().parse().map_err(|_| CodclError::Parse {
        line,
        message: format!("cannot parse {what} `{}`", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(CodclError::Validation {
            line,
            message: format!("non-finite {what}"),
        });
    }
    Ok(T::lit(v))
}

/// Parses raw rows into a graph. `rows` yields `(line number, fields)`.
pub fn ingest_records<T, I>(header: Option<&[String]>, rows: I, config: &IngestConfig) -> Result<TemporalGraph<T>>
where
    T: Scalar,
    I: IntoIterator<Item = (u64, Vec<String>)>,
{
    let columns = match (&config.columns, header) {
        (Some(c), _) => c.clone(),
        (None, Some(h)) => ColumnMap::detect(h)?,
        (None, None) => ColumnMap::jodie(),
    };
    let fixed = columns.fixed_width();
    let mut raw: Vec<RawEvent<T>> = Vec::new();
    let mut feature_dim: Option<usize> = None;

    for (line, fields) in rows {
        if fields.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if fields.len() < fixed {
            return Err(CodclError::Parse {
                line,
                message: format!("expected at least {fixed} fields, found {}", fields.len()),
            });
        }
        let timestamp: T = parse_num(&fields[columns.time], line, "timestamp")?;
        if timestamp < T::zero() {
            return Err(CodclError::Validation {
                line,
                message: "negative timestamp".into(),
            });
        }
        let weight = match columns.weight {
            Some(c) => parse_num(&fields[c], line, "weight")?,
            None => T::one(),
        };
        let label = match columns.label {
            Some(c) => {
                let v: T = parse_num(&fields[c], line, "label")?;
                u8::from(v != T::zero())
            }
            None => 0,
        };
        let features = match columns.features_from {
            Some(from) if from < fields.len() => fields[from..]
                .iter()
                .map(|f| parse_num(f, line, "feature"))
                .collect::<Result<Vec<T>>>()?,
            _ => Vec::new(),
        };
        match feature_dim {
            None => feature_dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(CodclError::Validation {
                    line,
                    message: format!("expected {d} edge features, found {}", features.len()),
                })
            }
            _ => {}
        }
        let src = fields[columns.src].trim().to_string();
        let dst = fields[columns.dst].trim().to_string();
        if src.is_empty() || dst.is_empty() {
            return Err(CodclError::Parse {
                line,
                message: "empty node id".into(),
            });
        }
        if !config.bipartite && !config.allow_self_loops && src == dst {
            return Err(CodclError::Validation {
                line,
                message: format!("self-loop on node `{src}`"),
            });
        }
        raw.push(RawEvent {
            src,
            dst,
            timestamp,
            weight,
            features,
            label,
        });
    }
    if raw.is_empty() {
        return Err(CodclError::Empty("no event rows".into()));
    }

    // sort by (timestamp, row order), then number nodes by first appearance
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].timestamp.partial_cmp(&raw[b].timestamp).unwrap().then(a.cmp(&b)));

    let mut ids: HashMap<String, NodeId> = HashMap::new();
    let mut original_ids = Vec::new();
    let mut intern = |key: String| -> NodeId {
        *ids.entry(key.clone()).or_insert_with(|| {
            original_ids.push(key);
            original_ids.len() - 1
        })
    };
    let mut events = Vec::with_capacity(raw.len());
    let mut slots: Vec<Option<RawEvent<T>>> = raw.into_iter().map(Some).collect();
    for i in order {
        let r = slots[i].take().expect("each row visited once");
        let (sk, dk) = if config.bipartite {
            (format!("u:{}", r.src), format!("i:{}", r.dst))
        } else {
            (r.src, r.dst)
        };
        let src = intern(sk);
        let dst = intern(dk);
        events.push(TemporalEvent {
            src,
            dst,
            timestamp: r.timestamp,
            weight: r.weight,
            features: r.features,
            label: r.label,
        });
    }
    let num_nodes = original_ids.len();
    let mut graph = TemporalGraph::from_events(events, num_nodes, config.allow_self_loops)?;
    graph.original_ids = original_ids;
    Ok(graph)
}

/// Reads a comma-separated event file.
pub fn ingest_reader<T: Scalar, R: Read>(reader: R, config: &IngestConfig) -> Result<TemporalGraph<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CodclError::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if config.has_header && header.is_none() {
            header = Some(fields);
            continue;
        }
        rows.push((line, fields));
    }
    ingest_records(header.as_deref(), rows, config)
}

pub fn ingest_path<T: Scalar>(path: impl AsRef<Path>, config: &IngestConfig) -> Result<TemporalGraph<T>> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(std::io::BufReader::new(file), config)
}

impl<T: Scalar> TemporalGraph<T> {
    /// Builds the store from events over nodes `0..num_nodes`.
    ///
    /// Events are stably sorted by timestamp, so equal timestamps keep input order.
    pub fn from_events(mut events: Vec<TemporalEvent<T>>, num_nodes: usize, allow_self_loops: bool) -> Result<Self> {
        let mut feature_dim = None;
        for (i, e) in events.iter().enumerate() {
            let line = i as u64 + 1;
            if !e.timestamp.is_finite() || e.timestamp < T::zero() {
                return Err(CodclError::Validation {
                    line,
                    message: "timestamp must be finite and non-negative".into(),
                });
            }
            if !e.weight.is_finite() || e.features.iter().any(|f| !f.is_finite()) {
                return Err(CodclError::Validation {
                    line,
                    message: "non-finite weight or feature".into(),
                });
            }
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(CodclError::UnknownNode(e.src.max(e.dst)));
            }
            if e.src == e.dst && !allow_self_loops {
                return Err(CodclError::Validation {
                    line,
                    message: format!("self-loop on node {}", e.src),
                });
            }
            match feature_dim {
                None => feature_dim = Some(e.features.len()),
                Some(d) if d != e.features.len() => {
                    return Err(CodclError::Dimension {
                        expected: d,
                        got: e.features.len(),
                    })
                }
                _ => {}
            }
        }
        events.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).expect("finite timestamps"));

        let mut adjacency: Vec<Vec<Incidence<T>>> = vec![Vec::new(); num_nodes];
        for (idx, e) in events.iter().enumerate() {
            adjacency[e.src].push(Incidence {
                time: e.timestamp,
                other: e.dst,
                event: idx,
            });
            adjacency[e.dst].push(Incidence {
                time: e.timestamp,
                other: e.src,
                event: idx,
            });
        }
        let t_min = events.first().map_or(T::zero(), |e| e.timestamp);
        let t_max = events.last().map_or(T::zero(), |e| e.timestamp);
        Ok(Self {
            events,
            adjacency,
            node_features: vec![Vec::new(); num_nodes],
            feature_dim: 0,
            original_ids: (0..num_nodes).map(|i| i.to_string()).collect(),
            allow_self_loops,
            t_min,
            t_max,
        })
    }

    /// Replaces node features; every row must have the same dimension.
    pub fn with_node_features(mut self, features: Vec<Vec<T>>) -> Result<Self> {
        if features.len() != self.num_nodes() {
            return Err(CodclError::Dimension {
                expected: self.num_nodes(),
                got: features.len(),
            });
        }
        let dim = features.first().map_or(0, Vec::len);
        for row in &features {
            if row.len() != dim {
                return Err(CodclError::Dimension {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(CodclError::Validation {
                    line: 0,
                    message: "non-finite node feature".into(),
                });
            }
        }
        self.node_features = features;
        self.feature_dim = dim;
        Ok(self)
    }

    /// Restores the external node names, one per node.
    pub fn with_original_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.num_nodes() {
            return Err(CodclError::Dimension {
                expected: self.num_nodes(),
                got: ids.len(),
            });
        }
        self.original_ids = ids;
        Ok(self)
    }

    pub fn original_ids(&self) -> &[String] {
        &self.original_ids
    }

    /// Same node universe and node features, keeping only events accepted by `keep`.
    pub fn restrict(&self, mut keep: impl FnMut(usize, &TemporalEvent<T>) -> bool) -> Self {
        let events: Vec<_> = self
            .events
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| e.clone())
            .collect();
        let mut g = Self::from_events(events, self.num_nodes(), self.allow_self_loops)
            .expect("subset of a valid graph is valid");
        g.node_features = self.node_features.clone();
        g.feature_dim = self.feature_dim;
        g.original_ids = self.original_ids.clone();
        g
    }

    pub fn events(&self) -> &[TemporalEvent<T>] {
        &self.events
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn edge_feature_dim(&self) -> usize {
        self.events.first().map_or(0, |e| e.features.len())
    }

    pub fn node_feature(&self, u: NodeId) -> Result<&[T]> {
        self.check(u)?;
        Ok(&self.node_features[u])
    }

    pub fn original_id(&self, u: NodeId) -> Option<&str> {
        self.original_ids.get(u).map(String::as_str)
    }

    pub fn t_min(&self) -> T {
        self.t_min
    }

    pub fn t_max(&self) -> T {
        self.t_max
    }

    pub fn allows_self_loops(&self) -> bool {
        self.allow_self_loops
    }

    /// Full incidence list of `u`, sorted by time.
    pub fn incidences(&self, u: NodeId) -> Result<&[Incidence<T>]> {
        self.check(u)?;
        Ok(&self.adjacency[u])
    }

    #[inline]
    fn check(&self, u: NodeId) -> Result<()> {
        if u < self.adjacency.len() {
            Ok(())
        } else {
            Err(CodclError::UnknownNode(u))
        }
    }

    /// Incidences of `u` with time in `[lo, hi]`; `lo = None` means unbounded.
    pub fn incidences_in(&self, u: NodeId, lo: Option<T>, hi: T) -> Result<&[Incidence<T>]> {
        self.check(u)?;
        let adj = &self.adjacency[u];
        let end = adj.partition_point(|x| x.time <= hi);
        let start = match lo {
            Some(lo) => adj[..end].partition_point(|x| x.time < lo),
            None => 0,
        };
        Ok(&adj[start..end])
    }

    fn window_bounds(t: T, delta: T) -> Result<Option<T>> {
        if delta < T::zero() || !delta.is_finite() {
            return Err(CodclError::config("time window must be finite and non-negative"));
        }
        Ok(if delta == T::zero() { None } else { Some(t - delta) })
    }

    /// Nodes that interacted with `u` at or before `t` (`delta = 0`), or within `[t - delta, t]`.
    pub fn neighbors_window(&self, u: NodeId, t: T, delta: T) -> Result<BTreeSet<NodeId>> {
        let lo = Self::window_bounds(t, delta)?;
        Ok(self.incidences_in(u, lo, t)?.iter().map(|x| x.other).collect())
    }

    /// Same as [`neighbors_window`](Self::neighbors_window) as a sorted, deduplicated vector.
    pub fn neighbor_vec(&self, u: NodeId, t: T, delta: T) -> Result<Vec<NodeId>> {
        let lo = Self::window_bounds(t, delta)?;
        let mut out: Vec<NodeId> = self.incidences_in(u, lo, t)?.iter().map(|x| x.other).collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Size of the intersection of the two windowed neighborhoods.
    pub fn common_neighbor_count(&self, u: NodeId, v: NodeId, t: T, delta: T) -> Result<usize> {
        let a = self.neighbor_vec(u, t, delta)?;
        let b = self.neighbor_vec(v, t, delta)?;
        Ok(sorted_intersection_len(&a, &b))
    }

    /// Breadth-first expansion to depth `k`; maps each reached node to its hop distance.
    pub fn khop_nodes(&self, u: NodeId, t: T, k: usize, delta: T) -> Result<BTreeMap<NodeId, usize>> {
        self.check(u)?;
        if k == 0 {
            return Err(CodclError::config("hop count must be at least 1"));
        }
        let mut dist: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut frontier = vec![u];
        let mut seen: BTreeSet<NodeId> = BTreeSet::from([u]);
        for hop in 1..=k {
            let mut next = Vec::new();
            for &w in &frontier {
                for x in self.neighbor_vec(w, t, delta)? {
                    if seen.insert(x) {
                        dist.insert(x, hop);
                        next.push(x);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort_unstable();
            frontier = next;
        }
        Ok(dist)
    }

    /// Number of distinct neighbors at or before `t`.
    pub fn degree_at(&self, u: NodeId, t: T) -> Result<usize> {
        Ok(self.neighbor_vec(u, t, T::zero())?.len())
    }

    /// Latest time `<= t` at which `u` and `v` interacted.
    pub fn last_pair_time(&self, u: NodeId, v: NodeId, t: T) -> Result<Option<T>> {
        self.check(v)?;
        Ok(self
            .incidences_in(u, None, t)?
            .iter()
            .rev()
            .find(|x| x.other == v)
            .map(|x| x.time))
    }

    /// Earliest time `<= t` at which `u` and `v` interacted.
    pub fn first_pair_time(&self, u: NodeId, v: NodeId, t: T) -> Result<Option<T>> {
        self.check(v)?;
        Ok(self
            .incidences_in(u, None, t)?
            .iter()
            .find(|x| x.other == v)
            .map(|x| x.time))
    }

    /// Events between `u` and `v` with time `<= t`.
    pub fn pair_event_count(&self, u: NodeId, v: NodeId, t: T) -> Result<usize> {
        self.check(v)?;
        let n = self.incidences_in(u, None, t)?.iter().filter(|x| x.other == v).count();
        // a self-loop is indexed twice under the same node
        Ok(if u == v { n / 2 } else { n })
    }

    /// Whether `u` and `v` interacted at some time in `[lo, hi]` (`lo = None`: unbounded).
    pub fn pair_active_in(&self, u: NodeId, v: NodeId, lo: Option<T>, hi: T) -> Result<bool> {
        self.check(v)?;
        Ok(self.incidences_in(u, lo, hi)?.iter().any(|x| x.other == v))
    }

    /// Time of the latest event of `u` at or before `t`.
    pub fn last_event_time(&self, u: NodeId, t: T) -> Result<Option<T>> {
        Ok(self.incidences_in(u, None, t)?.last().map(|x| x.time))
    }

    /// True iff `u` has at least one event in the closed window `[lo, hi]`.
    pub fn node_active_in(&self, u: NodeId, lo: T, hi: T) -> Result<bool> {
        Ok(!self.incidences_in(u, Some(lo), hi)?.is_empty())
    }

    /// Up to `k` most recent incidences of `u` strictly before `t`, newest first.
    pub fn recent_before(&self, u: NodeId, t: T, k: usize) -> Result<impl Iterator<Item = &Incidence<T>>> {
        self.check(u)?;
        let adj = &self.adjacency[u];
        let end = adj.partition_point(|x| x.time < t);
        Ok(adj[..end].iter().rev().take(k))
    }

    /// Nodes with at least one event accepted by the filter, in ascending order.
    pub fn active_nodes<'a>(&self, events: impl IntoIterator<Item = &'a TemporalEvent<T>>) -> Vec<NodeId> {
        let mut seen = vec![false; self.num_nodes()];
        for e in events {
            seen[e.src] = true;
            seen[e.dst] = true;
        }
        seen.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }
}

/// Length of the intersection of two sorted, deduplicated slices.
pub fn sorted_intersection_len(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}
