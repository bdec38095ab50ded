//! Binary treatment variables for node pairs.
//!
//! The default treatment compares the temporal common-neighbor count of a pair
//! against a global nearest-rank percentile threshold fitted on training
//! events. Six alternative treatments (common neighbors, degree similarity,
//! temporal proximity, activity synchrony, interaction frequency, temporal
//! k-core) are available for sensitivity analysis.
//!
//! Every statistic is oriented so that a pair is treated iff
//! `statistic >= threshold`; kinds that naturally treat *small* gaps
//! (degree similarity, temporal proximity) store the negated gap.

use std::cell::{OnceCell, RefCell};
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CodclError, Result};
use crate::scalar::Scalar;
use crate::tgraph::{sorted_intersection_len, NodeId, TemporalEvent, TemporalGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntensityMode {
    Cumulative,
    ExponentialDecay,
}

/// Statistic gated by the dynamic-interaction treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndicatorStat {
    CommonNeighbors,
    Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TreatmentKind {
    DynamicInteraction,
    CommonNeighbors,
    DegreeSimilarity,
    TemporalProximity,
    ActivitySynchrony,
    InteractionFrequency,
    KCoreTemporal,
}

impl TreatmentKind {
    pub const ALL: [TreatmentKind; 7] = [
        TreatmentKind::DynamicInteraction,
        TreatmentKind::CommonNeighbors,
        TreatmentKind::DegreeSimilarity,
        TreatmentKind::TemporalProximity,
        TreatmentKind::ActivitySynchrony,
        TreatmentKind::InteractionFrequency,
        TreatmentKind::KCoreTemporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TreatmentKind::DynamicInteraction => "dynamic-interaction",
            TreatmentKind::CommonNeighbors => "common-neighbors",
            TreatmentKind::DegreeSimilarity => "degree-similarity",
            TreatmentKind::TemporalProximity => "temporal-proximity",
            TreatmentKind::ActivitySynchrony => "activity-synchrony",
            TreatmentKind::InteractionFrequency => "interaction-frequency",
            TreatmentKind::KCoreTemporal => "k-core-temporal",
        }
    }
}

impl fmt::Display for TreatmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TreatmentKind {
    type Err = CodclError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        TreatmentKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| CodclError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentConfig<T> {
    /// Neighborhood window; zero means full history.
    pub delta: T,
    pub intensity_mode: IntensityMode,
    /// Decay rate for [`IntensityMode::ExponentialDecay`].
    pub lambda: T,
    /// Percentile in `(0, 100)`.
    pub percentile: f64,
    pub indicator: IndicatorStat,
    pub kind: TreatmentKind,
    /// Fit the threshold on the intensity distribution even when the indicator
    /// is the common-neighbor count (the units then differ).
    pub literal_threshold: bool,
    pub degree_gap: usize,
    /// `None`: 10% of the graph's time span.
    pub proximity_threshold: Option<T>,
    /// `None`: median pair frequency over the fitting graph.
    pub frequency_threshold: Option<T>,
    pub core_order: usize,
}

impl<T: Scalar> Default for TreatmentConfig<T> {
    fn default() -> Self {
        Self {
            delta: T::zero(),
            intensity_mode: IntensityMode::Cumulative,
            lambda: T::zero(),
            percentile: 50.0,
            indicator: IndicatorStat::CommonNeighbors,
            kind: TreatmentKind::DynamicInteraction,
            literal_threshold: false,
            degree_gap: 2,
            proximity_threshold: None,
            frequency_threshold: None,
            core_order: 2,
        }
    }
}

impl<T: Scalar> TreatmentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < T::zero() {
            return Err(CodclError::config("treatment.lambda must be finite and >= 0"));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(CodclError::config("treatment.p must lie in (0, 100)"));
        }
        if !self.delta.is_finite() || self.delta < T::zero() {
            return Err(CodclError::config("treatment.delta must be finite and >= 0"));
        }
        if self.core_order == 0 {
            return Err(CodclError::config("treatment.core_order must be >= 1"));
        }
        Ok(())
    }
}

/// Treatment of one pair at one query time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentAssignment<T> {
    pub u: NodeId,
    pub v: NodeId,
    pub t: T,
    pub statistic: T,
    pub threshold: T,
    pub treatment: bool,
}

/// Pair interaction intensity over the whole graph history, cumulative or
/// exponentially decayed toward the graph's maximum timestamp.
pub fn interaction_intensity<T: Scalar>(
    u: NodeId,
    v: NodeId,
    graph: &TemporalGraph<T>,
    config: &TreatmentConfig<T>,
) -> Result<T> {
    graph.incidences(v)?;
    let t_max = graph.t_max();
    let mut last_event = usize::MAX;
    let mut total = T::zero();
    for inc in graph.incidences(u)? {
        // self-loops appear twice in a row under the same event index
        if inc.other != v || inc.event == last_event {
            continue;
        }
        last_event = inc.event;
        let w = graph.events()[inc.event].weight;
        total += match config.intensity_mode {
            IntensityMode::Cumulative => w,
            IntensityMode::ExponentialDecay => w * (-config.lambda * (t_max - inc.time)).exp(),
        };
    }
    Ok(total)
}

/// Nearest-rank percentile: the element at 0-based index `ceil(p/100 * n) - 1`
/// of the ascending sort.
pub fn global_threshold<T: Scalar>(statistics: &[T], p: f64) -> Result<T> {
    if statistics.is_empty() {
        return Err(CodclError::Empty("threshold over an empty multiset".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(CodclError::config("percentile must lie in (0, 100]"));
    }
    if statistics.iter().any(|x| x.is_nan()) {
        return Err(CodclError::config("NaN statistic"));
    }
    let mut sorted = statistics.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Alternative-treatment thresholds after defaults are resolved against a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedThresholds<T> {
    pub proximity: T,
    pub frequency: T,
}

impl<T: Scalar> ResolvedThresholds<T> {
    pub fn resolve(graph: &TemporalGraph<T>, config: &TreatmentConfig<T>) -> Self {
        let proximity = config
            .proximity_threshold
            .unwrap_or_else(|| T::lit(0.1) * (graph.t_max() - graph.t_min()));
        let frequency = config
            .frequency_threshold
            .unwrap_or_else(|| median_pair_frequency(graph));
        Self { proximity, frequency }
    }
}

fn pair_frequency<T: Scalar>(count: usize, span: T) -> T {
    if count == 0 {
        T::neg_infinity()
    } else if span <= T::zero() {
        T::infinity()
    } else {
        T::from_usize_lossy(count) / span
    }
}

/// Median over distinct pairs of `count / (t_max - first interaction)`.
fn median_pair_frequency<T: Scalar>(graph: &TemporalGraph<T>) -> T {
    let mut pairs: HashMap<(NodeId, NodeId), (usize, T)> = HashMap::new();
    for e in graph.events() {
        let key = (e.src.min(e.dst), e.src.max(e.dst));
        pairs.entry(key).or_insert((0, e.timestamp)).0 += 1;
    }
    let freqs: Vec<T> = pairs
        .values()
        .map(|&(count, first)| pair_frequency(count, graph.t_max() - first))
        .collect();
    global_threshold(&freqs, 50.0).unwrap_or(T::zero())
}

/// Core numbers of the undirected snapshot formed by events at or before `t`.
fn core_numbers<T: Scalar>(graph: &TemporalGraph<T>, t: T) -> Result<Vec<usize>> {
    let n = graph.num_nodes();
    let mut adj: Vec<Vec<NodeId>> = Vec::with_capacity(n);
    for u in 0..n {
        let mut nb = graph.neighbor_vec(u, t, T::zero())?;
        nb.retain(|&w| w != u);
        adj.push(nb);
    }
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut core = vec![0usize; n];
    let mut removed = vec![false; n];
    let mut queue: BTreeSet<(usize, NodeId)> = (0..n).map(|u| (degree[u], u)).collect();
    let mut current = 0;
    while let Some((d, u)) = queue.pop_first() {
        current = current.max(d);
        core[u] = current;
        removed[u] = true;
        for &w in &adj[u] {
            if !removed[w] {
                queue.remove(&(degree[w], w));
                degree[w] -= 1;
                queue.insert((degree[w], w));
            }
        }
    }
    Ok(core)
}

/// Treatment rule fitted on training events: configuration plus the thresholds
/// derived from the training distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTreatment<T> {
    pub config: TreatmentConfig<T>,
    /// Global threshold θ for the dynamic-interaction kind.
    pub theta: T,
    pub thresholds: ResolvedThresholds<T>,
}

/// Query time for an event at `t`: everything strictly before it.
#[inline]
pub fn event_cutoff<T: Scalar>(t: T) -> T {
    t.pred()
}

impl<T: Scalar> FittedTreatment<T> {
    /// Builds a rule with an externally supplied θ.
    pub fn with_theta(graph: &TemporalGraph<T>, config: TreatmentConfig<T>, theta: T) -> Result<Self> {
        config.validate()?;
        let thresholds = ResolvedThresholds::resolve(graph, &config);
        Ok(Self {
            config,
            theta,
            thresholds,
        })
    }

    /// Fits θ over `events` (evaluated strictly before each event's timestamp)
    /// and assigns a treatment to every event.
    pub fn fit(
        graph: &TemporalGraph<T>,
        events: &[TemporalEvent<T>],
        config: TreatmentConfig<T>,
    ) -> Result<(Self, Vec<TreatmentAssignment<T>>)> {
        let mut fitted = Self::with_theta(graph, config, T::zero())?;
        if events.is_empty() {
            return Err(CodclError::Empty("no training events to fit a treatment on".into()));
        }
        if fitted.config.kind == TreatmentKind::DynamicInteraction {
            let basis = if fitted.config.literal_threshold {
                IndicatorStat::Intensity
            } else {
                fitted.config.indicator
            };
            let stats: Vec<T> = events
                .par_iter()
                .map(|e| fitted.slice(graph, event_cutoff(e.timestamp)).indicator(basis, e.src, e.dst))
                .collect::<Result<_>>()?;
            fitted.theta = global_threshold(&stats, fitted.config.percentile)?;
        }
        let threshold = fitted.threshold();
        let assignments = events
            .par_iter()
            .map(|e| {
                let t = event_cutoff(e.timestamp);
                let statistic = fitted.slice(graph, t).statistic(e.src, e.dst)?;
                Ok(TreatmentAssignment {
                    u: e.src,
                    v: e.dst,
                    t,
                    statistic,
                    threshold,
                    treatment: statistic >= threshold,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((fitted, assignments))
    }

    /// Threshold the oriented statistic of the configured kind is compared to.
    pub fn threshold(&self) -> T {
        let c = &self.config;
        match c.kind {
            TreatmentKind::DynamicInteraction => self.theta,
            TreatmentKind::CommonNeighbors => T::lit(2.0),
            TreatmentKind::DegreeSimilarity => -T::from_usize_lossy(c.degree_gap),
            TreatmentKind::TemporalProximity => -self.thresholds.proximity,
            TreatmentKind::ActivitySynchrony => T::one(),
            TreatmentKind::InteractionFrequency => self.thresholds.frequency,
            TreatmentKind::KCoreTemporal => T::from_usize_lossy(c.core_order),
        }
    }

    /// Per-query-time evaluator; caches neighbor sets across the pairs it is asked about.
    pub fn slice<'a>(&'a self, graph: &'a TemporalGraph<T>, t: T) -> TreatmentSlice<'a, T> {
        TreatmentSlice {
            fitted: self,
            graph,
            t,
            windowed: RefCell::new(HashMap::new()),
            full: RefCell::new(HashMap::new()),
            cores: OnceCell::new(),
        }
    }

    pub fn treatment(&self, graph: &TemporalGraph<T>, u: NodeId, v: NodeId, t: T) -> Result<bool> {
        self.slice(graph, t).treatment(u, v)
    }

    pub fn statistic(&self, graph: &TemporalGraph<T>, u: NodeId, v: NodeId, t: T) -> Result<T> {
        self.slice(graph, t).statistic(u, v)
    }
}

/// Treatment evaluation at a fixed query time `t` (inclusive cutoff).
pub struct TreatmentSlice<'a, T> {
    fitted: &'a FittedTreatment<T>,
    graph: &'a TemporalGraph<T>,
    t: T,
    windowed: RefCell<HashMap<NodeId, Vec<NodeId>>>,
    full: RefCell<HashMap<NodeId, Vec<NodeId>>>,
    cores: OnceCell<Vec<usize>>,
}

impl<T: Scalar> TreatmentSlice<'_, T> {
    pub fn time(&self) -> T {
        self.t
    }

    fn common(&self, u: NodeId, v: NodeId, delta: T) -> Result<usize> {
        let cache = if delta == T::zero() { &self.full } else { &self.windowed };
        let mut cache = cache.borrow_mut();
        for w in [u, v] {
            if let std::collections::hash_map::Entry::Vacant(slot) = cache.entry(w) {
                slot.insert(self.graph.neighbor_vec(w, self.t, delta)?);
            }
        }
        Ok(sorted_intersection_len(&cache[&u], &cache[&v]))
    }

    fn indicator(&self, stat: IndicatorStat, u: NodeId, v: NodeId) -> Result<T> {
        match stat {
            IndicatorStat::CommonNeighbors => Ok(T::from_usize_lossy(self.common(u, v, self.fitted.config.delta)?)),
            IndicatorStat::Intensity => interaction_intensity(u, v, self.graph, &self.fitted.config),
        }
    }

    /// Oriented statistic of the configured treatment kind.
    pub fn statistic(&self, u: NodeId, v: NodeId) -> Result<T> {
        self.kind_statistic(self.fitted.config.kind, u, v)
    }

    pub fn kind_statistic(&self, kind: TreatmentKind, u: NodeId, v: NodeId) -> Result<T> {
        let g = self.graph;
        let c = &self.fitted.config;
        let t = self.t;
        Ok(match kind {
            TreatmentKind::DynamicInteraction => self.indicator(c.indicator, u, v)?,
            TreatmentKind::CommonNeighbors => T::from_usize_lossy(self.common(u, v, T::zero())?),
            TreatmentKind::DegreeSimilarity => {
                let du = g.degree_at(u, t)? as i64;
                let dv = g.degree_at(v, t)? as i64;
                // without history there is no degree to compare
                if du == 0 || dv == 0 {
                    T::neg_infinity()
                } else {
                    -T::lit((du - dv).abs() as f64)
                }
            }
            TreatmentKind::TemporalProximity => match (g.last_event_time(u, t)?, g.last_event_time(v, t)?) {
                (Some(a), Some(b)) => -(a - b).abs(),
                _ => T::neg_infinity(),
            },
            TreatmentKind::ActivitySynchrony => {
                let lo = if c.delta == T::zero() { None } else { Some(t - c.delta) };
                let active = !g.incidences_in(u, lo, t)?.is_empty() && !g.incidences_in(v, lo, t)?.is_empty();
                if active {
                    T::one()
                } else {
                    T::zero()
                }
            }
            TreatmentKind::InteractionFrequency => {
                let count = g.pair_event_count(u, v, t)?;
                let span = g.first_pair_time(u, v, t)?.map_or(T::zero(), |first| t - first);
                pair_frequency(count, span)
            }
            TreatmentKind::KCoreTemporal => {
                g.incidences(u)?;
                g.incidences(v)?;
                let cores = match self.cores.get() {
                    Some(c) => c,
                    None => {
                        let computed = core_numbers(g, t)?;
                        self.cores.get_or_init(|| computed)
                    }
                };
                T::from_usize_lossy(cores[u].min(cores[v]))
            }
        })
    }

    pub fn treatment(&self, u: NodeId, v: NodeId) -> Result<bool> {
        Ok(self.statistic(u, v)? >= self.fitted.threshold())
    }
}

/// Dynamic-interaction treatment against an explicit θ.
pub fn binary_treatment<T: Scalar>(
    u: NodeId,
    v: NodeId,
    t: T,
    theta: T,
    graph: &TemporalGraph<T>,
    config: &TreatmentConfig<T>,
) -> Result<bool> {
    let mut config = config.clone();
    config.kind = TreatmentKind::DynamicInteraction;
    let fitted = FittedTreatment::with_theta(graph, config, theta)?;
    fitted.treatment(graph, u, v, t)
}

/// One of the six alternative treatments; thresholds left unset in `config`
/// are resolved against `graph`.
pub fn alternative_treatment<T: Scalar>(
    kind: TreatmentKind,
    u: NodeId,
    v: NodeId,
    t: T,
    graph: &TemporalGraph<T>,
    config: &TreatmentConfig<T>,
) -> Result<bool> {
    if kind == TreatmentKind::DynamicInteraction {
        return Err(CodclError::UnknownKind(format!("{kind} is not an alternative treatment")));
    }
    let mut config = config.clone();
    config.kind = kind;
    let fitted = FittedTreatment::with_theta(graph, config, T::zero())?;
    fitted.treatment(graph, u, v, t)
}

/// Fits θ once over the training events and assigns every event.
pub fn assign_all<T: Scalar>(
    edges: &[TemporalEvent<T>],
    graph: &TemporalGraph<T>,
    config: &TreatmentConfig<T>,
) -> Result<(Vec<TreatmentAssignment<T>>, T)> {
    let (fitted, assignments) = FittedTreatment::fit(graph, edges, config.clone())?;
    Ok((assignments, fitted.threshold()))
}
