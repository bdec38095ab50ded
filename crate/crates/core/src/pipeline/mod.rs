//! Splits, evaluation and the end-to-end experiment driver.
//!
//! [`run_experiment`] executes split, treatment fitting, augmentation,
//! training with validation-based early stopping, and test evaluation in the
//! transductive and inductive settings. Every stage below the split sees the
//! training events only; the per-stage functions are public so callers can
//! run (and cache) stages individually.

mod metrics;
mod split;
mod synth;

pub use metrics::{auc_roc, average_precision};
pub use split::{
    chronological_split, degree_bucket_features, make_inductive_mask, mix_seed, node_universe, sample_negatives,
    split_indices, subgraph, Part, SplitSpec, DEGREE_BUCKETS,
};
pub use synth::{generate_synthetic, ArmCounts, SyntheticConfig, SyntheticData};

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cfsearch::{Augmentation, CounterfactualAssignment, CounterfactualSearch, SearchConfig, SelectionEncoder, SelectionPolicy};
use crate::error::{CodclError, Result};
use crate::model::{score_queries, Batch, CfMode, Example, ModelDims, ModelParameters, TrainConfig, Trainer};
use crate::scalar::Scalar;
use crate::tgraph::{NodeId, TemporalEvent, TemporalGraph};
use crate::treatment::{FittedTreatment, TreatmentAssignment, TreatmentConfig};

/// Backbone sizes; the feature dimension comes from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub time_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            time_dim: 16,
            hidden_dim: 128,
            embed_dim: 64,
        }
    }
}

impl ModelShape {
    pub fn dims(&self, feature_dim: usize) -> ModelDims {
        ModelDims {
            feature_dim,
            time_dim: self.time_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub split: [f64; 3],
    pub inductive_fraction: f64,
    /// Seeds the inductive mask and the evaluation negatives.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: [0.7, 0.15, 0.15],
            inductive_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig<T> {
    pub treatment: TreatmentConfig<T>,
    pub search: SearchConfig<T>,
    /// Output width of the selection encoder; zero uses raw features.
    pub selection_dim: usize,
    pub model: ModelShape,
    pub train: TrainConfig<T>,
    pub eval: EvalConfig,
    /// Training seeds; the report aggregates over them.
    pub seeds: Vec<u64>,
    /// Worker threads for augmentation and scoring; zero uses all cores.
    pub workers: usize,
}

impl<T: Scalar> Default for ExperimentConfig<T> {
    fn default() -> Self {
        Self {
            treatment: TreatmentConfig::default(),
            search: SearchConfig::default(),
            selection_dim: 64,
            model: ModelShape::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            seeds: vec![0],
            workers: 0,
        }
    }
}

impl<T: Scalar> ExperimentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.treatment.validate()?;
        self.train.validate()?;
        if self.search.k_max == 0 {
            return Err(CodclError::config("search.k_max must be >= 1"));
        }
        if !(self.search.delta >= T::zero()) || !(self.search.state_window >= T::zero()) {
            return Err(CodclError::config("search windows must be >= 0"));
        }
        if self.model.time_dim == 0 || self.model.hidden_dim == 0 || self.model.embed_dim == 0 {
            return Err(CodclError::config("model sizes must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(CodclError::config("train.seeds must not be empty"));
        }
        let s = self.eval.split;
        if s.iter().any(|r| !(*r > 0.0)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CodclError::config("eval.split must hold three positive ratios summing to 1"));
        }
        if !(self.eval.inductive_fraction > 0.0 && self.eval.inductive_fraction < 1.0) {
            return Err(CodclError::config("eval.inductive_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    fn search_config(&self, stream: u64) -> SearchConfig<T> {
        let mut s = self.search.clone();
        s.workers = self.workers;
        if self.train.ablations.disable_similarity {
            s.policy = SelectionPolicy::Uniform;
        }
        if stream > 0 {
            s.seed = mix_seed(s.seed, stream);
        }
        s
    }
}

/// Split plus mask over the full event list, as `run_experiment` computes it.
pub fn make_split<T: Scalar>(graph: &TemporalGraph<T>, eval: &EvalConfig) -> Result<SplitSpec<T>> {
    let mut spec = chronological_split(graph.events(), eval.split)?;
    spec.inductive_mask = make_inductive_mask(graph.events(), &spec, eval.inductive_fraction, eval.seed)?;
    Ok(spec)
}

/// Graph views derived from one split.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub spec: SplitSpec<T>,
    /// All events; used for test scoring.
    pub full: TemporalGraph<T>,
    /// Training events that survive the mask.
    pub train: TemporalGraph<T>,
    /// Events before the test boundary; used for validation scoring.
    pub before_test: TemporalGraph<T>,
    pub train_universe: Vec<NodeId>,
    pub val_universe: Vec<NodeId>,
    pub test_universe: Vec<NodeId>,
}

impl<T: Scalar> Prepared<T> {
    /// Featureless graphs get one-hot degree buckets computed from the training events.
    pub fn new(graph: &TemporalGraph<T>, spec: SplitSpec<T>) -> Result<Self> {
        let mut full = graph.clone();
        if full.feature_dim() == 0 {
            let feats = degree_bucket_features(full.num_nodes(), full.events().iter().filter(|e| spec.trains_on(e)));
            full = full.with_node_features(feats)?;
        }
        let train = full.restrict(|_, e| spec.trains_on(e));
        if train.num_events() == 0 {
            return Err(CodclError::Split("no training events".into()));
        }
        let before_test = full.restrict(|_, e| spec.part(e.timestamp) != Part::Test);
        let train_universe = node_universe(train.events());
        let val_universe = node_universe(
            full.events()
                .iter()
                .filter(|e| spec.trains_on(e) || spec.part(e.timestamp) == Part::Val),
        );
        let test_universe = node_universe(full.events());
        Ok(Self {
            spec,
            full,
            train,
            before_test,
            train_universe,
            val_universe,
            test_universe,
        })
    }

    fn events_in(&self, part: Part) -> Vec<&TemporalEvent<T>> {
        self.full.events().iter().filter(|e| self.spec.part(e.timestamp) == part).collect()
    }
}

pub fn fit_treatments<T: Scalar>(
    prep: &Prepared<T>,
    cfg: &ExperimentConfig<T>,
) -> Result<(FittedTreatment<T>, Vec<TreatmentAssignment<T>>)> {
    FittedTreatment::fit(&prep.train, prep.train.events(), cfg.treatment.clone())
}

pub fn selection_encoder<T: Scalar>(feature_dim: usize, cfg: &ExperimentConfig<T>) -> SelectionEncoder<T> {
    if cfg.selection_dim == 0 {
        SelectionEncoder::identity(feature_dim)
    } else {
        SelectionEncoder::seeded(feature_dim, cfg.selection_dim, cfg.search.seed)
    }
}

/// Counterfactuals for every training event. `stream > 0` re-seeds the uniform policy.
pub fn augment<T: Scalar>(
    prep: &Prepared<T>,
    treatments: &FittedTreatment<T>,
    cfg: &ExperimentConfig<T>,
    stream: u64,
) -> Result<Augmentation<T>> {
    let encoder = selection_encoder(prep.train.feature_dim(), cfg);
    CounterfactualSearch::new(&prep.train, treatments, &encoder, cfg.search_config(stream))?.augment(prep.train.events())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the best validation AP.
    pub params: ModelParameters<T>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_ap: Vec<f64>,
    pub final_losses: Option<crate::model::Losses<T>>,
}

fn paired_queries<T: Scalar>(
    positives: &[&TemporalEvent<T>],
    negatives: &[(NodeId, NodeId)],
) -> (Vec<(NodeId, NodeId, T)>, Vec<bool>) {
    let mut q = Vec::with_capacity(2 * positives.len());
    let mut labels = Vec::with_capacity(2 * positives.len());
    for (e, &(u, v)) in positives.iter().zip(negatives) {
        q.push((e.src, e.dst, e.timestamp));
        labels.push(true);
        q.push((u, v, e.timestamp));
        labels.push(false);
    }
    (q, labels)
}

fn triples<T: Scalar>(events: &[&TemporalEvent<T>]) -> Vec<(NodeId, NodeId, T)> {
    events.iter().map(|e| (e.src, e.dst, e.timestamp)).collect()
}

/// Trains from the seed with early stopping on validation AP.
///
/// `augmentation` must align with `prep.train.events()`; it is ignored when
/// counterfactuals are disabled. With `refresh_counterfactuals`, the search is
/// re-run before every epoch after the first.
pub fn train_model<T: Scalar>(
    prep: &Prepared<T>,
    treatments: &FittedTreatment<T>,
    augmentation: Option<&Augmentation<T>>,
    cfg: &ExperimentConfig<T>,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    let tc = &cfg.train;
    let dims = cfg.model.dims(prep.full.feature_dim());
    let mode = tc.ablations.cf_mode();
    let train_events = prep.train.events();
    if let Some(a) = augmentation {
        if a.assignments.len() != train_events.len() {
            return Err(CodclError::config("augmentation does not match the training events"));
        }
    }

    let val = prep.events_in(Part::Val);
    if val.is_empty() {
        return Err(CodclError::Split("validation split is empty".into()));
    }
    let val_neg = sample_negatives(&triples(&val), &prep.val_universe, prep.full.allows_self_loops(), cfg.eval.seed, 1)?;
    let (val_queries, val_labels) = paired_queries(&val, &val_neg);

    let mut trainer = Trainer::new(ModelParameters::init(dims, mix_seed(seed, 0)), tc.clone())?;
    let mut refreshed: Option<Augmentation<T>> = None;
    let batches = train_events.len().div_ceil(tc.batch_size);
    let mut best = (f64::NEG_INFINITY, 0usize, trainer.params().clone());
    let mut val_ap = Vec::new();
    let mut since_best = 0usize;
    let mut final_losses = None;

    for epoch in 0..tc.epochs {
        if mode != CfMode::Off && tc.refresh_counterfactuals && epoch > 0 {
            refreshed = Some(augment(prep, treatments, cfg, epoch as u64)?);
        }
        let assignments: Option<&[CounterfactualAssignment<T>]> = match mode {
            CfMode::Off => None,
            _ => refreshed.as_ref().or(augmentation).map(|a| a.assignments.as_slice()),
        };
        for (b, chunk) in train_events.chunks(tc.batch_size).enumerate() {
            let offset = b * tc.batch_size;
            let pos: Vec<_> = chunk.iter().map(|e| (e.src, e.dst, e.timestamp)).collect();
            let stream = (epoch * batches + b) as u64;
            let neg = sample_negatives(&pos, &prep.train_universe, prep.train.allows_self_loops(), mix_seed(seed, 1), stream)?;
            let examples: Vec<Example<T>> = chunk
                .iter()
                .zip(&neg)
                .enumerate()
                .map(|(i, (e, &(_, nd)))| Example {
                    src: e.src,
                    dst: e.dst,
                    neg_dst: nd,
                    t: e.timestamp,
                    counterfactual: assignments
                        .and_then(|a| {
                            let a = &a[offset + i];
                            a.counterfactual.map(|(cu, cv)| (cu, cv, a.cf_observed))
                        }),
                })
                .collect();
            let batch = Batch::assemble(&prep.train, &examples, tc.recent_k)?;
            final_losses = Some(trainer.step(&batch)?);
        }

        let scores = score_queries(trainer.params(), &prep.before_test, &val_queries, tc.recent_k, tc.use_time())?;
        let scores: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
        let ap = average_precision(&scores, &val_labels)?;
        val_ap.push(ap);
        if ap > best.0 {
            best = (ap, epoch, trainer.params().clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        epochs_run: val_ap.len(),
        best_epoch: best.1,
        val_ap,
        final_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingMetrics {
    pub ap: f64,
    pub auc: f64,
    /// Positive test events in the setting.
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub setting: String,
    pub src: NodeId,
    pub dst: NodeId,
    pub time: f64,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub transductive: Option<SettingMetrics>,
    pub inductive: Option<SettingMetrics>,
    pub scores: Vec<ScoreRecord>,
}

fn setting_metrics(scores: &[f64], labels: &[bool], events: usize) -> Result<Option<SettingMetrics>> {
    if events == 0 {
        return Ok(None);
    }
    Ok(Some(SettingMetrics {
        ap: average_precision(scores, labels)?,
        auc: auc_roc(scores, labels)?,
        events,
    }))
}

/// Scores test events and one negative each. Transductive: both endpoints
/// appear in training; inductive: at least one endpoint is masked.
pub fn evaluate<T: Scalar>(prep: &Prepared<T>, params: &ModelParameters<T>, cfg: &ExperimentConfig<T>) -> Result<Evaluation> {
    let test = prep.events_in(Part::Test);
    if test.is_empty() {
        return Err(CodclError::Split("test split is empty".into()));
    }
    let neg = sample_negatives(&triples(&test), &prep.test_universe, prep.full.allows_self_loops(), cfg.eval.seed, 2)?;
    let (queries, labels) = paired_queries(&test, &neg);
    let raw = score_queries(params, &prep.full, &queries, cfg.train.recent_k, cfg.train.use_time())?;
    let scores: Vec<f64> = raw.iter().map(|s| s.as_f64()).collect();

    let seen: BTreeSet<NodeId> = prep.train_universe.iter().copied().collect();
    let mask = &prep.spec.inductive_mask;
    let mut out = Vec::new();
    let mut records = Vec::new();
    for (name, keep) in [
        ("transductive", &(|e: &TemporalEvent<T>| seen.contains(&e.src) && seen.contains(&e.dst)) as &dyn Fn(&TemporalEvent<T>) -> bool),
        ("inductive", &|e: &TemporalEvent<T>| mask.contains(&e.src) || mask.contains(&e.dst)),
    ] {
        let mut s = Vec::new();
        let mut l = Vec::new();
        let mut count = 0;
        for (i, e) in test.iter().enumerate() {
            if keep(e) {
                count += 1;
                for j in [2 * i, 2 * i + 1] {
                    s.push(scores[j]);
                    l.push(labels[j]);
                    records.push(ScoreRecord {
                        setting: name.to_string(),
                        src: queries[j].0,
                        dst: queries[j].1,
                        time: queries[j].2.as_f64(),
                        score: scores[j],
                        label: u8::from(labels[j]),
                    });
                }
            }
        }
        out.push(setting_metrics(&s, &l, count)?);
    }
    Ok(Evaluation {
        transductive: out[0],
        inductive: out[1],
        scores: records,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub prepare: f64,
    pub treatment: f64,
    pub augment: f64,
    pub train: f64,
    pub eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub theta: f64,
    pub coverage: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_ap: f64,
    pub transductive: Option<SettingMetrics>,
    pub inductive: Option<SettingMetrics>,
    /// Seconds per stage; shared stages are charged to every seed.
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingSummary {
    pub ap: MeanStd,
    pub auc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<SeedReport>,
    pub transductive: Option<SettingSummary>,
    pub inductive: Option<SettingSummary>,
    pub coverage: f64,
}

fn summarize(values: impl Iterator<Item = Option<SettingMetrics>>) -> Option<SettingSummary> {
    let v: Vec<SettingMetrics> = values.flatten().collect();
    Some(SettingSummary {
        ap: MeanStd::of(&v.iter().map(|m| m.ap).collect::<Vec<_>>())?,
        auc: MeanStd::of(&v.iter().map(|m| m.auc).collect::<Vec<_>>())?,
    })
}

impl EvalReport {
    pub fn from_seeds(seeds: Vec<SeedReport>) -> Self {
        let transductive = summarize(seeds.iter().map(|s| s.transductive));
        let inductive = summarize(seeds.iter().map(|s| s.inductive));
        let coverage = seeds.first().map_or(0.0, |s| s.coverage);
        Self {
            seeds,
            transductive,
            inductive,
            coverage,
        }
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.seeds.iter_mut().for_each(|s| s.timings = StageTimings::default());
        r
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt_setting = |out: &mut String, name: &str, s: &Option<SettingSummary>| {
            match s {
                Some(s) => {
                    let _ = writeln!(out, "{name}.ap: {:.6} ± {:.6}", s.ap.mean, s.ap.std);
                    let _ = writeln!(out, "{name}.auc: {:.6} ± {:.6}", s.auc.mean, s.auc.std);
                }
                None => {
                    let _ = writeln!(out, "{name}: n/a");
                }
            }
        };
        let _ = writeln!(out, "seeds: {}", self.seeds.len());
        fmt_setting(&mut out, "transductive", &self.transductive);
        fmt_setting(&mut out, "inductive", &self.inductive);
        let _ = writeln!(out, "coverage: {:.6}", self.coverage);
        for s in &self.seeds {
            let p = format!("seed.{}", s.seed);
            let _ = writeln!(out, "{p}.theta: {}", s.theta);
            let _ = writeln!(out, "{p}.epochs: {}", s.epochs);
            let _ = writeln!(out, "{p}.best_val_ap: {:.6}", s.best_val_ap);
            for (name, m) in [("transductive", s.transductive), ("inductive", s.inductive)] {
                match m {
                    Some(m) => {
                        let _ = writeln!(out, "{p}.{name}.ap: {:.6}", m.ap);
                        let _ = writeln!(out, "{p}.{name}.auc: {:.6}", m.auc);
                        let _ = writeln!(out, "{p}.{name}.events: {}", m.events);
                    }
                    None => {
                        let _ = writeln!(out, "{p}.{name}: n/a");
                    }
                }
            }
            let t = s.timings;
            if t == StageTimings::default() {
                continue;
            }
            let _ = writeln!(
                out,
                "{p}.seconds: prepare={:.3} treatment={:.3} augment={:.3} train={:.3} eval={:.3}",
                t.prepare, t.treatment, t.augment, t.train, t.eval
            );
        }
        out
    }

    /// One JSON object per (seed, setting).
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.seeds {
            for (name, m) in [("transductive", s.transductive), ("inductive", s.inductive)] {
                let rec = serde_json::json!({
                    "seed": s.seed,
                    "setting": name,
                    "applicable": m.is_some(),
                    "ap": m.map(|m| m.ap),
                    "auc": m.map(|m| m.auc),
                    "events": m.map_or(0, |m| m.events),
                    "theta": s.theta,
                    "coverage": s.coverage,
                    "epochs": s.epochs,
                    "best_val_ap": s.best_val_ap,
                    "timings": s.timings,
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Per-seed artifacts alongside the report.
#[derive(Debug, Clone)]
pub struct SeedRun<T> {
    pub seed: u64,
    pub outcome: TrainOutcome<T>,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun<T> {
    pub report: EvalReport,
    pub spec: SplitSpec<T>,
    pub treatments: FittedTreatment<T>,
    pub augmentation: Option<Augmentation<T>>,
    pub runs: Vec<SeedRun<T>>,
}

/// Runs `f` on a pool of `workers` threads, or the global pool for 0.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CodclError::config(format!("worker pool: {e}")))?
            .install(f)
    }
}

/// Trains and evaluates every configured seed on prepared stages.
///
/// `shared` carries the timings of the stages that ran before; train and eval
/// times are filled in per seed.
pub fn train_seeds<T: Scalar>(
    prep: &Prepared<T>,
    treatments: &FittedTreatment<T>,
    augmentation: Option<&Augmentation<T>>,
    cfg: &ExperimentConfig<T>,
    shared: StageTimings,
) -> Result<(EvalReport, Vec<SeedRun<T>>)> {
    let coverage = augmentation.map_or(0.0, |a| a.summary.coverage);
    let mut seeds = Vec::new();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let clock = Instant::now();
        let outcome = train_model(prep, treatments, augmentation, cfg, seed).map_err(|e| e.in_stage("train"))?;
        let t_train = clock.elapsed().as_secs_f64();
        let clock = Instant::now();
        let evaluation = evaluate(prep, &outcome.params, cfg).map_err(|e| e.in_stage("eval"))?;
        seeds.push(SeedReport {
            seed,
            theta: treatments.threshold().as_f64(),
            coverage,
            epochs: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            best_val_ap: outcome.val_ap[outcome.best_epoch],
            transductive: evaluation.transductive,
            inductive: evaluation.inductive,
            timings: StageTimings {
                train: t_train,
                eval: clock.elapsed().as_secs_f64(),
                ..shared
            },
        });
        runs.push(SeedRun { seed, outcome, evaluation });
    }
    Ok((EvalReport::from_seeds(seeds), runs))
}

/// Runs every stage on a precomputed split.
pub fn run_with_split<T: Scalar>(
    graph: &TemporalGraph<T>,
    spec: SplitSpec<T>,
    cfg: &ExperimentConfig<T>,
) -> Result<ExperimentRun<T>> {
    cfg.validate()?;
    with_workers(cfg.workers, || {
        let clock = Instant::now();
        let prep = Prepared::new(graph, spec).map_err(|e| e.in_stage("split"))?;
        let t_prepare = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let (treatments, _) = fit_treatments(&prep, cfg).map_err(|e| e.in_stage("treatment"))?;
        let t_treat = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let augmentation = if cfg.train.ablations.disable_counterfactual {
            None
        } else {
            Some(augment(&prep, &treatments, cfg, 0).map_err(|e| e.in_stage("augment"))?)
        };
        let t_aug = clock.elapsed().as_secs_f64();
        let timings = StageTimings {
            prepare: t_prepare,
            treatment: t_treat,
            augment: t_aug,
            ..Default::default()
        };
        let (report, runs) = train_seeds(&prep, &treatments, augmentation.as_ref(), cfg, timings)?;
        Ok(ExperimentRun {
            report,
            spec: prep.spec,
            treatments,
            augmentation,
            runs,
        })
    })
}

/// Split, treatments, augmentation, training and evaluation for every seed.
pub fn run_experiment_detailed<T: Scalar>(graph: &TemporalGraph<T>, cfg: &ExperimentConfig<T>) -> Result<ExperimentRun<T>> {
    cfg.validate()?;
    let spec = make_split(graph, &cfg.eval).map_err(|e| e.in_stage("split"))?;
    run_with_split(graph, spec, cfg)
}

pub fn run_experiment<T: Scalar>(graph: &TemporalGraph<T>, cfg: &ExperimentConfig<T>) -> Result<EvalReport> {
    Ok(run_experiment_detailed(graph, cfg)?.report)
}
