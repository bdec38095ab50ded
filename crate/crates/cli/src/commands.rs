use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use codcl::cfsearch::{AugmentSummary, Augmentation, CounterfactualAssignment};
use codcl::config::RunConfig;
use codcl::model::{export_json, read_checkpoint, write_checkpoint};
use codcl::pipeline::{
    augment, evaluate, fit_treatments, generate_synthetic, make_split, train_seeds, with_workers, EvalReport,
    ExperimentConfig, Prepared, ScoreRecord, SeedReport, SettingSummary, StageTimings,
};
use codcl::tgraph::ingest_path;
use codcl::treatment::{event_cutoff, FittedTreatment};
use codcl::{Graph, NodeId, Params, Treatments};
use serde_json::json;

use crate::artifacts::{
    augment_key, chain, config_text, file_hash, load_graph, sha256_hex, train_key, treat_key, GraphCache, Manifest,
    OutDir, AUGMENT, GRAPH, TREATMENTS,
};

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: OutDir,
    pub seed: Option<u64>,
    pub emit_csv: bool,
    pub export_json: bool,
}

impl Ctx {
    fn exp(&self) -> &ExperimentConfig<f64> {
        &self.cfg.experiment
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))
}

fn graph_summary(g: &Graph) -> String {
    format!(
        "{} events, {} nodes\ntime span: {} .. {}\nnode features: {}\nedge features: {}\n",
        g.num_events(),
        g.num_nodes(),
        g.t_min(),
        g.t_max(),
        g.feature_dim(),
        g.edge_feature_dim()
    )
}

fn save_graph(ctx: &Ctx, m: &mut Manifest, g: &Graph) -> Result<()> {
    let bytes = serde_json::to_vec(&GraphCache::of(g)?)?;
    m.key = sha256_hex(&bytes);
    ctx.out.write(m, GRAPH, &bytes)
}

pub fn ingest(ctx: &Ctx, path: Option<&Path>) -> Result<()> {
    let path = path
        .or(ctx.cfg.dataset.path.as_deref())
        .ok_or_else(|| anyhow!("no dataset: pass a CSV path or set dataset.path in the config"))?;
    let g: Graph = ingest_path(path, &ctx.cfg.dataset.ingest_config()?).with_context(|| format!("ingesting {}", path.display()))?;
    let mut m = Manifest::new("ingest", String::new(), &ctx.cfg);
    m.inputs.insert("dataset".into(), file_hash(path)?);
    m.extra.insert("dataset_path".into(), json!(path.display().to_string()));
    save_graph(ctx, &mut m, &g)?;
    ctx.out.save_manifest("graph", &m)?;
    print!("{}", graph_summary(&g));
    Ok(())
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let seed = ctx.seed.unwrap_or(0);
    let data = generate_synthetic::<f64>(&ctx.cfg.synth, seed)?;
    let g = data.graph()?;
    let mut m = Manifest::new("synth", String::new(), &ctx.cfg);
    m.seeds = vec![seed];

    let events = csv_bytes(
        &["src", "dst", "t", "label"],
        g.events().iter().map(|e| vec![e.src.to_string(), e.dst.to_string(), e.timestamp.to_string(), e.label.to_string()]),
    )?;
    ctx.out.write(&mut m, "events.csv", &events)?;
    let mut header = vec!["node".to_string(), "community".to_string()];
    header.extend((0..g.feature_dim()).map(|i| format!("f{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let nodes = csv_bytes(
        &header,
        (0..g.num_nodes()).map(|u| {
            let mut row = vec![u.to_string(), data.community[u].to_string()];
            row.extend(data.node_features[u].iter().map(f64::to_string));
            row
        }),
    )?;
    ctx.out.write(&mut m, "nodes.csv", &nodes)?;
    m.extra.insert("treated_rate".into(), json!(data.treated.rate()));
    m.extra.insert("untreated_rate".into(), json!(data.untreated.rate()));
    save_graph(ctx, &mut m, &g)?;
    ctx.out.save_manifest("graph", &m)?;
    print!("{}", graph_summary(&g));
    println!(
        "acceptance rate: treated {:.4}, untreated {:.4} (ratio {:.3})",
        data.treated.rate(),
        data.untreated.rate(),
        data.rate_ratio()
    );
    Ok(())
}

/// Graph, split views and the treatment rule recorded by `treat`.
struct Upstream {
    graph: Graph,
    prep: Prepared<f64>,
    treatments: Treatments,
    treat_key: String,
    treat: Manifest,
}

fn prepare(ctx: &Ctx) -> Result<(Graph, String, Prepared<f64>)> {
    let (graph, graph_key) = load_graph(&ctx.out)?;
    let spec = make_split(&graph, &ctx.exp().eval)?;
    let prep = Prepared::new(&graph, spec)?;
    Ok((graph, graph_key, prep))
}

fn upstream(ctx: &Ctx) -> Result<Upstream> {
    let (graph, graph_key, prep) = prepare(ctx)?;
    let key = treat_key(&graph_key, &ctx.cfg);
    let treat = ctx.out.require("treat", Some(&key))?;
    let theta = treat.extra.get("theta").and_then(serde_json::Value::as_f64).ok_or_else(|| anyhow!("treat manifest has no theta"))?;
    let treatments = FittedTreatment::with_theta(&prep.train, ctx.exp().treatment.clone(), theta)?;
    Ok(Upstream { graph, prep, treatments, treat_key: key, treat })
}

pub fn treat(ctx: &Ctx) -> Result<()> {
    let (graph, graph_key, prep) = prepare(ctx)?;
    let (fitted, assigned) = fit_treatments(&prep, ctx.exp())?;
    let id = |u: NodeId| graph.original_id(u).unwrap_or_default().to_string();
    let rows = prep.train.events().iter().zip(&assigned).map(|(e, a)| {
        vec![
            id(a.u),
            id(a.v),
            e.timestamp.to_string(),
            a.statistic.to_string(),
            a.threshold.to_string(),
            u8::from(a.treatment).to_string(),
        ]
    });
    let bytes = csv_bytes(&["u", "v", "t", "statistic", "theta", "treatment"], rows)?;
    let mut m = Manifest::new("treat", treat_key(&graph_key, &ctx.cfg), &ctx.cfg);
    m.inputs.insert(GRAPH.into(), graph_key);
    ctx.out.write(&mut m, TREATMENTS, &bytes)?;
    let treated = assigned.iter().filter(|a| a.treatment).count();
    m.extra.insert("theta".into(), json!(fitted.theta));
    m.extra.insert("treated".into(), json!(treated));
    m.extra.insert("events".into(), json!(assigned.len()));
    ctx.out.save_manifest("treat", &m)?;
    println!("theta: {}", fitted.theta);
    println!("treated: {treated} of {} training events", assigned.len());
    Ok(())
}

pub fn augment_cmd(ctx: &Ctx) -> Result<()> {
    let up = upstream(ctx)?;
    let exp = ctx.exp();
    let aug = with_workers(exp.workers, || augment(&up.prep, &up.treatments, exp, 0))?;
    let id = |u: NodeId| up.graph.original_id(u).unwrap_or_default().to_string();
    let rows = up.prep.train.events().iter().zip(&aug.assignments).map(|(e, a)| {
        let mut row = vec![id(a.u), id(a.v), e.timestamp.to_string()];
        match a.counterfactual {
            Some((cu, cv)) => row.extend([
                id(cu),
                id(cv),
                a.similarity.to_string(),
                a.hop.to_string(),
                u8::from(a.cf_observed).to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        row
    });
    let bytes = csv_bytes(&["u", "v", "t", "cf_u", "cf_v", "similarity", "hop", "cf_observed"], rows)?;
    let mut m = Manifest::new("augment", augment_key(&up.treat_key, &ctx.cfg), &ctx.cfg);
    m.inputs.insert(TREATMENTS.into(), up.treat.key.clone());
    ctx.out.write(&mut m, AUGMENT, &bytes)?;
    m.extra.insert("summary".into(), serde_json::to_value(&aug.summary)?);
    ctx.out.save_manifest("augment", &m)?;
    print_summary(&aug.summary);
    Ok(())
}

fn print_summary(s: &AugmentSummary) {
    println!("events: {}", s.events);
    println!("coverage: {}", s.coverage);
    println!("mean similarity: {}", s.mean_similarity);
    println!("observed counterfactuals: {}", s.observed);
    let hops: Vec<String> = s.hop_histogram.iter().enumerate().skip(1).map(|(k, n)| format!("{k}:{n}")).collect();
    println!("hops: {}", hops.join(" "));
}

/// Rebuilds the augmentation from `augment.csv`, aligned with the training events.
fn read_augmentation(ctx: &Ctx, up: &Upstream) -> Result<Augmentation<f64>> {
    let ids: HashMap<&str, NodeId> = up.graph.original_ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let node = |s: &str| ids.get(s).copied().ok_or_else(|| anyhow!("augment.csv: unknown node `{s}`"));
    let mut rdr = csv::Reader::from_path(ctx.out.path(AUGMENT))?;
    let events = up.prep.train.events();
    let mut assignments = Vec::with_capacity(events.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let e = events.get(i).ok_or_else(|| anyhow!("augment.csv has more rows than training events"))?;
        if node(&rec[0])? != e.src || node(&rec[1])? != e.dst {
            bail!("augment.csv row {} does not match training event {i}", i + 2);
        }
        let t = event_cutoff(e.timestamp);
        let factual_treatment = up.treatments.treatment(&up.prep.train, e.src, e.dst, t)?;
        let a = if rec[3].is_empty() {
            CounterfactualAssignment {
                u: e.src,
                v: e.dst,
                t,
                counterfactual: None,
                similarity: 0.0,
                hop: 0,
                cf_observed: false,
                factual_treatment,
            }
        } else {
            CounterfactualAssignment {
                u: e.src,
                v: e.dst,
                t,
                counterfactual: Some((node(&rec[3])?, node(&rec[4])?)),
                similarity: rec[5].parse()?,
                hop: rec[6].parse()?,
                cf_observed: &rec[7] == "1",
                factual_treatment,
            }
        };
        assignments.push(a);
    }
    if assignments.len() != events.len() {
        bail!("augment.csv has {} rows for {} training events", assignments.len(), events.len());
    }
    let summary = AugmentSummary::from_assignments(&assignments, ctx.exp().search.k_max);
    Ok(Augmentation { assignments, summary })
}

fn score_rows(graph: &Graph, scores: &[ScoreRecord]) -> Result<Vec<u8>> {
    let id = |u: NodeId| graph.original_id(u).unwrap_or_default().to_string();
    csv_bytes(
        &["setting", "src", "dst", "t", "score", "label"],
        scores
            .iter()
            .map(|s| vec![s.setting.clone(), id(s.src), id(s.dst), s.time.to_string(), s.score.to_string(), s.label.to_string()]),
    )
}

fn checkpoint_name(seed: u64) -> String {
    format!("checkpoint-{seed}.bin")
}

fn write_params(ctx: &Ctx, m: &mut Manifest, seed: u64, params: &Params, checkpoint: bool) -> Result<()> {
    if checkpoint {
        let mut bytes = Vec::new();
        write_checkpoint(params, &mut bytes)?;
        ctx.out.write(m, &checkpoint_name(seed), &bytes)?;
    }
    if ctx.export_json {
        let text = serde_json::to_string_pretty(&export_json(params))? + "\n";
        ctx.out.write(m, &format!("model-{seed}.json"), text.as_bytes())?;
    }
    Ok(())
}

fn write_report(ctx: &Ctx, m: &mut Manifest, stem: &str, report: &EvalReport) -> Result<()> {
    let report = report.without_timings();
    ctx.out.write(m, &format!("{stem}.txt"), report.to_text().as_bytes())?;
    ctx.out.write(m, &format!("{stem}.jsonl"), report.to_jsonl().as_bytes())?;
    Ok(())
}

fn log_timings(report: &EvalReport) {
    for s in &report.seeds {
        let t = s.timings;
        eprintln!("seed {}: train {:.2}s, eval {:.2}s", s.seed, t.train, t.eval);
    }
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let up = upstream(ctx)?;
    let exp = ctx.exp();
    let mut m = Manifest::new("train", train_key(&up.treat_key, &ctx.cfg), &ctx.cfg);
    m.inputs.insert(TREATMENTS.into(), up.treat.key.clone());
    let augmentation = if exp.train.ablations.disable_counterfactual {
        None
    } else {
        let a = ctx.out.require("augment", Some(&augment_key(&up.treat_key, &ctx.cfg)))?;
        m.inputs.insert(AUGMENT.into(), a.key);
        Some(read_augmentation(ctx, &up)?)
    };
    let (report, runs) =
        with_workers(exp.workers, || train_seeds(&up.prep, &up.treatments, augmentation.as_ref(), exp, StageTimings::default()))?;
    log_timings(&report);
    for run in &runs {
        write_params(ctx, &mut m, run.seed, &run.outcome.params, true)?;
    }
    if ctx.emit_csv {
        let scores: Vec<ScoreRecord> = runs.iter().flat_map(|r| r.evaluation.scores.clone()).collect();
        ctx.out.write(&mut m, "train_scores.csv", &score_rows(&up.graph, &scores)?)?;
    }
    write_report(ctx, &mut m, "train_report", &report)?;
    m.extra.insert("report".into(), serde_json::to_value(report.without_timings())?);
    ctx.out.save_manifest("train", &m)?;
    print!("{}", report.without_timings().to_text());
    Ok(())
}

pub fn eval(ctx: &Ctx) -> Result<()> {
    let up = upstream(ctx)?;
    let exp = ctx.exp();
    let trained = ctx.out.require("train", Some(&train_key(&up.treat_key, &ctx.cfg)))?;
    let recorded: EvalReport = serde_json::from_value(
        trained.extra.get("report").cloned().ok_or_else(|| anyhow!("train manifest has no report"))?,
    )?;
    let mut m = Manifest::new("eval", chain(&trained.key, "eval"), &ctx.cfg);
    m.inputs.insert("train".into(), trained.key.clone());
    let mut seeds = Vec::new();
    let mut scores = Vec::new();
    for s in &recorded.seeds {
        let path = ctx.out.path(&checkpoint_name(s.seed));
        let params: Params = read_checkpoint(std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
        let evaluation = with_workers(exp.workers, || evaluate(&up.prep, &params, exp))?;
        write_params(ctx, &mut m, s.seed, &params, false)?;
        scores.extend(evaluation.scores);
        seeds.push(SeedReport {
            transductive: evaluation.transductive,
            inductive: evaluation.inductive,
            ..s.clone()
        });
    }
    let report = EvalReport::from_seeds(seeds);
    if ctx.emit_csv {
        ctx.out.write(&mut m, "scores.csv", &score_rows(&up.graph, &scores)?)?;
    }
    write_report(ctx, &mut m, "report", &report)?;
    ctx.out.save_manifest("eval", &m)?;
    print!("{}", report.to_text());
    Ok(())
}

fn fmt_setting(s: &Option<SettingSummary>) -> [String; 4] {
    match s {
        Some(s) => [s.ap.mean, s.ap.std, s.auc.mean, s.auc.std].map(|x| x.to_string()),
        None => std::array::from_fn(|_| "n/a".to_string()),
    }
}

const METRIC_COLUMNS: [&str; 9] = [
    "transductive_ap",
    "transductive_ap_std",
    "transductive_auc",
    "transductive_auc_std",
    "inductive_ap",
    "inductive_ap_std",
    "inductive_auc",
    "inductive_auc_std",
    "coverage",
];

fn metric_cells(r: &EvalReport) -> Vec<String> {
    let mut v: Vec<String> = fmt_setting(&r.transductive).into_iter().chain(fmt_setting(&r.inductive)).collect();
    v.push(r.coverage.to_string());
    v
}

/// Stage results shared across runs that agree on the relevant config sections.
struct StageCache<'a> {
    prep: &'a Prepared<f64>,
    graph_key: &'a str,
    treatments: HashMap<String, Treatments>,
    augmentations: HashMap<String, Augmentation<f64>>,
}

impl StageCache<'_> {
    fn run(&mut self, run: &RunConfig) -> Result<EvalReport> {
        let exp = &run.experiment;
        let tk = treat_key(self.graph_key, run);
        if !self.treatments.contains_key(&tk) {
            let (fitted, _) = fit_treatments(self.prep, exp)?;
            self.treatments.insert(tk.clone(), fitted);
        }
        let treatments = &self.treatments[&tk];
        let augmentation = if exp.train.ablations.disable_counterfactual {
            None
        } else {
            let ak = augment_key(&tk, run);
            if !self.augmentations.contains_key(&ak) {
                let a = with_workers(exp.workers, || augment(self.prep, treatments, exp, 0))?;
                self.augmentations.insert(ak.clone(), a);
            }
            Some(&self.augmentations[&ak])
        };
        let (report, _) = with_workers(exp.workers, || train_seeds(self.prep, treatments, augmentation, exp, StageTimings::default()))?;
        Ok(report)
    }
}

fn write_table(ctx: &Ctx, m: &mut Manifest, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join("\t") + "\n";
    for r in rows {
        let _ = writeln!(text, "{}", r.join("\t"));
    }
    ctx.out.write(m, name, text.as_bytes())
}

pub fn sweep(ctx: &Ctx) -> Result<()> {
    let s = &ctx.cfg.sweep;
    if s.p.is_empty() && s.k_max.is_empty() && s.alpha.is_empty() {
        bail!("empty sweep grid: set at least one of sweep.p, sweep.k_max, sweep.alpha");
    }
    let exp = ctx.exp();
    let ps = if s.p.is_empty() { vec![exp.treatment.percentile] } else { s.p.clone() };
    let ks = if s.k_max.is_empty() { vec![exp.search.k_max] } else { s.k_max.clone() };
    let alphas = if s.alpha.is_empty() { vec![exp.train.alpha] } else { s.alpha.clone() };

    let (_, graph_key, prep) = prepare(ctx)?;
    let mut cache = StageCache { prep: &prep, graph_key: &graph_key, treatments: HashMap::new(), augmentations: HashMap::new() };
    let mut m = Manifest::new("sweep", chain(&graph_key, &config_text(&ctx.cfg, &[""])), &ctx.cfg);
    m.inputs.insert(GRAPH.into(), graph_key.clone());
    let mut header: Vec<String> = ["cell", "p", "k_max", "alpha"].map(String::from).to_vec();
    header.extend(METRIC_COLUMNS.map(String::from));
    header.push("status".into());
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut cell = 0;
    for &p in &ps {
        for &k in &ks {
            for &alpha in &alphas {
                let mut run = ctx.cfg.clone();
                run.experiment.treatment.percentile = p;
                run.experiment.search.k_max = k;
                run.experiment.train.alpha = alpha;
                let mut row = vec![cell.to_string(), p.to_string(), k.to_string(), alpha.to_string()];
                match run.validate().map_err(anyhow::Error::from).and_then(|()| cache.run(&run)) {
                    Ok(report) => {
                        write_report(ctx, &mut m, &format!("sweep/cell-{cell:03}/report"), &report)?;
                        row.extend(metric_cells(&report));
                        row.push("ok".into());
                    }
                    Err(e) => {
                        failed += 1;
                        eprintln!("sweep cell {cell} (p={p}, k_max={k}, alpha={alpha}) failed: {e:#}");
                        row.extend(std::iter::repeat_n("n/a".to_string(), METRIC_COLUMNS.len()));
                        row.push(format!("error: {e:#}").replace(['\t', '\n'], " "));
                    }
                }
                println!("{}", row.join("\t"));
                rows.push(row);
                // rewritten after every cell so an interrupted sweep keeps its finished rows
                write_table(ctx, &mut m, "sweep.tsv", &header, &rows)?;
                ctx.out.save_manifest("sweep", &m)?;
                cell += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {cell} sweep cells failed; finished rows are in sweep.tsv");
    }
    Ok(())
}

type Switch = fn(&mut ExperimentConfig<f64>);

pub const VARIANTS: [(&str, Switch); 5] = [
    ("full", |_| {}),
    ("wo_cl", |c| c.train.ablations.disable_counterfactual = true),
    ("wo_te", |c| c.train.ablations.disable_time_encoding = true),
    ("wo_contrast", |c| c.train.ablations.disable_contrastive = true),
    ("wo_similarity", |c| c.train.ablations.disable_similarity = true),
];

pub fn ablate(ctx: &Ctx) -> Result<()> {
    let (_, graph_key, prep) = prepare(ctx)?;
    let mut cache = StageCache { prep: &prep, graph_key: &graph_key, treatments: HashMap::new(), augmentations: HashMap::new() };
    let mut m = Manifest::new("ablate", chain(&graph_key, &config_text(&ctx.cfg, &[""])), &ctx.cfg);
    m.inputs.insert(GRAPH.into(), graph_key.clone());
    let mut header = vec!["variant".to_string()];
    header.extend(METRIC_COLUMNS.map(String::from));
    let mut rows = Vec::new();
    for (name, apply) in VARIANTS {
        let mut run = ctx.cfg.clone();
        // variants differ from the base config only in their own switch
        run.experiment.train.ablations = Default::default();
        apply(&mut run.experiment);
        let report = cache.run(&run).with_context(|| format!("variant {name}"))?;
        write_report(ctx, &mut m, &format!("ablate/{name}/report"), &report)?;
        let mut row = vec![name.to_string()];
        row.extend(metric_cells(&report));
        println!("{}", row.join("\t"));
        rows.push(row);
    }
    write_table(ctx, &mut m, "ablate.tsv", &header, &rows)?;
    ctx.out.save_manifest("ablate", &m)?;
    Ok(())
}
