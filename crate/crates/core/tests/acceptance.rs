//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p codcl-core --test acceptance`. Pass criterion
//! numbers as arguments to run a subset (`-- 3 7`). The process exits
//! non-zero on a failing criterion only when `CODCL_ACCEPT_STRICT=1`, so the
//! workspace test run stays green while the verdict lines remain visible.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use codcl::cfsearch::{augment_split, candidate_pairs, CounterfactualSearch, SearchConfig, SelectionEncoder};
use codcl::model::{
    contrastive_loss, factual_loss, infonce_from_cosines, write_checkpoint, Batch, CfMode, ContrastiveTriple,
};
use codcl::pipeline::*;
use codcl::treatment::{
    global_threshold, interaction_intensity, FittedTreatment, IntensityMode, TreatmentConfig, TreatmentKind,
};
use codcl::{Event, Graph, Params};
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;

// Tolerances, pinned.
const QUERY_BUDGET_S: f64 = 60.0;
const DECAY_TOL: f64 = 1e-12;
const SIMILARITY_TOL: f64 = 1e-9;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET_S: f64 = 30.0;
const FACTUAL_TOL: f64 = 1e-10;
const CONTRASTIVE_REF: f64 = 0.313262;
const CONTRASTIVE_TOL: f64 = 1e-5;
const METRIC_TOL: f64 = 1e-9;
const EFFECT_BUDGET_S: f64 = 30.0 * 60.0;
const SCALING_LO: f64 = 0.5 * 4.0;
const SCALING_HI: f64 = 2.0 * 4.0;
const SWEEP_DROP_TOL: f64 = 0.005;
const SWEEP_FLAT_TOL: f64 = 0.02;

const EFFECT_SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn features(g: &Graph) -> Vec<Vec<f64>> {
    (0..g.num_nodes()).map(|u| g.node_feature(u).unwrap().to_vec()).collect()
}

fn checkpoint_bytes(p: &Params) -> Vec<u8> {
    let mut buf = Vec::new();
    write_checkpoint(p, &mut buf).unwrap();
    buf
}

fn graph_queries() -> Verdict {
    let clock = Instant::now();
    let mut r = rng(1001);
    let mut mismatches = 0usize;
    let mut queries = 0usize;
    for _ in 0..200 {
        let g = random_graph(&mut r, 60, 500, 0);
        let n = g.num_nodes();
        let ev = g.events();
        for _ in 0..25 {
            let u = r.random_range(0..n);
            let v = r.random_range(0..n);
            let t = r.random_range(-1.0..65.0);
            let delta = if r.random_bool(0.5) { 0.0 } else { r.random_range(0.5..30.0) };
            let k = r.random_range(1..=4);
            mismatches += usize::from(g.neighbors_window(u, t, delta).unwrap() != neighbors(ev, u, t, delta));
            mismatches += usize::from(g.common_neighbor_count(u, v, t, delta).unwrap() != common(ev, u, v, t, delta));
            mismatches += usize::from(g.khop_nodes(u, t, k, delta).unwrap() != khop(ev, n, u, t, k, delta));
            mismatches += usize::from(g.degree_at(u, t).unwrap() != degree(ev, u, t));
            queries += 4;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < QUERY_BUDGET_S,
        format!("{mismatches} mismatches in {queries} queries over 200 graphs, {secs:.1}s"),
    )
}

fn treatments() -> Verdict {
    let mut r = rng(2002);
    let mut rank_bad = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..300);
        let levels = r.random_range(1..60);
        let v: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..levels))).collect();
        let p = r.random_range(0.01..99.99);
        rank_bad += usize::from(global_threshold(&v, p).unwrap() != nearest_rank(&v, p));
    }

    let mut decay_err = 0.0f64;
    for _ in 0..200 {
        let g = random_graph(&mut r, 20, 200, 0);
        let cum = TreatmentConfig::<f64>::default();
        let dec = TreatmentConfig { intensity_mode: IntensityMode::ExponentialDecay, lambda: 0.0, ..Default::default() };
        for _ in 0..10 {
            let u = r.random_range(0..g.num_nodes());
            let v = r.random_range(0..g.num_nodes());
            let a = interaction_intensity(u, v, &g, &cum).unwrap();
            let b = interaction_intensity(u, v, &g, &dec).unwrap();
            decay_err = decay_err.max((a - b).abs());
        }
    }

    let mut asym = 0;
    let mut checked = 0;
    for _ in 0..100 {
        let g = random_graph(&mut r, 30, 300, 0);
        let delta = if r.random_bool(0.5) { 0.0 } else { r.random_range(1.0..20.0) };
        let fitted: Vec<_> = TreatmentKind::ALL
            .iter()
            .map(|&kind| FittedTreatment::fit(&g, g.events(), TreatmentConfig { kind, delta, ..Default::default() }).unwrap().0)
            .collect();
        for _ in 0..100 {
            let u = r.random_range(0..g.num_nodes());
            let v = r.random_range(0..g.num_nodes());
            let t = r.random_range(0.0..65.0);
            for f in &fitted {
                let s = f.slice(&g, t);
                asym += usize::from(s.treatment(u, v).unwrap() != s.treatment(v, u).unwrap());
            }
            checked += 1;
        }
    }
    verdict(
        rank_bad == 0 && decay_err <= DECAY_TOL && asym == 0 && checked == 10_000,
        format!(
            "nearest-rank mismatches {rank_bad}/1000, max |decay(λ=0) - cumulative| {decay_err:e}, \
             asymmetric {asym} of {checked} queries x 7 kinds"
        ),
    )
}

fn counterfactual_search() -> Verdict {
    let mut r = rng(3003);
    let mut instances = 0;
    let mut found = 0;
    let mut failures = Vec::new();
    let mut coverage_bad = 0;
    // sample until 100 instances have a feasible candidate; the empty ones are checked too
    while found < 100 && instances < 2000 {
        let (g, ps, pn, d_out) = cf_instance(&mut r);
        let feats = features(&g);
        let enc = SelectionEncoder::from_matrices(g.feature_dim(), d_out, ps.clone(), pn.clone()).unwrap();
        let k_max = r.random_range(1..=3);
        // a fitted median is often 0 on graphs this small, which treats every pair
        let theta = f64::from(r.random_range(1..=2));
        let tr = FittedTreatment::with_theta(&g, TreatmentConfig::default(), theta).unwrap();
        let cfg = SearchConfig { k_max, ..Default::default() };
        let search = CounterfactualSearch::new(&g, &tr, &enc, cfg.clone()).unwrap();
        // an observed pair queried at some later time, so neighborhoods are populated
        let e = &g.events()[r.random_range(0..g.num_events())];
        let (u, v) = (e.src, e.dst);
        let t = e.timestamp + f64::from(r.random_range(0..30));
        let got = search.select(u, v, t, 0).unwrap();
        let want = cf_oracle(g.events(), g.num_nodes(), &feats, &ps, &pn, d_out, tr.theta, u, v, t, k_max);
        let ok = match (&want.found, got.counterfactual) {
            (None, None) => true,
            (Some((hop, best, argmax)), Some(pair)) => {
                found += 1;
                got.hop == *hop
                    && (got.similarity - best).abs() <= SIMILARITY_TOL
                    && argmax.contains(&pair)
                    && tr.treatment(&g, pair.0, pair.1, t).unwrap() != got.factual_treatment
            }
            _ => false,
        };
        if !ok {
            failures.push(instances);
        }

        let aug = augment_split(g.events(), &g, &tr, &enc, &cfg).unwrap();
        let feasible = g
            .events()
            .iter()
            .filter(|e| {
                let t = e.timestamp.next_down();
                cf_oracle(g.events(), g.num_nodes(), &feats, &ps, &pn, d_out, tr.theta, e.src, e.dst, t, k_max).found.is_some()
            })
            .count();
        coverage_bad += usize::from(aug.summary.coverage != feasible as f64 / g.num_events() as f64);
        instances += 1;
    }
    verdict(
        failures.is_empty() && coverage_bad == 0 && found == 100,
        format!(
            "{} of {instances} selections disagree with exhaustive search ({found} with a candidate); \
             coverage mismatches {coverage_bad}/{instances}",
            failures.len()
        ),
    )
}

fn gradient_check_fixture() -> Verdict {
    let clock = Instant::now();
    let mut r = rng(4004);
    let g = fixture3(&mut r);
    let p = perturbed_params(fixture_dims(), 4004);
    let mut worst = (0.0f64, String::new());
    for with_cf in [false, true] {
        let batch = Batch::assemble(&g, &fixture3_examples(with_cf), 2).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            for (name, rel) in gradient_check(&p, &batch, alpha, 0.5, CfMode::Contrastive, true, GRAD_STEP) {
                if rel > worst.0 {
                    worst = (rel, format!("{name} (α={alpha}, cf={with_cf})"));
                }
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        worst.0 <= GRAD_TOL && secs < GRAD_BUDGET_S,
        format!("max relative error {:.2e} at {}, {secs:.2}s", worst.0, worst.1),
    )
}

fn loss_values() -> Verdict {
    let lf = factual_loss(&[0.0f64; 5], &[0.0; 5]).unwrap();
    let f_err = (lf - 2.0 * std::f64::consts::LN_2).abs();
    let direct = infonce_from_cosines(0.8f64, 0.8, -0.2, 1.0);
    // vectors realizing the same cosines
    let pos = [1.0, 0.0];
    let cf = [0.8, 0.6];
    let neg = [-0.2, (1.0f64 - 0.04).sqrt()];
    let via = contrastive_loss(&[ContrastiveTriple { pos: &pos, cf: &cf, neg: &neg, observed: true }], 1.0).unwrap();
    let c_err = (direct - CONTRASTIVE_REF).abs().max((via - CONTRASTIVE_REF).abs());
    verdict(
        f_err <= FACTUAL_TOL && c_err <= CONTRASTIVE_TOL,
        format!("factual {lf:.12} (|err| {f_err:.1e}), contrastive {direct:.6} / {via:.6} (|err| {c_err:.1e})"),
    )
}

fn metrics() -> Verdict {
    let mut r = rng(6006);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..200);
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        labels.shuffle(&mut r);
        let levels = r.random_range(2..100);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..levels)) / 7.0).collect();
        worst = worst.max((average_precision(&scores, &labels).unwrap() - ap_oracle(&scores, &labels)).abs());
        worst = worst.max((auc_roc(&scores, &labels).unwrap() - auc_trapezoid(&scores, &labels)).abs());
    }
    let perfect = average_precision(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap() == 1.0
        && auc_roc(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]).unwrap() == 1.0;
    let inverted = (1..10).all(|n| {
        let mut s = vec![1.0; n];
        s.push(0.0);
        let mut l = vec![false; n];
        l.push(true);
        average_precision(&s, &l).unwrap() == 1.0 / (n as f64 + 1.0) && auc_roc(&s, &l).unwrap() == 0.0
    });
    let tied = auc_roc(&[0.4; 7], &[true, false, false, true, false, true, true]).unwrap() == 0.5;
    let by_hand = (average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15;
    verdict(
        worst <= METRIC_TOL && perfect && inverted && tied && by_hand,
        format!("max deviation {worst:.1e} over 100 vectors; perfect {perfect}, inverted {inverted}, tied {tied}, hand {by_hand}"),
    )
}

fn leakage_and_determinism() -> Verdict {
    let g = small_synth(7007);
    let mut cfg = small_experiment();
    cfg.eval.inductive_fraction = 0.2;
    let spec = make_split(&g, &cfg.eval).unwrap();
    cfg.workers = 1;
    let reference = run_with_split(&g, spec.clone(), &cfg).unwrap();
    let ref_ckpt = checkpoint_bytes(&reference.runs[0].outcome.params);
    let ref_aug = reference.augmentation.clone().unwrap();
    let mut notes = Vec::new();

    // test events deleted, split held fixed
    let no_test = g.restrict(|_, e| spec.part(e.timestamp) != Part::Test);
    let prep = Prepared::new(&no_test, spec.clone()).unwrap();
    let (tr, _) = fit_treatments(&prep, &cfg).unwrap();
    let aug = augment(&prep, &tr, &cfg, 0).unwrap();
    let out = train_model(&prep, &tr, Some(&aug), &cfg, cfg.seeds[0]).unwrap();
    let a = tr == reference.treatments && aug == ref_aug && checkpoint_bytes(&out.params) == ref_ckpt;
    notes.push(format!("without test: θ/augmentation/checkpoint equal {a}"));

    // validation and test events deleted
    let train_only = g.restrict(|_, e| spec.part(e.timestamp) == Part::Train);
    let prep = Prepared::new(&train_only, spec.clone()).unwrap();
    let (tr, _) = fit_treatments(&prep, &cfg).unwrap();
    let b = tr == reference.treatments && augment(&prep, &tr, &cfg, 0).unwrap() == ref_aug;
    notes.push(format!("without val+test: θ/augmentation equal {b}"));

    // worker counts
    let mut c = true;
    for workers in [2, 4, 0] {
        let mut w = cfg.clone();
        w.workers = workers;
        let run = run_with_split(&g, spec.clone(), &w).unwrap();
        c &= run.report.without_timings() == reference.report.without_timings()
            && run.augmentation.as_ref() == Some(&ref_aug)
            && checkpoint_bytes(&run.runs[0].outcome.params) == ref_ckpt;
    }
    notes.push(format!("workers 1/2/4/all: report equal {c}"));

    // equal seeds
    let again = run_with_split(&g, spec, &cfg).unwrap();
    let d = checkpoint_bytes(&again.runs[0].outcome.params) == ref_ckpt;
    notes.push(format!("equal-seed checkpoints equal {d}"));
    verdict(a && b && c && d, notes.join("; "))
}

fn effect_config() -> ExperimentConfig<f64> {
    ExperimentConfig::<f64> {
        model: ModelShape { time_dim: 8, hidden_dim: 32, embed_dim: 32 },
        selection_dim: 16,
        ..Default::default()
    }
}

fn effect_graph(seed: u64) -> Graph {
    let synth = SyntheticConfig { nodes: 500, beta: 1.0, ..Default::default() };
    generate_synthetic::<f64>(&synth, seed).unwrap().graph().unwrap()
}

/// Mean transductive test AP over the planted datasets, one training seed per dataset.
fn mean_ap(graphs: &[Graph], cfg: &ExperimentConfig<f64>) -> f64 {
    let aps: Vec<f64> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut c = cfg.clone();
            c.seeds = vec![i as u64];
            run_experiment(g, &c).unwrap().transductive.unwrap().ap.mean
        })
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

fn direction_of_effect(graphs: &[Graph], full_ap: &mut Option<f64>) -> Verdict {
    let clock = Instant::now();
    let base = effect_config();
    let full = mean_ap(graphs, &base);
    *full_ap = Some(full);
    type Switch = fn(&mut ExperimentConfig<f64>);
    let variants: [(&str, Switch); 4] = [
        ("w/o CL", |c| c.train.ablations.disable_counterfactual = true),
        ("w/o TE", |c| c.train.ablations.disable_time_encoding = true),
        ("w/o Contrast", |c| c.train.ablations.disable_contrastive = true),
        ("w/o Similarity", |c| c.train.ablations.disable_similarity = true),
    ];
    let mut drops = Vec::new();
    for (name, apply) in variants {
        let mut c = base.clone();
        apply(&mut c);
        drops.push((name, full - mean_ap(graphs, &c)));
    }
    let secs = clock.elapsed().as_secs_f64();
    let backbone_drop = drops[0].1;
    let largest = drops.iter().all(|(_, d)| backbone_drop >= *d);
    let table: Vec<String> = drops.iter().map(|(n, d)| format!("{n} {d:+.4}")).collect();
    verdict(
        backbone_drop >= 0.0 && largest && secs < EFFECT_BUDGET_S,
        format!("full AP {full:.4}; drops {}; {secs:.0}s", table.join(", ")),
    )
}

/// Random `d`-regular graph as the union of `d/2` random Hamiltonian cycles
/// with no repeated edge, one event per edge at a uniform time.
fn regular_graph(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> Graph {
    let mut edges = BTreeSet::new();
    for _ in 0..d / 2 {
        // redraw this cycle until it avoids every edge already placed
        loop {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(r);
            let cycle: Vec<(usize, usize)> = (0..n)
                .map(|i| (perm[i].min(perm[(i + 1) % n]), perm[i].max(perm[(i + 1) % n])))
                .collect();
            if cycle.iter().all(|e| !edges.contains(e)) {
                edges.extend(cycle);
                break;
            }
        }
    }
    let mut events: Vec<Event> = edges.into_iter().map(|(a, b)| Event::new(a, b, r.random_range(0.0..100.0))).collect();
    events.shuffle(r);
    Graph::from_events(events, n, false).unwrap()
}

fn complexity_scaling() -> Verdict {
    let mut r = rng(9009);
    let n = 2000;
    let mut pairs = Vec::new();
    let mut nodes = Vec::new();
    for d in [4, 8] {
        let g = regular_graph(&mut r, n, d);
        // with θ = 1 a pair is treated iff it has a common neighbor; the fitted
        // percentile is 0 on triangle-poor random regular graphs, which treats every pair
        let tr = FittedTreatment::with_theta(&g, TreatmentConfig::default(), 1.0).unwrap();
        let (mut cand, mut reach, mut q) = (0usize, 0usize, 0usize);
        for e in g.events().iter().take(300) {
            cand += candidate_pairs(e.src, e.dst, 100.0, 2, &g, &tr, 0.0).unwrap().len();
            reach += g.khop_nodes(e.src, 100.0, 2, 0.0).unwrap().len();
            q += 1;
        }
        pairs.push(cand as f64 / q as f64);
        nodes.push(reach as f64 / q as f64);
    }
    let ratio = pairs[1] / pairs[0];
    let node_ratio = nodes[1] / nodes[0];
    verdict(
        (SCALING_LO..=SCALING_HI).contains(&ratio),
        format!(
            "mean candidates at k=2: d=4 {:.1}, d=8 {:.1}, ratio {ratio:.2} (band [{SCALING_LO}, {SCALING_HI}]); \
             2-hop node count ratio {node_ratio:.2}",
            pairs[0], pairs[1]
        ),
    )
}

fn k_sweep(graphs: &[Graph], k2_ap: Option<f64>) -> Verdict {
    let mut ap = Vec::new();
    for k in [1, 2, 3] {
        if k == 2 {
            if let Some(a) = k2_ap {
                ap.push(a);
                continue;
            }
        }
        let mut c = effect_config();
        c.search.k_max = k;
        ap.push(mean_ap(graphs, &c));
    }
    verdict(
        ap[1] >= ap[0] - SWEEP_DROP_TOL && (ap[2] - ap[1]).abs() <= SWEEP_FLAT_TOL,
        format!("mean AP k=1 {:.4}, k=2 {:.4}, k=3 {:.4}", ap[0], ap[1], ap[2]),
    )
}

fn main() {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |i: usize| wanted.is_empty() || wanted.contains(&i);
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut clock = Instant::now();
    let mut report = |i: usize, name: &'static str, v: Verdict| {
        let secs = clock.elapsed().as_secs_f64();
        println!("{} [{i}] {name}: {} [{secs:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((i, name, v));
        clock = Instant::now();
    };

    if run(1) {
        report(1, "graph-query oracles", graph_queries());
    }
    if run(2) {
        report(2, "treatment suite", treatments());
    }
    if run(3) {
        report(3, "counterfactual search", counterfactual_search());
    }
    if run(4) {
        report(4, "gradient check", gradient_check_fixture());
    }
    if run(5) {
        report(5, "loss values", loss_values());
    }
    if run(6) {
        report(6, "metric oracles", metrics());
    }
    if run(7) {
        report(7, "leakage and determinism", leakage_and_determinism());
    }
    let graphs: Vec<Graph> = if run(8) || run(10) { (0..EFFECT_SEEDS).map(effect_graph).collect() } else { Vec::new() };
    let mut full_ap = None;
    if run(8) {
        report(8, "direction of effect", direction_of_effect(&graphs, &mut full_ap));
    }
    if run(9) {
        report(9, "complexity scaling", complexity_scaling());
    }
    if run(10) {
        report(10, "k_max saturation", k_sweep(&graphs, full_ap));
    }

    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} passed", results.len());
    let strict = std::env::var("CODCL_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    if strict && passed != results.len() {
        std::process::exit(1);
    }
}
