use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use codcl::config::RunConfig;
use codcl::pipeline::{generate_synthetic, make_split, run_experiment, Prepared};
use codcl::treatment::{event_cutoff, FittedTreatment};
use codcl::{Event, Graph};
use tempfile::TempDir;

const SMALL: &str = "\
synth.nodes = 60
synth.communities = 4
synth.proposals = 4000
synth.duration = 400
model.d_t = 4
model.hidden = 16
model.d_h = 8
search.d_h = 8
model.k = 5
train.epochs = 3
train.batch = 100
train.seeds = 0, 1
";

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("run.cfg"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.out().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn cmd(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut c = Command::new(env!("CARGO_BIN_EXE_codcl"));
        c.arg("--config").arg(self.dir.path().join("run.cfg")).arg("--out").arg(self.out()).args(args);
        c.env_remove("CODCL_WORKERS");
        for (k, v) in env {
            c.env(k, v);
        }
        c.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.cmd(args, &[]);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }

    fn fails(&self, args: &[&str]) -> String {
        let o = self.cmd(args, &[]);
        assert!(!o.status.success(), "{args:?} unexpectedly succeeded");
        String::from_utf8(o.stderr).unwrap()
    }
}

fn small_graph(cfg: &RunConfig, seed: u64) -> Graph {
    generate_synthetic::<f64>(&cfg.synth, seed).unwrap().graph().unwrap()
}

fn library_report(config: &str) -> String {
    let cfg = RunConfig::parse(config).unwrap();
    run_experiment(&small_graph(&cfg, 0), &cfg.experiment).unwrap().without_timings().to_text()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn ingest_reports_counts() {
    let r = Run::new("");
    let csv = r.dir.path().join("tiny.csv");
    fs::write(&csv, "src,dst,t\na,b,1\nb,c,2\nc,a,3\n").unwrap();
    let out = r.ok(&["ingest", csv.to_str().unwrap()]);
    assert!(out.starts_with("3 events, 3 nodes\n"), "{out}");
    assert!(r.out().join("graph.json").exists());
}

#[test]
fn ingest_detects_jodie_layout() {
    let r = Run::new("");
    let csv = r.dir.path().join("wiki.csv");
    fs::write(&csv, "user_id,item_id,timestamp,state_label,f0,f1\n1,9,0.0,0,0.1,0.2\n2,9,1.0,0,0.3,0.4\n1,8,2.0,1,0.5,0.6\n").unwrap();
    let out = r.ok(&["ingest", csv.to_str().unwrap()]);
    assert!(out.contains("3 events, 4 nodes") && out.contains("edge features: 2"), "{out}");
}

#[test]
fn ingest_failures_exit_nonzero_with_a_message() {
    let r = Run::new("");
    let err = r.fails(&["ingest", "/nonexistent/events.csv"]);
    assert!(err.contains("stage `ingest` failed") && err.contains("/nonexistent/events.csv"), "{err}");
    let bad = r.dir.path().join("bad.csv");
    fs::write(&bad, "src,dst,t\na,b,1\na,c,soon\n").unwrap();
    let err = r.fails(&["ingest", bad.to_str().unwrap()]);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn config_errors_are_reported_before_any_stage() {
    let r = Run::new("treatment.p = 50\ntreatment.bogus = 1\n");
    let err = r.fails(&["synth"]);
    assert!(err.contains("line 2") && err.contains("treatment.bogus"), "{err}");
    let r = Run::new("");
    let o = r.cmd(&["synth"], &[("CODCL_WORKERS", "0")]);
    assert!(!o.status.success());
}

#[test]
fn missing_and_stale_upstream_artifacts_name_the_prior_command() {
    let r = Run::new(SMALL);
    let err = r.fails(&["treat"]);
    assert!(err.contains("run `codcl ingest` or `codcl synth` first"), "{err}");
    r.ok(&["synth"]);
    assert!(r.fails(&["augment"]).contains("run `codcl treat` first"));
    r.ok(&["treat"]);
    assert!(r.fails(&["train"]).contains("run `codcl augment` first"));
    assert!(r.fails(&["eval"]).contains("run `codcl train` first"));

    // a changed treatment percentile invalidates the treatment artifacts
    fs::write(r.dir.path().join("run.cfg"), format!("{SMALL}treatment.p = 30\n")).unwrap();
    let err = r.fails(&["augment"]);
    assert!(err.contains("stage `augment` failed") && err.contains("rerun `codcl treat`"), "{err}");

    fs::write(r.dir.path().join("run.cfg"), SMALL).unwrap();
    r.ok(&["augment"]);
    fs::write(r.out().join("augment.csv"), "tampered").unwrap();
    assert!(r.fails(&["train"]).contains("rerun `codcl augment`"));
}

#[test]
fn staged_commands_match_the_library_and_eval_reproduces_train() {
    let r = Run::new(SMALL);
    r.ok(&["synth"]);
    r.ok(&["treat"]);
    r.ok(&["augment"]);
    r.ok(&["train", "--export-json"]);
    r.ok(&["eval", "--emit-csv"]);
    let train = r.read("train_report.txt");
    assert_eq!(train, library_report(SMALL));
    assert_eq!(r.read("report.txt"), train);
    assert_eq!(r.read("report.jsonl"), r.read("train_report.jsonl"));

    let scores = r.read("scores.csv");
    assert!(scores.starts_with("setting,src,dst,t,score,label\n"));
    let json: serde_json::Value = serde_json::from_str(&r.read("model-0.json")).unwrap();
    assert!(json.is_object());
    for stage in ["graph", "treat", "augment", "train", "eval"] {
        let m: serde_json::Value = serde_json::from_str(&r.read(&format!("{stage}.manifest.json"))).unwrap();
        assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
        assert!(m["config"].as_str().unwrap().contains("treatment.p = 50"));
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn backbone_only_training_needs_no_augmentation() {
    let cfg = format!("{SMALL}train.disable_counterfactual = true\n");
    let r = Run::new(&cfg);
    r.ok(&["synth"]);
    r.ok(&["treat"]);
    r.ok(&["train"]);
    assert_eq!(r.read("train_report.txt"), library_report(&cfg));
}

#[test]
fn commands_are_idempotent_and_worker_independent() {
    let run = |workers: Option<&str>| {
        let r = Run::new(SMALL);
        let env: Vec<(&str, &str)> = workers.map(|w| ("CODCL_WORKERS", w)).into_iter().collect();
        for cmd in ["synth", "treat", "augment", "train", "eval"] {
            let o = r.cmd(&[cmd, "--emit-csv"], &env);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let snap = snapshot(&r.out());
        (r, snap)
    };
    let (r, a) = run(None);
    let (_, b) = run(Some("1"));
    let (_, c) = run(Some("3"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    // rerunning in place rewrites identical bytes
    for cmd in ["treat", "augment", "train", "eval"] {
        r.ok(&[cmd, "--emit-csv"]);
    }
    assert_eq!(snapshot(&r.out()), a);
}

/// Nodes within `k` hops of `u` using events at or before `t`, excluding `u`.
fn khop_scan(events: &[Event], n: usize, u: usize, t: f64, k: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; n];
    dist[u] = 0;
    let mut q = VecDeque::from([u]);
    while let Some(x) = q.pop_front() {
        if dist[x] == k {
            continue;
        }
        for e in events.iter().filter(|e| e.timestamp <= t) {
            let y = if e.src == x {
                e.dst
            } else if e.dst == x {
                e.src
            } else {
                continue;
            };
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                q.push_back(y);
            }
        }
    }
    (0..n).filter(|&w| w != u && dist[w] != usize::MAX).collect()
}

#[test]
fn augment_coverage_matches_brute_force_feasibility() {
    let r = Run::new(SMALL);
    r.ok(&["synth"]);
    r.ok(&["treat"]);
    let printed = r.ok(&["augment"]);

    let cfg = RunConfig::parse(SMALL).unwrap();
    let graph = small_graph(&cfg, 0);
    let prep = Prepared::new(&graph, make_split(&graph, &cfg.experiment.eval).unwrap()).unwrap();
    let (fitted, _) = FittedTreatment::fit(&prep.train, prep.train.events(), cfg.experiment.treatment.clone()).unwrap();
    let train = prep.train.events();
    let n = graph.num_nodes();
    let k = cfg.experiment.search.k_max;
    let feasible: Vec<bool> = train
        .iter()
        .map(|e| {
            let t = event_cutoff(e.timestamp);
            let treat = |a, b| fitted.treatment(&prep.train, a, b, t).unwrap();
            let factual = treat(e.src, e.dst);
            let nu = khop_scan(train, n, e.src, t, k);
            let nv = khop_scan(train, n, e.dst, t, k);
            nu.iter().any(|&a| nv.iter().any(|&b| a != b && (a, b) != (e.src, e.dst) && treat(a, b) != factual))
        })
        .collect();

    let csv = r.read("augment.csv");
    let found: Vec<bool> = csv.lines().skip(1).map(|l| !l.split(',').nth(3).unwrap().is_empty()).collect();
    assert_eq!(found, feasible);
    let coverage = feasible.iter().filter(|&&f| f).count() as f64 / feasible.len() as f64;
    assert!(coverage > 0.0 && coverage < 1.0);
    assert!(printed.contains(&format!("coverage: {coverage}")), "{printed}");
}

#[test]
fn treatments_csv_lists_every_training_event() {
    let r = Run::new(SMALL);
    r.ok(&["synth"]);
    let out = r.ok(&["treat"]);
    let csv = r.read("treatments.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("u,v,t,statistic,theta,treatment"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    let theta = &rows[0][4];
    assert!(out.contains(&format!("theta: {theta}")));
    for row in &rows {
        let stat: f64 = row[3].parse().unwrap();
        assert_eq!(row[5] == "1", stat >= theta.parse::<f64>().unwrap());
    }
    let cfg = RunConfig::parse(SMALL).unwrap();
    let graph = small_graph(&cfg, 0);
    let prep = Prepared::new(&graph, make_split(&graph, &cfg.experiment.eval).unwrap()).unwrap();
    assert_eq!(rows.len(), prep.train.num_events());
}

#[test]
fn synth_is_seeded() {
    let a = Run::new(SMALL);
    let b = Run::new(SMALL);
    a.ok(&["synth", "--seed", "4"]);
    b.ok(&["synth", "--seed", "4"]);
    assert_eq!(a.read("events.csv"), b.read("events.csv"));
    assert_eq!(a.read("nodes.csv"), b.read("nodes.csv"));
    b.ok(&["synth", "--seed", "5"]);
    assert_ne!(a.read("events.csv"), b.read("events.csv"));
    assert!(a.read("nodes.csv").starts_with("node,community,f0,"));
}

#[test]
fn single_cell_sweep_equals_the_experiment() {
    let cfg = format!("{SMALL}sweep.k_max = 2\n");
    let r = Run::new(&cfg);
    r.ok(&["synth"]);
    let out = r.ok(&["sweep"]);
    assert_eq!(out.lines().count(), 1);
    assert_eq!(r.read("sweep/cell-000/report.txt"), library_report(SMALL));
}

#[test]
fn percentile_sweep_emits_one_row_per_cell() {
    let cfg = format!("{SMALL}train.epochs = 1\ntrain.seeds = 0\nsweep.p = 10, 20, 30, 40, 50, 60, 70, 80, 90\n");
    let r = Run::new(&cfg);
    r.ok(&["synth"]);
    r.ok(&["sweep"]);
    let table = r.read("sweep.tsv");
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 9);
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols[1], ((i + 1) * 10).to_string());
        assert_eq!(*cols.last().unwrap(), "ok");
    }
}

#[test]
fn empty_sweep_grid_is_rejected() {
    let r = Run::new(SMALL);
    r.ok(&["synth"]);
    assert!(r.fails(&["sweep"]).contains("empty sweep grid"));
}

#[test]
fn ablations_share_splits_and_match_single_runs() {
    let cfg = format!("{SMALL}train.seeds = 0\n");
    let r = Run::new(&cfg);
    r.ok(&["synth"]);
    r.ok(&["ablate"]);
    let table = r.read("ablate.tsv");
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["full", "wo_cl", "wo_te", "wo_contrast", "wo_similarity"]);

    let events = |text: &str| -> Vec<String> { text.lines().filter(|l| l.contains(".events:")).map(String::from).collect() };
    let full = r.read("ablate/full/report.txt");
    for name in &names {
        assert_eq!(events(&r.read(&format!("ablate/{name}/report.txt"))), events(&full));
    }
    assert_eq!(full, library_report(&cfg));
    let wo_cl = format!("{cfg}train.disable_counterfactual = true\n");
    assert_eq!(r.read("ablate/wo_cl/report.txt"), library_report(&wo_cl));
    fs::write(r.dir.path().join("run.cfg"), &wo_cl).unwrap();
    r.ok(&["treat"]);
    r.ok(&["train"]);
    assert_eq!(r.read("train_report.txt"), r.read("ablate/wo_cl/report.txt"));
}
