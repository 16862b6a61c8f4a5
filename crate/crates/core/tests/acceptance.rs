//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any hard criterion fails. Report-only outcomes print REPORT.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stmc::assign::solve_lap_max;
use stmc::geometry::project_to_ground;
use stmc::io::{results_to_trajectories, track_records};
use stmc::metrics::{evaluate, id_metrics, IdMetrics, Matcher, Position, SceneReport, TrajectorySet, View};
use stmc::multicut::{solve_exact, solve_heuristic, WeightedGraph};
use stmc::simulator::{generate, NoiseSpec, Scenario, ScenarioSpec};
use stmc::{BBox, FrameResult, TrackerConfig};

const NOISE_FREE_SEED: u64 = 0;
const MODERATE_SEED: u64 = 0;
const ASYNC_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

enum Verdict {
    Pass,
    Fail,
    Report,
}

struct Suite {
    failures: usize,
    /// Every IDF1 computed by the suite, for the harmonic-mean check.
    id_runs: Vec<IdMetrics>,
    /// `(scenario label, frames checked, violations)` of the exclusivity check.
    exclusivity: Vec<(String, usize, usize)>,
}

impl Suite {
    fn record(&mut self, name: &str, verdict: Verdict, detail: String) {
        let tag = match verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                self.failures += 1;
                "FAIL"
            }
            Verdict::Report => "REPORT",
        };
        println!("{tag} {name}: {detail}");
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.record(name, if ok { Verdict::Pass } else { Verdict::Fail }, detail);
    }

    fn score(&mut self, s: &Scenario, results: &[FrameResult]) -> SceneReport {
        let pred = results_to_trajectories(results, &camera_ids(s));
        let r = evaluate(&s.gt, &pred, 0.5, 1.0);
        self.id_runs.push(r.image);
        self.id_runs.push(r.ground);
        r
    }

    fn track(&mut self, label: &str, s: &Scenario, cfg: TrackerConfig) -> Vec<FrameResult> {
        let results = track_records(&s.detections, &s.calibrations, cfg).expect("tracking failed");
        let violations = results.iter().filter(|r| !exclusive(r)).count();
        self.exclusivity.push((label.to_string(), results.len(), violations));
        results
    }
}

fn camera_ids(s: &Scenario) -> Vec<String> {
    s.calibrations.iter().map(|c| c.camera_id.clone()).collect()
}

/// No identity appears twice in a frame, and no identity holds two boxes of one camera.
fn exclusive(r: &FrameResult) -> bool {
    let mut ids = BTreeSet::new();
    for o in &r.outputs {
        if !ids.insert(o.identity) {
            return false;
        }
        let mut cams = BTreeSet::new();
        if !o.boxes.iter().all(|b| cams.insert(b.camera)) {
            return false;
        }
    }
    let mut seen = BTreeSet::new();
    for o in &r.outputs {
        for b in &o.boxes {
            seen.insert((o.identity, b.camera));
        }
    }
    seen.len() == r.outputs.iter().map(|o| o.boxes.len()).sum::<usize>()
}

fn moderate_noise() -> NoiseSpec {
    NoiseSpec { drop_prob: 0.1, bbox_jitter_px: 2.0, embed_noise: 0.1, fp_rate: 0.05, ..NoiseSpec::default() }
}

fn async_spec(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        seed,
        extent: 80.0,
        num_vehicles: 12,
        noise: NoiseSpec { frame_offset: vec![0, 2, 5], ..moderate_noise() },
        ..ScenarioSpec::default()
    }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

// ---------------------------------------------------------------- multicut

fn enumerate_optimum(n: usize, edges: &[(usize, usize, f64)]) -> f64 {
    fn rec(i: usize, labels: &mut Vec<usize>, next: usize, edges: &[(usize, usize, f64)], best: &mut f64) {
        if i == labels.len() {
            let cost: f64 = edges.iter().filter(|e| labels[e.0] != labels[e.1]).map(|e| e.2).sum();
            if cost < *best {
                *best = cost;
            }
            return;
        }
        for l in 0..=next {
            labels[i] = l;
            rec(i + 1, labels, next.max(l + 1), edges, best);
        }
    }
    let mut labels = vec![0; n];
    let mut best = f64::INFINITY;
    if n == 0 {
        return 0.0;
    }
    rec(1, &mut labels, 1, edges, &mut best);
    best
}

fn labels_cost(labels: &[usize], edges: &[(usize, usize, f64)]) -> f64 {
    edges.iter().filter(|e| labels[e.0] != labels[e.1]).map(|e| e.2).sum()
}

fn multicut_criterion(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut optimal, mut exact_ok, mut worst_gap) = (0usize, 0usize, 0.0f64);
    let mut gap_violations = 0usize;
    let mut solve_time = 0.0;
    let total = 200;
    for _ in 0..total {
        let n = rng.gen_range(1..=8);
        let density: f64 = rng.gen_range(0.3..=1.0);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(density) {
                    edges.push((u, v, rng.gen_range(-1.0..=1.0)));
                }
            }
        }
        let g = WeightedGraph::new(n, edges.clone()).expect("valid graph");
        let t = Instant::now();
        let heur = solve_heuristic(&g);
        let exact = solve_exact(&g).expect("exact solver");
        solve_time += t.elapsed().as_secs_f64();

        let opt = enumerate_optimum(n, &edges);
        let exact_cost = labels_cost(exact.labels(), &edges);
        if (exact_cost - opt).abs() <= 1e-9 {
            exact_ok += 1;
        }
        let heur_cost = labels_cost(heur.labels(), &edges);
        if heur_cost <= opt + 1e-9 {
            optimal += 1;
        } else {
            let gap = (heur_cost - opt) / opt.abs().max(1e-12);
            worst_gap = worst_gap.max(gap);
            if gap > 0.05 {
                gap_violations += 1;
            }
        }
    }
    suite.check(
        "multicut exact solver matches partition enumeration",
        exact_ok == total,
        format!("{exact_ok}/{total} instances"),
    );
    suite.check(
        "multicut heuristic optimal on >= 95%",
        optimal * 100 >= total * 95,
        format!("{optimal}/{total} optimal"),
    );
    suite.check(
        "multicut heuristic gap <= 5% on the rest",
        gap_violations == 0,
        format!("worst gap {:.4}, {gap_violations} over 5%", worst_gap),
    );
    suite.check("multicut runtime < 5 s", solve_time < 5.0, format!("{solve_time:.3} s"));
}

// ---------------------------------------------------------------- lap

fn brute_force_max(values: &[Vec<f64>]) -> f64 {
    let rows = values.len();
    let cols = values[0].len();
    fn rec(r: usize, values: &[Vec<f64>], used: &mut Vec<bool>, acc: f64, best: &mut f64, transpose: bool) {
        let (rows, cols) = if transpose { (values[0].len(), values.len()) } else { (values.len(), values[0].len()) };
        if r == rows {
            *best = best.max(acc);
            return;
        }
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                let v = if transpose { values[c][r] } else { values[r][c] };
                rec(r + 1, values, used, acc + v, best, transpose);
                used[c] = false;
            }
        }
    }
    let transpose = rows > cols;
    let mut used = vec![false; rows.max(cols)];
    let mut best = f64::NEG_INFINITY;
    rec(0, values, &mut used, 0.0, &mut best, transpose);
    best
}

fn lap_criterion(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let total = 100;
    let mut agree = 0;
    for _ in 0..total {
        let rows = rng.gen_range(1..=6);
        let cols = rng.gen_range(1..=6);
        let values: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let pairs = solve_lap_max(&values, f64::NEG_INFINITY);
        let rows_used: BTreeSet<_> = pairs.iter().map(|p| p.0).collect();
        let cols_used: BTreeSet<_> = pairs.iter().map(|p| p.1).collect();
        let valid = pairs.len() == rows.min(cols) && rows_used.len() == pairs.len() && cols_used.len() == pairs.len();
        let got: f64 = pairs.iter().map(|&(r, c)| values[r][c]).sum();
        if valid && (got - brute_force_max(&values)).abs() <= 1e-9 {
            agree += 1;
        }
    }
    suite.check("lap matches brute-force enumeration", agree == total, format!("{agree}/{total} instances"));
}

// ---------------------------------------------------------------- end to end

fn noise_free_criterion(suite: &mut Suite) {
    let spec = ScenarioSpec { seed: NOISE_FREE_SEED, ..ScenarioSpec::default() };
    let t = Instant::now();
    let (s, results) = single_threaded(|| {
        let s = generate(&spec).expect("scenario");
        let r = track_records(&s.detections, &s.calibrations, TrackerConfig::default()).expect("tracking");
        (s, r)
    });
    let elapsed = t.elapsed().as_secs_f64();
    let violations = results.iter().filter(|r| !exclusive(r)).count();
    suite.exclusivity.push(("noise-free".into(), results.len(), violations));
    let r = suite.score(&s, &results);
    suite.check(
        "noise-free image IDF1 >= 0.99",
        r.image.idf1 >= 0.99,
        format!("idf1 {:.4} (seed {NOISE_FREE_SEED})", r.image.idf1),
    );
    suite.check(
        "noise-free ground IDF1 (r=1) >= 0.99",
        r.ground.idf1 >= 0.99,
        format!("idf1 {:.4} (seed {NOISE_FREE_SEED})", r.ground.idf1),
    );
    suite.check("noise-free runtime < 10 s single-threaded", elapsed < 10.0, format!("{elapsed:.2} s"));
}

fn moderate_noise_criterion(suite: &mut Suite) {
    let spec = ScenarioSpec { seed: MODERATE_SEED, noise: moderate_noise(), ..ScenarioSpec::default() };
    let s = generate(&spec).expect("scenario");
    let results = suite.track("moderate noise", &s, TrackerConfig::default());
    let r = suite.score(&s, &results);
    suite.check(
        "moderate-noise image IDF1 >= 0.85 (synthehicle profile)",
        r.image.idf1 >= 0.85,
        format!("idf1 {:.4}, ground idf1 {:.4} (seed {MODERATE_SEED})", r.image.idf1, r.ground.idf1),
    );
}

fn decay_criterion(suite: &mut Suite) {
    let mut lines = Vec::new();
    let (mut no_worse, mut fewer_switches) = (0, 0);
    let mut toggle_clean = true;
    for seed in ASYNC_SEEDS {
        let s = generate(&async_spec(seed)).expect("scenario");
        let base = TrackerConfig { memory: 60, ..TrackerConfig::default() };
        let on = suite.track("async decay on", &s, TrackerConfig { enable_decay: true, ..base.clone() });
        let off = suite.track("async decay off", &s, TrackerConfig { enable_decay: false, ..base.clone() });
        let off_other_beta = suite.track(
            "async decay off, beta 0.5",
            &s,
            TrackerConfig { enable_decay: false, beta_decay: 0.5, ..base.clone() },
        );
        toggle_clean &= off == off_other_beta;
        let (ron, roff) = (suite.score(&s, &on), suite.score(&s, &off));
        if ron.image.idf1 >= roff.image.idf1 - 0.01 {
            no_worse += 1;
        }
        if ron.image_mota.id_switches < roff.image_mota.id_switches {
            fewer_switches += 1;
        }
        lines.push(format!(
            "seed {seed}: idf1 {:.4}/{:.4} idsw {}/{}",
            ron.image.idf1, roff.image.idf1, ron.image_mota.id_switches, roff.image_mota.id_switches
        ));
    }
    suite.check(
        "decay disabled: beta_decay does not change output",
        toggle_clean,
        format!("{} async seeds", ASYNC_SEEDS.len()),
    );
    let met = no_worse == ASYNC_SEEDS.len() && fewer_switches >= 3;
    suite.record(
        "similarity decay on asynchronous cameras (on/off)",
        if met { Verdict::Pass } else { Verdict::Report },
        format!(
            "{}; idf1 within 0.01 on {no_worse}/5, fewer switches on {fewer_switches}/5{}",
            lines.join(", "),
            if met { "" } else { " (target not met, report-only)" }
        ),
    );
}

fn toggle_purity_criterion(suite: &mut Suite) {
    let spec = ScenarioSpec { seed: MODERATE_SEED, noise: moderate_noise(), ..ScenarioSpec::default() };
    let s = generate(&spec).expect("scenario");
    let dir = tempfile::tempdir().expect("tempdir");
    let ids = camera_ids(&s);

    let render = |results: &[FrameResult], name: &str| -> Vec<(String, Vec<u8>)> {
        let out = dir.path().join(name);
        let mut w = stmc::io::TrackWriter::create(&out, &ids).expect("writer");
        for r in results {
            w.write(r).expect("write");
        }
        w.finish().expect("finish");
        read_dir_bytes(&out)
    };

    let base = TrackerConfig { enable_prematch: false, ..TrackerConfig::default() };
    let a = suite.track("prematch off, iou_bias 1", &s, base.clone());
    let b = suite.track("prematch off, iou_bias 7", &s, TrackerConfig { iou_bias: 7.0, ..base.clone() });
    let same = a == b && render(&a, "bias1") == render(&b, "bias7");
    suite.check("prematch disabled: iou_bias does not change output", same, "iou_bias 1.0 vs 7.0".into());

    let base = TrackerConfig { enable_decay: false, memory: 60, ..TrackerConfig::default() };
    let a = suite.track("decay off, beta 0.9", &s, base.clone());
    let b = suite.track("decay off, beta 0.3", &s, TrackerConfig { beta_decay: 0.3, ..base.clone() });
    let same = a == b && render(&a, "beta9") == render(&b, "beta3");
    suite.check("decay disabled: beta_decay does not change output bytes", same, "beta_decay 0.9 vs 0.3".into());
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read_dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").display().to_string();
                out.push((rel, std::fs::read(&p).expect("read")));
            }
        }
    }
    out.sort();
    out
}

// ---------------------------------------------------------------- metrics

fn metric_criterion(suite: &mut Suite) {
    // Ground truth: one identity for 10 frames. Prediction: identity 1 for
    // frames 0..5, identity 2 for frames 5..10. Best mapping keeps 5 of 10
    // on both sides, so IDP = IDR = IDF1 = 5/10.
    let b = BBox::new(10.0, 10.0, 20.0, 20.0).unwrap();
    let mut gt = TrajectorySet::new();
    let mut pred = TrajectorySet::new();
    for f in 0..10 {
        gt.insert(1, f, View::Camera("c0".into()), Position::Box(b));
        pred.insert(if f < 5 { 1 } else { 2 }, f, View::Camera("c0".into()), Position::Box(b));
    }
    let m = id_metrics(&gt, &pred, Matcher::Iou(0.5));
    suite.id_runs.push(m);
    suite.check(
        "split-track case gives IDF1 = 0.5 exactly",
        m.idf1 == 0.5,
        format!("idf1 {} idp {} idr {}", m.idf1, m.idp, m.idr),
    );
    let worst = suite.id_runs.iter().map(|m| m.harmonic_residual()).fold(0.0, f64::max);
    suite.check(
        "IDF1 equals harmonic mean of IDP and IDR on every run",
        worst <= 1e-12,
        format!("{} runs, max residual {worst:.2e}", suite.id_runs.len()),
    );
}

// ---------------------------------------------------------------- projection

fn projection_criterion(suite: &mut Suite) {
    let s = generate(&ScenarioSpec::default()).expect("scenario");
    let mean_error = |alpha: f64| -> (f64, f64, usize) {
        let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
        for t in &s.image_truth {
            let p = project_to_ground(&t.bbox, &s.calibrations[t.camera], alpha).expect("projection");
            let e = p.distance(&t.ground);
            sum += e;
            max = max.max(e);
            n += 1;
        }
        (sum / n.max(1) as f64, max, n)
    };
    let (_, max1, n) = mean_error(1.0);
    suite.check(
        "alpha 1.0 recovers ground truth",
        n > 0 && max1 < 1e-6,
        format!("{n} boxes, max error {max1:.2e} m"),
    );
    let (m85, _, _) = mean_error(0.85);
    let (m0, _, _) = mean_error(0.0);
    suite.check(
        "alpha 0.85 mean BEV error below alpha 0.0",
        m85 < m0,
        format!("{m85:.3} m vs {m0:.3} m"),
    );
}

// ---------------------------------------------------------------- determinism

fn run_pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let spec = root.join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&ScenarioSpec { noise: moderate_noise(), ..ScenarioSpec::default() }).unwrap())
        .unwrap();
    let work = root.join("run");
    let _ = std::fs::remove_dir_all(&work);
    let p = |x: &Path| x.display().to_string();
    let data = work.join("data");
    let pred = work.join("pred");
    let calls: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--spec".into(), p(&spec), "--seed".into(), "42".into(), "--out".into(), p(&data)],
        vec![
            "track".into(),
            "--detections".into(),
            p(&data.join("detections.jsonl")),
            "--calibration".into(),
            p(&data.join("calibration.json")),
            "--out".into(),
            p(&pred),
        ],
        vec![
            "evaluate".into(),
            "--pred".into(),
            p(&pred),
            "--gt".into(),
            p(&data.join("gt")),
            "--csv".into(),
            p(&work.join("report.csv")),
        ],
    ];
    for args in calls {
        let code = stmc::io::cli_main(std::iter::once("stmc".to_string()).chain(args.clone()));
        assert_eq!(code, 0, "stmc {} failed", args.join(" "));
    }
    read_dir_bytes(&work)
}

fn determinism_criterion(suite: &mut Suite) {
    let root = tempfile::tempdir().expect("tempdir");
    let first = run_pipeline(root.path());
    let second = run_pipeline(root.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    let ok = first.len() == second.len() && differing.is_empty() && !first.is_empty();
    suite.check(
        "simulate + track + evaluate twice gives identical bytes",
        ok,
        if ok { format!("{} files", first.len()) } else { format!("differing: {differing:?}") },
    );
}

fn main() {
    let mut suite = Suite { failures: 0, id_runs: Vec::new(), exclusivity: Vec::new() };
    let start = Instant::now();
    multicut_criterion(&mut suite);
    lap_criterion(&mut suite);
    noise_free_criterion(&mut suite);
    moderate_noise_criterion(&mut suite);
    decay_criterion(&mut suite);
    toggle_purity_criterion(&mut suite);
    projection_criterion(&mut suite);
    determinism_criterion(&mut suite);

    let frames: usize = suite.exclusivity.iter().map(|e| e.1).sum();
    let bad: Vec<&(String, usize, usize)> = suite.exclusivity.iter().filter(|e| e.2 > 0).collect();
    suite.check(
        "no identity holds two boxes of one camera in a frame",
        bad.is_empty(),
        format!("{} runs, {frames} frames, offenders {:?}", suite.exclusivity.len(), bad),
    );
    metric_criterion(&mut suite);

    println!(
        "acceptance: {} hard failure(s) in {:.1} s",
        suite.failures,
        start.elapsed().as_secs_f64()
    );
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
