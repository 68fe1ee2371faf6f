//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::checks;
use cpad::blackout::{random_stepwise_mask, sequential_block_mask, BlackoutMode};
use cpad::cli::{blackout_sweep, SweepRow, DEFAULT_FRACTIONS};
use cpad::dataset::make_split_from_ids;
use cpad::labeler::{
    angular_change_series, curvature_series, detect_lane_weaving, detect_sudden_braking, detect_sudden_turns,
    detect_tailgating, detect_zigzag, indices_above, lateral_acceleration, smoothed_acceleration, LabelerConfig,
};
use cpad::lof::{featurize_trajectory, lof_evaluate, LofConfig};
use cpad::metrics::{roc_auc, scalar_metrics, ConfusionMatrix};
use cpad::model::Hyperparams;
use cpad::scenario::{AgentState, AgentTrajectory, AnomalyType, Interval, SensorFrame, Vec2};
use cpad::sim::{generate_indexed, step_unicycle, BehaviorKind, GenConfig};
use cpad::train::{evaluate, train, LabeledScenario, SampleStore, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn emit(o: &Outcome) {
    let mut out = std::io::stdout().lock();
    let tag = if o.pass { "PASS" } else { "FAIL" };
    writeln!(out, "[{tag}] {}. {}: {}", o.id, o.name, o.detail).unwrap();
    out.flush().unwrap();
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_primitive: f64 = 0.0;
    let prims = checks::primitives();
    let n_prims = prims.len() + 1;
    for (name, shapes, f) in prims {
        let e = checks::primitive_error(&shapes, &f, 50);
        worst_primitive = worst_primitive.max(e);
        if !(e < checks::TOL) {
            failures.push(format!("{name} {e:e}"));
        }
    }
    let e = checks::sparse_matmul_error(50);
    worst_primitive = worst_primitive.max(e);
    if !(e < checks::TOL) {
        failures.push(format!("sparse_matmul {e:e}"));
    }
    let (full, worst_full) = checks::full_forward_failures(0..50);
    failures.extend(full);
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(60);
    Outcome {
        id: 1,
        name: "gradient integrity",
        pass: failures.is_empty() && fast,
        detail: format!(
            "{n_prims} primitives and the full forward pass over 50 seeds at eps 1e-5; worst rel err primitive {worst_primitive:.2e}, full {worst_full:.2e} (< 1e-4); {} (< 60s){}",
            secs(elapsed),
            if failures.is_empty() { String::new() } else { format!("; failures {failures:?}") }
        ),
    }
}

fn attention() -> Outcome {
    let worst = checks::attention_row_deviation(100, 2024);
    Outcome {
        id: 2,
        name: "attention normalization",
        pass: worst <= 1e-9,
        detail: format!("GAT, encoder and pooling rows over 100 configurations; worst |sum - 1| {worst:.2e} (<= 1e-9)"),
    }
}

fn permutation() -> Outcome {
    let worst = checks::reorder_deviation(100, 5);
    let bad = checks::mask_delete_mismatches(100, 6);
    Outcome {
        id: 3,
        name: "permutation and masking semantics",
        pass: worst <= 1e-9 && bad.is_empty(),
        detail: format!(
            "reordering over 100 trials, worst change {worst:.2e} (<= 1e-9); full mask vs deletion bitwise equal in {}/100 trials",
            100 - bad.len()
        ),
    }
}

fn from_states(states: Vec<AgentState>) -> AgentTrajectory {
    let t = states.len();
    AgentTrajectory {
        agent_id: "probe".into(),
        states,
        sensors: vec![SensorFrame::filled(50.0); t],
        lane_cross_flags: vec![false; t],
        label: None,
    }
}

fn drive(steps: usize, dt: f64, speed: f64, control: impl Fn(usize) -> (f64, f64)) -> AgentTrajectory {
    let mut s = AgentState::new(Vec2::new(0.0, 5.25), Vec2::new(1.0, 0.0), speed);
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        states.push(s);
        let (a, w) = control(t);
        s = step_unicycle(&s, a, w, dt);
    }
    from_states(states)
}

fn below(x: f64) -> f64 {
    x - x.abs() * 1e-9
}

fn above(x: f64) -> f64 {
    x + x.abs() * 1e-9
}

/// Every threshold rule fed an input sitting exactly on its threshold, then
/// just past it. Returns the rules that misbehaved.
fn boundary_failures() -> Vec<&'static str> {
    let dt = 0.1;
    let mut bad = Vec::new();
    let base = LabelerConfig::default();

    let zig = drive(100, dt, 12.0, |t| (0.0, if (15..70).contains(&t) { (t as f64 * 0.45).sin() } else { 0.0 }));
    let kmax = curvature_series(&zig.headings(), base.zigzag_window, dt).unwrap().into_iter().fold(0.0, f64::max);
    let at = LabelerConfig { zigzag_k_threshold: kmax, ..base.clone() };
    let past = LabelerConfig { zigzag_k_threshold: below(kmax), ..base.clone() };
    if !detect_zigzag(&zig, dt, &at).unwrap().is_empty() || detect_zigzag(&zig, dt, &past).unwrap().is_empty() {
        bad.push("zigzag k > threshold");
    }

    let brake = drive(100, dt, 14.0, |t| (if (40..50).contains(&t) { -3.0 } else { 0.0 }, 0.0));
    let sa_min = smoothed_acceleration(&brake.speeds(), base.braking_window, dt)
        .unwrap()
        .into_iter()
        .fold(0.0, f64::min);
    let at = LabelerConfig { braking_threshold: sa_min, ..base.clone() };
    let past = LabelerConfig { braking_threshold: above(sa_min), ..base.clone() };
    if !detect_sudden_braking(&brake, dt, &at).unwrap().is_empty()
        || detect_sudden_braking(&brake, dt, &past).unwrap().is_empty()
    {
        bad.push("braking SA < theta");
    }

    let turn = drive(100, dt, 8.0, |t| (0.0, if t == 50 { 0.7 } else { 0.0 }));
    let alat = lateral_acceleration(&angular_change_series(&turn.headings()).unwrap(), &turn.speeds());
    let peak = alat.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let at = LabelerConfig { turn_threshold: peak, ..base.clone() };
    let past = LabelerConfig { turn_threshold: below(peak), ..base.clone() };
    let literal = lateral_acceleration(&[0.0, 0.1, 0.2, 0.0], &[8.0; 4]);
    if !detect_sudden_turns(&turn, &at).unwrap().is_empty()
        || detect_sudden_turns(&turn, &past).unwrap().is_empty()
        || indices_above(&literal, 0.8) != vec![2]
    {
        bad.push("turn |a_lat| > tau");
    }

    let mut weave = drive(100, dt, 12.0, |_| (0.0, 0.0));
    for f in &mut weave.lane_cross_flags[30..52] {
        *f = true;
    }
    let len = detect_lane_weaving(&weave, &LabelerConfig { lane_interval_threshold: 0, ..base.clone() })
        .unwrap()
        .iter()
        .map(Interval::len)
        .max()
        .unwrap_or(0);
    let at = LabelerConfig { lane_interval_threshold: len, ..base.clone() };
    let past = LabelerConfig { lane_interval_threshold: len - 1, ..base.clone() };
    if len == 0
        || !detect_lane_weaving(&weave, &at).unwrap().is_empty()
        || detect_lane_weaving(&weave, &past).unwrap().is_empty()
        || !indices_above(&[0.5], 0.5).is_empty()
    {
        bad.push("lane M > 0.5 and length > tau_lane");
    }

    let with_gap = |gap: f64, steps: usize| {
        let mut t = drive(100, dt, 12.0, |_| (0.0, 0.0));
        for f in &mut t.sensors[30..30 + steps] {
            f.lidar[0] = gap;
        }
        detect_tailgating(&t, &base).len()
    };
    let d = base.tail_distance;
    let n = base.tail_min_duration;
    if with_gap(d, n) != 0 || with_gap(below(d), n) != 1 || with_gap(below(d), n - 1) != 0 {
        bad.push("tailgating proximity < d_tail for >= min duration");
    }
    bad
}

fn labeler() -> Outcome {
    let lab = LabelerConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for kind in AnomalyType::ALL {
        let cfg = GenConfig::default().only(kind);
        let (hit, scripted, false_alarm, normal) = (0..500)
            .into_par_iter()
            .map(|i| {
                let out = generate_indexed(&cfg, i).unwrap();
                let horizon = out.scenario.horizon();
                let mut r = (0usize, 0usize, 0usize, 0usize);
                for (agent, script) in out.scenario.agents.iter().zip(&out.scripts) {
                    let found = match kind {
                        AnomalyType::Zigzag => detect_zigzag(agent, out.scenario.dt, &lab).unwrap(),
                        AnomalyType::SuddenBraking => detect_sudden_braking(agent, out.scenario.dt, &lab).unwrap(),
                        AnomalyType::SuddenTurn => detect_sudden_turns(agent, &lab).unwrap(),
                        AnomalyType::LaneWeaving => detect_lane_weaving(agent, &lab).unwrap(),
                        AnomalyType::Tailgating => detect_tailgating(agent, &lab),
                    };
                    if script.kind == BehaviorKind::Normal {
                        r.3 += 1;
                        r.2 += !found.is_empty() as usize;
                    } else {
                        let (lo, hi) = script.active_window(horizon).unwrap();
                        r.1 += 1;
                        r.0 += found.iter().any(|iv| iv.start < hi && iv.end >= lo) as usize;
                    }
                }
                r
            })
            .reduce(|| (0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
        let det = hit as f64 / scripted as f64;
        let fa = false_alarm as f64 / normal as f64;
        pass &= det >= 0.95 && fa <= 0.05;
        lines.push(format!("{kind} det {:.1}% ({hit}/{scripted}) fa {:.1}% ({false_alarm}/{normal})", det * 100.0, fa * 100.0));
    }
    let bad = boundary_failures();
    pass &= bad.is_empty();
    Outcome {
        id: 4,
        name: "labeler oracle suite",
        pass,
        detail: format!(
            "500 scenarios per type: {} (>= 95% / <= 5%); boundary rules {}",
            lines.join("; "),
            if bad.is_empty() { "all strict".to_string() } else { format!("broken: {bad:?}") }
        ),
    }
}

fn concordance(labels: &[bool], scores: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let levels = rng.random_range(2..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        worst = worst.max((roc_auc(&labels, &scores).unwrap().auc - concordance(&labels, &scores)).abs());
    }
    let m = scalar_metrics(&ConfusionMatrix {
        tp: 45,
        fp: 5,
        fn_: 15,
        tn: 135,
    })
    .unwrap();
    let stated = [("precision", m.precision, 0.9), ("recall", m.recall, 0.75), ("f1", m.f1, 0.8182), ("mcc", m.mcc, 0.7485)];
    let off: Vec<String> = stated
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() <= 1e-4))
        .map(|(name, got, want)| format!("{name} {got:.4} vs {want}"))
        .collect();
    Outcome {
        id: 5,
        name: "metrics correctness",
        pass: worst <= 1e-9 && off.is_empty(),
        detail: format!(
            "AUC vs concordance over 100 instances, worst {worst:.2e} (<= 1e-9); fixture 45/5/15/135 precision {:.4} recall {:.4} f1 {:.4} mcc {:.4}{}",
            m.precision,
            m.recall,
            m.f1,
            m.mcc,
            if off.is_empty() { String::new() } else { format!("; outside 1e-4 of stated: {}", off.join(", ")) }
        ),
    }
}

fn blackout() -> Outcome {
    let mut bad = Vec::new();
    let mut longest = 0;
    for pct in [0.02, 0.05, 0.08, 0.10, 0.15, 0.25] {
        let want = (pct * 5.0 * 100.0_f64).round() as usize;
        for seed in 0..100u64 {
            let ego = seed as usize % 6;
            let r = random_stepwise_mask(6, 100, ego, pct, seed).unwrap();
            let s = sequential_block_mask(6, 100, ego, pct, 10, seed).unwrap();
            longest = longest.max(s.longest_run());
            if r.masked_count() != want || s.masked_count() != want || s.longest_run() > 10 {
                bad.push(format!("pct {pct} seed {seed}"));
            }
        }
    }
    Outcome {
        id: 6,
        name: "blackout mask contracts",
        pass: bad.is_empty(),
        detail: format!(
            "6 agents, T=100, pcts 2/5/8/10/15/25%, 100 seeds, both modes; exact budgets in {}/1200 cases; longest sequential run {longest} (<= 10)",
            1200 - bad.len()
        ),
    }
}

struct Pipeline {
    f1: f64,
    auc: Option<f64>,
    lof_f1: f64,
    lof_auc: Option<f64>,
    anomalous_share: f64,
    best_epoch: usize,
    elapsed: Duration,
    sweep: Vec<SweepRow>,
    sweep_elapsed: Duration,
}

/// Desk-scale run with every default: generate 1500 scenarios, split 80/10/10,
/// train, evaluate on test, fit the LOF baseline, then sweep blackouts.
fn pipeline() -> Pipeline {
    let start = Instant::now();
    let cfg = GenConfig::default();
    let hyper = Hyperparams::default();
    let lab = LabelerConfig::default();
    let mut store = SampleStore::default();
    let mut ids = Vec::new();
    let mut lof_points: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut lof_labels: Vec<Vec<bool>> = Vec::new();
    let (mut anomalous, mut agents) = (0usize, 0usize);
    let indices: Vec<usize> = (0..1500).collect();
    for chunk in indices.chunks(64) {
        let batch: Vec<_> = chunk
            .par_iter()
            .map(|&i| {
                let s = generate_indexed(&cfg, i).unwrap().scenario;
                let feats: Vec<Vec<f64>> = s.agents.iter().map(|a| featurize_trajectory(a, s.dt, &lab).to_vec()).collect();
                let labels: Vec<bool> = s.agents.iter().map(|a| a.label.as_ref().unwrap().is_anomalous).collect();
                let agent_ids: Vec<String> = s.agents.iter().map(|a| a.agent_id.clone()).collect();
                (s.scenario_id.clone(), agent_ids, LabeledScenario::new(&s, hyper.max_range).unwrap(), feats, labels)
            })
            .collect();
        for (sid, agent_ids, labeled, feats, labels) in batch {
            agents += labels.len();
            anomalous += labels.iter().filter(|&&y| y).count();
            ids.push((sid, agent_ids));
            store.insert(labeled).unwrap();
            lof_points.push(feats);
            lof_labels.push(labels);
        }
    }
    let split = make_split_from_ids(&ids, DEFAULT_FRACTIONS, 0).unwrap();

    let outcome = train(&store, &split, hyper, &TrainConfig::default(), |e| {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "  epoch {:>2}  train_loss {:.4}  val_f1 {:.4}", e.epoch, e.train_loss, e.val_f1);
    })
    .unwrap();
    let report = evaluate(&outcome.params, &store, &split.test, None).unwrap().report;

    let position: std::collections::HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, (s, _))| (s.as_str(), i)).collect();
    let gather = |segment: &[(String, String)]| {
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (sid, _) in segment {
            if seen.insert(sid.as_str()) {
                let i = position[sid.as_str()];
                pts.extend(lof_points[i].iter().cloned());
                ys.extend(lof_labels[i].iter().copied());
            }
        }
        (pts, ys)
    };
    let (train_pts, _) = gather(&split.train);
    let (test_pts, test_labels) = gather(&split.test);
    let lof = lof_evaluate(&train_pts, &test_pts, &test_labels, &LofConfig::default()).unwrap();
    let elapsed = start.elapsed();

    let sweep_start = Instant::now();
    let sweep = blackout_sweep(
        &outcome.params,
        &store,
        &split.test,
        &BlackoutMode::ALL,
        &[0.0, 2.0, 5.0, 8.0, 10.0, 15.0, 25.0],
        &[0, 1, 2, 3, 4],
        10,
    )
    .unwrap();
    Pipeline {
        f1: report.f1,
        auc: report.auc,
        lof_f1: lof.f1,
        lof_auc: lof.auc,
        anomalous_share: anomalous as f64 / agents as f64,
        best_epoch: outcome.best_epoch,
        elapsed,
        sweep,
        sweep_elapsed: sweep_start.elapsed(),
    }
}

fn desk_scale(p: &Pipeline) -> Outcome {
    let auc = p.auc.unwrap_or(f64::NAN);
    let gap = p.f1 - p.lof_f1;
    let in_time = p.elapsed <= Duration::from_secs(30 * 60);
    Outcome {
        id: 7,
        name: "desk-scale training",
        pass: p.f1 >= 0.60 && auc >= 0.80 && gap >= 0.20 && in_time,
        detail: format!(
            "1500 scenarios, anomalous share {:.3}, best epoch {}; test F1 {:.4} (>= 0.60), AUC {auc:.4} (>= 0.80); LOF F1 {:.4} AUC {}, gap {gap:.4} (>= 0.20); pipeline {} on {} core(s) (<= 30 min)",
            p.anomalous_share,
            p.best_epoch,
            p.f1,
            p.lof_f1,
            p.lof_auc.map_or("n/a".into(), |a| format!("{a:.4}")),
            secs(p.elapsed),
            rayon::current_num_threads()
        ),
    }
}

fn mean_f1(rows: &[SweepRow], mode: BlackoutMode, pct: f64) -> f64 {
    rows.iter()
        .find(|r| r.mode == mode.as_str() && r.pct == pct && r.seed == "mean")
        .map(|r| r.f1)
        .expect("sweep row present")
}

fn robustness(p: &Pipeline) -> Outcome {
    let grid = [2.0, 5.0, 8.0, 10.0, 15.0, 25.0];
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in BlackoutMode::ALL {
        let f: Vec<f64> = grid.iter().map(|&pct| mean_f1(&p.sweep, mode, pct)).collect();
        let rises: Vec<f64> = f.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
        let ok = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.01);
        pass &= ok;
        parts.push(format!(
            "(a) {} F1 {} with {} inversion(s){} {}",
            mode.as_str(),
            f.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "),
            rises.len(),
            rises.first().map_or(String::new(), |r| format!(" max {r:.4}")),
            if ok { "ok" } else { "violated" }
        ));
    }
    let zero = mean_f1(&p.sweep, BlackoutMode::RandomStepwise, 0.0);
    let r25 = mean_f1(&p.sweep, BlackoutMode::RandomStepwise, 25.0);
    let b = r25 >= 0.8 * zero;
    pass &= b;
    parts.push(format!("(b) random 25% {r25:.4} vs 0.8 x {zero:.4} = {:.4} {}", 0.8 * zero, if b { "ok" } else { "violated" }));
    for pct in [15.0, 25.0] {
        let s = mean_f1(&p.sweep, BlackoutMode::Sequential, pct);
        let r = mean_f1(&p.sweep, BlackoutMode::RandomStepwise, pct);
        let c = s <= r;
        pass &= c;
        parts.push(format!("(c) {pct}% sequential {s:.4} vs random {r:.4} {}", if c { "ok" } else { "violated" }));
    }
    Outcome {
        id: 8,
        name: "robustness trend",
        pass,
        detail: format!("5 seeds, sweep {}; {}", secs(p.sweep_elapsed), parts.join("; ")),
    }
}

fn cpad(args: &[&str], dir: &Path) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_cpad"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (out.status.success(), out.stdout)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Each command runs twice; the two runs write to different files.
    let commands: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        ("generate", vec!["--scenarios", "12", "--seed", "5", "--out", "data{}.jsonl"].into_iter().map(String::from).collect(), vec!["data{}.jsonl"]),
        ("label", vec!["--data", "data1.jsonl", "--out", "labeled{}.jsonl"].into_iter().map(String::from).collect(), vec!["labeled{}.jsonl"]),
        (
            "train",
            vec!["--data", "data1.jsonl", "--model-out", "model{}.json", "--log-out", "log{}.csv", "--split-out", "split{}.json", "--epochs", "2"]
                .into_iter()
                .map(String::from)
                .collect(),
            vec!["model{}.json", "log{}.csv", "split{}.json"],
        ),
        (
            "eval",
            vec!["--model", "model1.json", "--data", "data1.jsonl", "--split", "train", "--blackout", "sequential", "--pct", "15", "--seed", "3", "--out", "report{}.json", "--predictions", "preds{}.csv"]
                .into_iter()
                .map(String::from)
                .collect(),
            vec!["report{}.json", "preds{}.csv"],
        ),
        (
            "blackout-sweep",
            vec!["--model", "model1.json", "--data", "data1.jsonl", "--split", "train", "--pcts", "5,25", "--seeds", "2", "--out", "sweep{}.csv"]
                .into_iter()
                .map(String::from)
                .collect(),
            vec!["sweep{}.csv"],
        ),
        ("roc", vec!["--predictions", "preds1.csv", "--out", "roc{}.csv"].into_iter().map(String::from).collect(), vec!["roc{}.csv"]),
        (
            "baseline-lof",
            vec!["--data", "data1.jsonl", "--split", "train", "--k", "5", "--out", "lof{}.json"].into_iter().map(String::from).collect(),
            vec!["lof{}.json"],
        ),
    ];
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (cmd, args, outputs) in &commands {
        let mut runs = Vec::new();
        for run in ["1", "2"] {
            let mut full = vec![cmd.to_string()];
            full.extend(args.iter().map(|a| a.replace("{}", run)));
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            let (success, stdout) = cpad(&refs, d);
            let files: Vec<Vec<u8>> = outputs.iter().map(|o| std::fs::read(d.join(o.replace("{}", run))).unwrap_or_default()).collect();
            runs.push((success, stdout, files));
        }
        if runs[0].0 && runs[1].0 && runs[0] == runs[1] && runs[0].2.iter().all(|f| !f.is_empty()) {
            ok.push(*cmd);
        } else {
            bad.push(*cmd);
        }
    }
    Outcome {
        id: 9,
        name: "CLI determinism",
        pass: bad.is_empty(),
        detail: format!(
            "byte-identical outputs and stdout on re-run for {}/{} commands{}",
            ok.len(),
            commands.len(),
            if bad.is_empty() { String::new() } else { format!("; differing: {bad:?}") }
        ),
    }
}

fn main() {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut run = |o: Outcome| {
        emit(&o);
        outcomes.push(o);
    };
    run(gradients());
    run(attention());
    run(permutation());
    run(labeler());
    run(metrics());
    run(blackout());
    let p = pipeline();
    run(desk_scale(&p));
    run(robustness(&p));
    run(determinism());

    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| format!("{} ({})", o.id, o.name)).collect();
    println!(
        "acceptance: {}/{} criteria passed in {}",
        outcomes.len() - failed.len(),
        outcomes.len(),
        secs(start.elapsed())
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
