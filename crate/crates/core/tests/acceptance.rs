//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use active_detect::agent::{optimize_step, train, Adam, Architecture, QFunction, TrainConfig, Transition};
use active_detect::dataset::{generate_synthetic, SyntheticConfig};
use active_detect::encoder::{encode_state, DeskExtractor, HistoryWindow};
use active_detect::env::{apply_action, iou, select_reward, step_reward, Action, BoxF, EpisodeEnd, RewardParams};
use active_detect::inference::{
    detect_with, evaluate, step_statistics, Detection, InferenceConfig, OraclePolicy, StepStats,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_int_box(rng: &mut impl Rng) -> BoxF {
    let mut xs = [rng.random_range(0..=224), rng.random_range(0..=224)];
    let mut ys = [rng.random_range(0..=224), rng.random_range(0..=224)];
    xs.sort_unstable();
    ys.sort_unstable();
    BoxF::new(xs[0] as f64, ys[0] as f64, xs[1] as f64, ys[1] as f64)
}

/// Counts covered unit cells row by row.
fn raster_iou(a: &BoxF, b: &BoxF) -> f64 {
    let cells = |bx: &BoxF, y: usize| -> (usize, usize) {
        if (y as f64) >= bx.ymin && ((y + 1) as f64) <= bx.ymax {
            (bx.xmin as usize, bx.xmax as usize)
        } else {
            (0, 0)
        }
    };
    let (mut inter, mut uni) = (0u64, 0u64);
    let mut area_a = 0u64;
    let mut area_b = 0u64;
    for y in 0..224 {
        let (a0, a1) = cells(a, y);
        let (b0, b1) = cells(b, y);
        for x in 0..224 {
            let ia = a0 <= x && x < a1;
            let ib = b0 <= x && x < b1;
            area_a += ia as u64;
            area_b += ib as u64;
            inter += (ia && ib) as u64;
            uni += (ia || ib) as u64;
        }
    }
    if area_a == 0 || area_b == 0 {
        0.0
    } else {
        inter as f64 / uni as f64
    }
}

fn iou_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (a, b) = (random_int_box(&mut rng), random_int_box(&mut rng));
        worst = worst.max((iou(&a, &b) - raster_iou(&a, &b)).abs());
    }
    let el = start.elapsed();
    check(worst <= 1e-9 && el < Duration::from_secs(10), format!("max |err| {worst:.2e} in {el:.2?}"))
}

/// The two reward formulas, coded from their definitions.
fn reference_select(iou: f64, t: usize) -> f64 {
    let (tau, nu) = (0.66, 20.0);
    let base = if iou >= tau { f64::max(3.0, (iou - tau) * nu) } else { f64::min(-3.0, (iou - tau) * nu) };
    base + t as f64 / 500.0
}

fn reference_step(before: f64, after: f64, t: usize) -> f64 {
    let sign = if after - before > 0.0 { 1.0 } else { -1.0 };
    sign - t as f64 / 500.0
}

fn reward_conformance() -> Outcome {
    let p = RewardParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut branches = [0usize; 4];
    let mut probe = |iou_a: f64, iou_b: f64, t: usize| {
        worst = worst.max((select_reward(iou_a, t, &p) - reference_select(iou_a, t)).abs());
        worst = worst.max((step_reward(iou_a, iou_b, t, &p) - reference_step(iou_a, iou_b, t)).abs());
        branches[(iou_a >= 0.66) as usize] += 1;
        branches[2 + (iou_b > iou_a) as usize] += 1;
        cases += 1;
    };
    for i in 0..10_000 {
        let t = match i % 4 {
            0 => 0,
            1 => 100,
            _ => rng.random_range(0..=100),
        };
        let a = if i % 10 == 0 { 0.66 } else { rng.random_range(0.0..=1.0) };
        let b = if i % 7 == 0 { a } else { rng.random_range(0.0..=1.0) };
        probe(a, b, t);
    }
    check(
        worst <= 1e-12 && branches.iter().all(|&n| n > 0),
        format!("{cases} cases, max |diff| {worst:.2e}, branch hits {branches:?}"),
    )
}

fn close(a: &BoxF, b: &BoxF) -> bool {
    [(a.xmin, b.xmin), (a.ymin, b.ymin), (a.xmax, b.xmax), (a.ymax, b.ymax)].iter().all(|(u, v)| (u - v).abs() <= 1e-9)
}

fn action_geometry() -> Outcome {
    let p = RewardParams::default();
    let step = p.step_px();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let mut roundtrips = 0;
    let pairs = [
        (Action::MoveRight, Action::MoveLeft),
        (Action::MoveUp, Action::MoveDown),
        (Action::Enlarge, Action::Shrink),
        (Action::Widen, Action::Narrow),
    ];
    for _ in 0..10_000 {
        let w = rng.random_range(1.0..=224.0);
        let h = rng.random_range(1.0..=224.0);
        let x = rng.random_range(0.0..=224.0 - w);
        let y = rng.random_range(0.0..=224.0 - h);
        let f = BoxF::new(x, y, x + w, y + h);
        for a in Action::MOVES {
            let g = apply_action(&f, a, step).map_err(|e| e.to_string())?;
            if !g.is_valid_frame() {
                failures.push(format!("{a} on {f} gave {g}"));
            }
            let raw = raw_action(&f, a, step);
            if fits(&raw) {
                if !close(&g, &raw) {
                    failures.push(format!("{a} on {f} gave {g}, expected {raw}"));
                }
                let translation = matches!(a, Action::MoveRight | Action::MoveLeft | Action::MoveUp | Action::MoveDown);
                if translation && (g.area() - f.area()).abs() > 1e-9 * f.area() {
                    failures.push(format!("{a} changed area on {f}"));
                }
            }
        }
        for (a, b) in pairs {
            for (first, second) in [(a, b), (b, a)] {
                if !fits(&raw_action(&f, first, step)) {
                    continue;
                }
                let g = apply_action(&f, first, step).map_err(|e| e.to_string())?;
                if !fits(&raw_action(&g, second, step)) {
                    continue;
                }
                let back = apply_action(&g, second, step).map_err(|e| e.to_string())?;
                roundtrips += 1;
                if !close(&back, &f) {
                    failures.push(format!("{first} then {second} on {f} gave {back}"));
                }
            }
        }
    }
    let full = BoxF::full_canvas();
    let shrunk = apply_action(&full, Action::Shrink, step).map_err(|e| e.to_string())?;
    let change = 1.0 - shrunk.area() / full.area();
    let want = 1.0 - 0.97 * 0.97;
    if (change - want).abs() > 1e-9 {
        failures.push(format!("full-canvas shrink removes {:.4}% of the area, expected {:.4}%", change * 100.0, want * 100.0));
    }
    let detail = format!("{roundtrips} unclamped round-trips; {} failure(s)", failures.len());
    check(failures.is_empty(), if failures.is_empty() { detail } else { format!("{detail}: {}", failures[..failures.len().min(3)].join("; ")) })
}

/// Corner deltas applied without clamping or repair.
fn raw_action(f: &BoxF, a: Action, s: f64) -> BoxF {
    let d = match a {
        Action::MoveRight => [s, 0.0, s, 0.0],
        Action::MoveLeft => [-s, 0.0, -s, 0.0],
        Action::MoveUp => [0.0, -s, 0.0, -s],
        Action::MoveDown => [0.0, s, 0.0, s],
        Action::Enlarge => [-s, -s, s, s],
        Action::Shrink => [s, s, -s, -s],
        Action::Widen => [0.0, s, 0.0, -s],
        Action::Narrow => [s, 0.0, -s, 0.0],
        Action::Select => [0.0; 4],
    };
    BoxF::new(f.xmin + d[0], f.ymin + d[1], f.xmax + d[2], f.ymax + d[3])
}

/// Inside the canvas with at least 1 px per side: no clamp or repair applies.
fn fits(b: &BoxF) -> bool {
    b.xmin >= 0.0 && b.ymin >= 0.0 && b.xmax <= 224.0 && b.ymax <= 224.0 && b.width() >= 1.0 && b.height() >= 1.0
}

fn reachability() -> Outcome {
    let start = Instant::now();
    let p = RewardParams::default();
    let imgs = generate_synthetic(&SyntheticConfig { count: 500, rng_seed: 4, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?;
    let mut ok = 0;
    let mut steps = Vec::new();
    for img in &imgs {
        let d = detect_with(&mut OraclePolicy::new(p), img, 100, &p).map_err(|e| e.to_string())?;
        if d.selected() && d.best_iou.unwrap_or(0.0) >= p.tau {
            ok += 1;
            steps.push(d.steps_taken);
        }
    }
    steps.sort_unstable();
    let median = steps.get(steps.len().saturating_sub(1) / 2).copied().unwrap_or(0);
    let rate = ok as f64 / imgs.len() as f64;
    let el = start.elapsed();
    check(
        rate >= 0.95 && el < Duration::from_secs(120),
        format!("{ok}/500 reached IoU >= 0.66 and selected ({:.1}%), median {median} steps, {el:.2?}", rate * 100.0),
    )
}

fn random_states(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feat = dim - 81;
    Array2::from_shape_fn((n, dim), |(_, j)| {
        if j < feat {
            rng.random_range(-1.0..1.0)
        } else {
            rng.random_range(0..2) as f64
        }
    })
}

fn gradient_check() -> Outcome {
    let mut report = Vec::new();
    let mut worst_all: f64 = 0.0;
    let mut largest = 0;
    for arch in [Architecture::LstmFcn { dense1: 8, dense2: 6, lstm_hidden: 4 }, Architecture::Mlp { hidden: 8 }] {
        let q = QFunction::new_seeded(arch, 87, 5).map_err(|e| e.to_string())?;
        largest = largest.max(q.num_params());
        let xs = random_states(6, 87, 6);
        let actions = [0, 1, 4, 4, 8, 6];
        let targets = [2.0, -1.0, 0.3, 5.0, -3.2, 6.8];
        let (_, grad) = q.loss_and_grad(&xs, &actions, &targets).map_err(|e| e.to_string())?;
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (k, &g) in grad.iter().enumerate() {
            let mut plus = q.clone();
            plus.params_mut()[k] += h;
            let mut minus = q.clone();
            minus.params_mut()[k] -= h;
            let lp = plus.loss_and_grad(&xs, &actions, &targets).map_err(|e| e.to_string())?.0;
            let lm = minus.loss_and_grad(&xs, &actions, &targets).map_err(|e| e.to_string())?.0;
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(g.abs());
            if scale > 0.0 {
                worst = worst.max((fd - g).abs() / scale.max(1e-6));
            }
        }
        worst_all = worst_all.max(worst);
        report.push(format!("{} ({} params) {worst:.2e}", arch.id(), q.num_params()));
    }
    check(worst_all <= 1e-4 && largest <= 1000, format!("max relative error: {}", report.join(", ")))
}

fn overfit_one() -> Outcome {
    let fe = DeskExtractor::new(64, 0);
    let img = &generate_synthetic(&SyntheticConfig { count: 1, rng_seed: 5, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?[0];
    let state = encode_state(&fe, &img.pixels, &BoxF::new(30.0, 40.0, 150.0, 170.0), &HistoryWindow::new())
        .map_err(|e| e.to_string())?;
    let mut q = QFunction::new_seeded(Architecture::default(), state.len(), 6).map_err(|e| e.to_string())?;
    let tr = Transition { state, action: Action::Enlarge, reward: 6.8, next_state: None };
    let mut opt = Adam::new(q.num_params(), 1e-3);
    let mut last = f64::INFINITY;
    for i in 1..=500 {
        last = optimize_step(&mut q, &mut opt, &[&tr], &[6.8]).map_err(|e| e.to_string())?;
        if last < 1e-6 {
            return Ok(format!("loss {last:.2e} after {i} updates"));
        }
    }
    Err(format!("loss still {last:.2e} after 500 updates"))
}

/// Training setup for the learning check.
fn learning_config() -> (TrainConfig, DeskExtractor) {
    let cfg = TrainConfig { rng_seed: 7, ..TrainConfig::default() };
    (cfg, DeskExtractor::new(64, 0))
}

fn learning() -> Outcome {
    let start = Instant::now();
    let p = RewardParams::default();
    let train_set = generate_synthetic(&SyntheticConfig { count: 200, rng_seed: 100, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?;
    let test_set = generate_synthetic(&SyntheticConfig { count: 100, rng_seed: 200, ..SyntheticConfig::default() })
        .map_err(|e| e.to_string())?;
    let (cfg, fe) = learning_config();
    let out = train(&train_set, &cfg, &p, &fe, |t, recs| {
        let i = t.images_completed();
        if i % 20 == 0 {
            let sel = recs.iter().filter(|r| r.end == EpisodeEnd::Select).count();
            let good = recs.iter().filter(|r| r.end == EpisodeEnd::Select && r.final_iou >= 0.5).count();
            eprintln!("  [learning] {i} images, last image {sel}/{} selected ({good} at IoU >= 0.5), {:.0?}", recs.len(), start.elapsed());
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let inf = InferenceConfig { max_targets: 1, ..InferenceConfig::default() };
    let ev = evaluate(&out.policy, &fe, &test_set, &inf, &p).map_err(|e| e.to_string())?;
    let hit_rate = ev.report.tp as f64 / ev.report.ground_truth as f64;
    let trig = ev.step_stats.trigger_rate;
    let el = start.elapsed();
    check(
        hit_rate >= 0.70 && trig >= 0.85 && el <= Duration::from_secs(30 * 60),
        format!(
            "{:.1}% of held-out targets detected at IoU >= 0.5, trigger rate {:.1}%, mean t {:?}, {el:.0?}",
            hit_rate * 100.0,
            trig * 100.0,
            ev.step_stats.mean_t
        ),
    )
}

fn reaggregate(ds: &[Detection], thr: f64) -> StepStats {
    let runs = ds.len();
    let mut triggered = 0;
    let mut succ_t = Vec::new();
    let mut max_trig: Option<usize> = None;
    for d in ds {
        if d.terminated_by == EpisodeEnd::Select {
            triggered += 1;
            max_trig = Some(max_trig.map_or(d.steps_taken, |m| m.max(d.steps_taken)));
        }
        let ok = match d.best_iou {
            Some(v) => v >= thr,
            None => true,
        };
        if ok {
            succ_t.push(d.steps_taken);
        }
    }
    succ_t.sort();
    let n = succ_t.len();
    StepStats {
        runs,
        successes: n,
        triggered,
        trigger_rate: if runs == 0 { 0.0 } else { triggered as f64 / runs as f64 },
        capped: runs - triggered,
        cap_rate: if runs == 0 { 0.0 } else { (runs - triggered) as f64 / runs as f64 },
        mean_t: if n == 0 { None } else { Some(succ_t.iter().map(|&t| t as f64).sum::<f64>() / n as f64) },
        median_t: if n == 0 { None } else { Some(succ_t[(n - 1) / 2]) },
        min_t: succ_t.first().copied(),
        max_trigger_t: max_trig,
    }
}

fn statistics_harness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let required = [
        "runs", "successes", "triggered", "trigger_rate", "capped", "cap_rate", "mean_t", "median_t", "min_t",
        "max_trigger_t",
    ];
    for case in 0..1000 {
        let n = rng.random_range(0..60);
        let ds: Vec<Detection> = (0..n)
            .map(|_| {
                let sel = rng.random_bool(0.8);
                Detection {
                    bbox: BoxF::full_canvas(),
                    steps_taken: if sel { rng.random_range(0..=100) } else { 100 },
                    terminated_by: if sel { EpisodeEnd::Select } else { EpisodeEnd::StepCap },
                    best_iou: if rng.random_bool(0.1) { None } else { Some(rng.random_range(0.0..=1.0)) },
                }
            })
            .collect();
        let got = step_statistics(&ds, 0.5);
        let want = reaggregate(&ds, 0.5);
        let same_mean = match (got.mean_t, want.mean_t) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
            (a, b) => a == b,
        };
        let rest_equal = StepStats { mean_t: want.mean_t, ..got.clone() } == want;
        if !same_mean || !rest_equal {
            return Err(format!("fixture {case}: {got:?} vs {want:?}"));
        }
        let json = serde_json::to_value(&got).map_err(|e| e.to_string())?;
        if let Some(k) = required.iter().find(|k| json.get(**k).is_none()) {
            return Err(format!("report lacks `{k}`"));
        }
    }
    Ok("1000 fixtures agree; all step-table fields present".into())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["active-detect"];
    argv.extend_from_slice(args);
    match active_detect::cli::run(argv) {
        0 => Ok(()),
        c => Err(format!("`{}` exited with {c}", args.join(" "))),
    }
}

/// Checkpoint, evaluation report and training log bytes.
type RunBytes = (Vec<u8>, Vec<u8>, Vec<u8>);

fn end_to_end(dir: &Path, cfg: &Path) -> Result<RunBytes, String> {
    let out = dir.to_str().unwrap();
    run_cli(&["synth", "--config", cfg.to_str().unwrap(), "--out", &format!("{out}/data")])?;
    run_cli(&["train", "--config", cfg.to_str().unwrap(), "--seed", "7", "--data", &format!("{out}/data/train"), "--out", &format!("{out}/run")])?;
    run_cli(&["eval", "--model", &format!("{out}/run/model.ckpt"), "--data", &format!("{out}/data/test"), "--out", &format!("{out}/eval")])?;
    let read = |p: String| std::fs::read(&p).map_err(|e| format!("{p}: {e}"));
    Ok((read(format!("{out}/run/model.ckpt"))?, read(format!("{out}/eval/eval_report.json"))?, read(format!("{out}/run/train_log.jsonl"))?))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = root.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[synthetic]\ncount = 12\n\n[train]\nrounds_per_image = 3\nmax_steps = 30\nbatch_size = 16\n\n[train.architecture]\nid = \"lstm_fcn\"\ndense1 = 32\ndense2 = 16\nlstm_hidden = 8\n",
    )
    .map_err(|e| e.to_string())?;
    let a = end_to_end(&root.path().join("a"), &cfg)?;
    let b = end_to_end(&root.path().join("b"), &cfg)?;
    check(
        a == b,
        format!("checkpoint {} bytes, report {} bytes, log {} bytes; identical: {}", a.0.len(), a.1.len(), a.2.len(), a == b),
    )
}

fn main() {
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let criteria: [Criterion; 9] = [
        (1, "iou matches pixel counting", iou_oracle),
        (2, "reward formulas", reward_conformance),
        (3, "action geometry", action_geometry),
        (4, "oracle reachability", reachability),
        (5, "gradient check", gradient_check),
        (6, "overfit one transition", overfit_one),
        (7, "learning on synthetic data", learning),
        (8, "step statistics", statistics_harness),
        (9, "end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let res = f();
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} [{name}]: {tag} - {detail} ({:.1?})", t.elapsed());
        failed += res.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
