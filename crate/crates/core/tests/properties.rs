use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use active_detect::agent::{bellman_targets, epsilon_at, select_action, ReplayBuffer, TrainConfig, Transition};
use active_detect::dataset::{prepare_canvas, split_dataset, test_size, AnnotatedImage, Target};
use active_detect::encoder::{HistoryWindow, StateVector};
use active_detect::env::{apply_action, iou, select_reward, step_reward, Action, BoxF, RewardParams, CANVAS};
use active_detect::inference::match_detections;
use active_detect::raster::Raster;

const STEP: f64 = 6.72;

fn frame() -> impl Strategy<Value = BoxF> {
    (0.0..CANVAS, 0.0..CANVAS, 0.0..CANVAS, 0.0..CANVAS).prop_map(|(a, b, c, d)| {
        BoxF::new(a.min(c), b.min(d), a.max(c), b.max(d))
    })
}

fn sized_frame() -> impl Strategy<Value = BoxF> {
    (0.0..200.0, 0.0..200.0, 1.0..224.0, 1.0..224.0)
        .prop_map(|(x, y, w, h): (f64, f64, f64, f64)| BoxF::new(x, y, (x + w).min(CANVAS), (y + h).min(CANVAS)))
        .prop_filter("positive area", |b| b.width() >= 1.0 && b.height() >= 1.0)
}

fn moving_action() -> impl Strategy<Value = Action> {
    (1usize..9).prop_map(|i| Action::from_index(i).unwrap())
}

fn any_action() -> impl Strategy<Value = Action> {
    (0usize..9).prop_map(|i| Action::from_index(i).unwrap())
}

fn close(a: &BoxF, b: &BoxF) -> bool {
    [(a.xmin, b.xmin), (a.ymin, b.ymin), (a.xmax, b.xmax), (a.ymax, b.ymax)]
        .iter()
        .all(|(u, v)| (u - v).abs() < 1e-9)
}

fn image(name: String) -> AnnotatedImage {
    AnnotatedImage { name, pixels: Raster::new(2, 2), targets: vec![] }
}

proptest! {
    #[test]
    fn actions_keep_frames_valid(f in frame(), actions in prop::collection::vec(moving_action(), 1..60)) {
        let mut cur = f;
        for a in actions {
            cur = apply_action(&cur, a, STEP).unwrap();
            prop_assert!(cur.is_valid_frame(), "{a:?} -> {cur}");
            prop_assert!(0.0 <= cur.xmin && cur.xmin <= cur.xmax && cur.xmax <= CANVAS);
            prop_assert!(0.0 <= cur.ymin && cur.ymin <= cur.ymax && cur.ymax <= CANVAS);
        }
    }

    #[test]
    fn iou_symmetric_and_bounded(a in sized_frame(), b in frame()) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translations_round_trip(x in 10.0..100.0, y in 10.0..100.0, w in 20.0..100.0, h in 20.0..100.0) {
        let f = BoxF::new(x, y, x + w, y + h);
        for (there, back) in [(Action::MoveRight, Action::MoveLeft), (Action::MoveDown, Action::MoveUp)] {
            let moved = apply_action(&f, there, STEP).unwrap();
            prop_assert!((moved.area() - f.area()).abs() < 1e-9);
            prop_assert!(close(&apply_action(&moved, back, STEP).unwrap(), &f));
        }
    }

    #[test]
    fn enlarge_then_shrink_round_trips(x in 10.0..100.0, y in 10.0..100.0, w in 20.0..100.0, h in 20.0..100.0) {
        let f = BoxF::new(x, y, x + w, y + h);
        let big = apply_action(&f, Action::Enlarge, STEP).unwrap();
        prop_assert!(close(&apply_action(&big, Action::Shrink, STEP).unwrap(), &f));
    }

    #[test]
    fn rewards_stay_in_band(iou_a in 0.0..=1.0f64, iou_b in 0.0..=1.0f64, t in 0usize..=100) {
        let p = RewardParams::default();
        let sel = select_reward(iou_a, t, &p);
        if iou_a >= p.tau {
            prop_assert!(sel >= 3.0);
        } else {
            prop_assert!(sel <= -2.8 + 1e-12);
        }
        let r = step_reward(iou_a, iou_b, t, &p);
        let expect = if iou_b > iou_a { 1.0 } else { -1.0 } - t as f64 / 500.0;
        prop_assert!((r - expect).abs() < 1e-12);
        prop_assert!(r.abs() <= 1.2 + 1e-12);
    }

    #[test]
    fn epsilon_non_increasing_and_bounded(round in 0usize..200) {
        let cfg = TrainConfig::default();
        let e = epsilon_at(round, &cfg);
        let closed = (1.0 - 0.18 * round.min(5) as f64).max(0.1);
        prop_assert!((e - closed).abs() < 1e-9);
        prop_assert!((0.1..=1.0).contains(&e));
        prop_assert!(epsilon_at(round + 1, &cfg) <= e);
    }

    #[test]
    fn history_rows_are_ones_or_one_hot(actions in prop::collection::vec(any_action(), 0..30)) {
        let mut h = HistoryWindow::new();
        for &a in &actions {
            h.push(a);
        }
        let used = actions.len().min(9);
        for (i, row) in h.rows().iter().enumerate() {
            if i < used {
                prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                prop_assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 8);
                prop_assert_eq!(row[actions[actions.len() - 1 - i].index()], 1.0);
            } else {
                prop_assert!(row.iter().all(|&v| v == 1.0));
            }
        }
        prop_assert_eq!(h.flatten().len(), 81);
    }

    #[test]
    fn split_partitions_input(n in 1usize..120, seed in any::<u64>()) {
        let images: Vec<_> = (0..n).map(|i| image(format!("img{i:03}"))).collect();
        let s = split_dataset(images.clone(), 0.9, seed).unwrap();
        prop_assert_eq!(s.test.len(), test_size(n, 0.9));
        prop_assert_eq!(s.test.len(), (n as f64 * 0.1 + 1e-9).round() as usize);
        let mut names: Vec<_> = s.train.iter().chain(&s.test).map(|i| i.name.clone()).collect();
        names.sort();
        prop_assert_eq!(names, images.iter().map(|i| i.name.clone()).collect::<Vec<_>>());
        let again = split_dataset(images, 0.9, seed).unwrap();
        prop_assert_eq!(again.test, s.test);
    }

    #[test]
    fn prepare_canvas_rescale_inverts(w in 8usize..80, h in 8usize..80, f in frame()) {
        let scale = (w as f64 / CANVAS, h as f64 / CANVAS);
        let original = f.scaled(scale.0, scale.1);
        let img = AnnotatedImage {
            name: "x".into(),
            pixels: Raster::new(w, h),
            targets: vec![Target { label: "t".into(), bbox: original }],
        };
        let prepared = prepare_canvas(&img).unwrap();
        prop_assert_eq!((prepared.width(), prepared.height()), (224, 224));
        let back = prepared.targets[0].bbox.scaled(1.0 / (224.0 / w as f64), 1.0 / (224.0 / h as f64));
        prop_assert!((back.xmin - original.xmin).abs() < 1e-6 && (back.xmax - original.xmax).abs() < 1e-6);
        prop_assert!((back.ymin - original.ymin).abs() < 1e-6 && (back.ymax - original.ymax).abs() < 1e-6);
    }

    #[test]
    fn replay_size_bounded_oldest_evicted(cap in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(cap);
        for i in 0..pushes {
            buf.push(transition(i as f64, false));
            prop_assert!(buf.len() <= cap);
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        if pushes > 0 {
            prop_assert_eq!(buf.get(0).unwrap().reward, pushes.saturating_sub(cap) as f64);
        }
    }

    #[test]
    fn matching_bookkeeping(truth in prop::collection::vec(sized_frame(), 0..5), dets in prop::collection::vec(sized_frame(), 0..6)) {
        let targets: Vec<Target> = truth.iter().map(|b| Target { label: "t".into(), bbox: *b }).collect();
        let m = match_detections(&targets, &dets, 0.5);
        let tp = m.detections.iter().filter(|d| d.1).count();
        prop_assert_eq!(m.detections.len(), dets.len());
        prop_assert_eq!(tp + m.unmatched.len(), truth.len());
    }

    #[test]
    fn bellman_terminal_and_zero_gamma(rewards in prop::collection::vec(-3.0..3.0f64, 1..8), gamma in 0.0..0.99f64) {
        let q = active_detect::agent::QFunction::new_seeded(
            active_detect::agent::Architecture::Mlp { hidden: 4 }, 90, 1).unwrap();
        let batch: Vec<Transition> = rewards.iter().enumerate().map(|(i, &r)| {
            let mut t = transition(r, i % 2 == 0);
            t.state = StateVector(vec![0.1; 90]);
            if let Some(s) = &mut t.next_state { *s = StateVector(vec![0.2; 90]); }
            t
        }).collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let y = bellman_targets(&refs, &q, gamma).unwrap();
        let y0 = bellman_targets(&refs, &q, 0.0).unwrap();
        for (i, t) in batch.iter().enumerate() {
            if t.terminal() {
                prop_assert_eq!(y[i], t.reward);
            }
            prop_assert_eq!(y0[i], t.reward);
        }
    }
}

fn transition(reward: f64, terminal: bool) -> Transition {
    Transition {
        state: StateVector(vec![0.0]),
        action: Action::MoveLeft,
        reward,
        next_state: (!terminal).then(|| StateVector(vec![0.0])),
    }
}

#[test]
fn full_exploration_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = [0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut counts = [0usize; 9];
    for _ in 0..90_000 {
        counts[select_action(&q, 1.0, &mut rng).index()] += 1;
    }
    let sigma = (90_000.0f64 * (1.0 / 9.0) * (8.0 / 9.0)).sqrt();
    for (a, &c) in counts.iter().enumerate() {
        assert!((c as f64 - 10_000.0).abs() <= 3.0 * sigma, "action {a}: {c}");
    }
}

#[test]
fn zero_exploration_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0];
    for _ in 0..1000 {
        assert_eq!(select_action(&q, 0.0, &mut rng), Action::Widen);
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(1000);
    for i in 0..1000 {
        buf.push(transition(i as f64, false));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reps = 10_000;
    let mut hits = vec![0usize; 1000];
    for _ in 0..reps {
        let batch = buf.sample(100, &mut rng).unwrap();
        let mut seen = std::collections::HashSet::new();
        for t in batch {
            assert!(seen.insert(t.reward as usize), "drawn twice in one batch");
            hits[t.reward as usize] += 1;
        }
    }
    // Pearson statistic against chi-square(999), normal approximation.
    let expected = reps as f64 * 0.1;
    let chi2: f64 = hits.iter().map(|&h| (h as f64 - expected).powi(2) / expected).sum();
    let (df, spread) = (999.0, (2.0f64 * 999.0).sqrt());
    assert!((chi2 - df).abs() < 5.0 * spread, "chi-square {chi2:.1} for {df} degrees of freedom");
    // Bonferroni over 1000 entries.
    let sigma = (reps as f64 * 0.1 * 0.9).sqrt();
    let outside: Vec<_> = hits.iter().enumerate().filter(|(_, &h)| (h as f64 - expected).abs() > 5.0 * sigma).collect();
    assert!(outside.is_empty(), "{outside:?}");
}

#[test]
fn full_batch_returns_whole_buffer() {
    let mut buf = ReplayBuffer::new(100);
    for i in 0..100 {
        buf.push(transition(i as f64, true));
    }
    let mut got: Vec<usize> = buf.sample(100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().iter().map(|t| t.reward as usize).collect();
    got.sort();
    assert_eq!(got, (0..100).collect::<Vec<_>>());
    assert!(buf.sample(101, &mut ChaCha8Rng::seed_from_u64(0)).is_none());
}
