//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits non-zero if any check fails. The CrossTask check runs only when
//! `CROSSTASK_TASKS`, `CROSSTASK_ANNOTATIONS` and `CROSSTASK_FEATURES` are set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ordered_steps::dp::{
    brute_force, sample_feasible, solve, AssignmentMode, ConstraintWindows, CostMatrix,
};
use ordered_steps::eval::{corpus_stats, order_consistency, uniform_baseline, GroundTruth};
use ordered_steps::io;
use ordered_steps::model::{
    batch_loss_and_grad, compose_step_scores, ComponentClassifierBank, Example,
};
use ordered_steps::synth::{generate_synthetic, run_experiment, SyntheticCorpus, SyntheticSpec};
use ordered_steps::task::{build_vocabulary, Granularity, StepComponentMatrix, TaskSet};
use ordered_steps::text::{text_windows, TextParams};
use ordered_steps::trainer::{train, TrainConfig, TrainMode, TrainingVideo};
use ordered_steps::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DP_INSTANCES: usize = 200;
const DP_BUDGET: Duration = Duration::from_secs(10);
const MONOTONE_TOL: f64 = 1e-9;
const MONOTONE_BUDGET: Duration = Duration::from_secs(120);
const GRAD_INSTANCES: usize = 50;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const SEEDS: u64 = 5;
const SHARING_GAP: f64 = 0.03;
const UNIFORM_GAP: f64 = 0.15;
const SHARING_BUDGET: Duration = Duration::from_secs(600);
const TEXT_GAP: f64 = 0.03;
const CONTAINMENT: f64 = 0.90;
const CROSSTASK_COMPONENTS: usize = 383;
const CROSSTASK_BACKGROUND: f64 = 0.72;
const CROSSTASK_MISSING: f64 = 0.31;
const CROSSTASK_TOL: f64 = 0.02;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    ensure(elapsed <= budget, format!("took {elapsed:?}, budget {budget:?}"))
}

/// Costs are multiples of 1/4 so every sum is exact.
fn random_costs(rng: &mut ChaCha8Rng, t_len: usize, k_len: usize) -> CostMatrix {
    let data = (0..t_len * k_len)
        .map(|_| rng.random_range(-40..=40) as f64 / 4.0)
        .collect();
    CostMatrix::new(Mat::from_vec(t_len, k_len, data)).unwrap()
}

/// Windows around a random feasible assignment, so the instance stays
/// feasible.
fn random_windows(rng: &mut ChaCha8Rng, t_len: usize, k_len: usize) -> ConstraintWindows {
    let anchor = sample_feasible(t_len, k_len, &ConstraintWindows::unconstrained(k_len), rng.random())
        .unwrap()
        .times();
    let windows = anchor
        .iter()
        .map(|&t| {
            rng.random_bool(0.8).then(|| {
                let lo = t.saturating_sub(rng.random_range(0..=2));
                let hi = (t + rng.random_range(0..=2)).min(t_len - 1);
                (lo, hi)
            })
        })
        .collect();
    ConstraintWindows::new(windows).unwrap()
}

fn dp_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut solved = 0;
    for (mode, max_t, max_k) in [(AssignmentMode::Runs, 8, 3), (AssignmentMode::SingleFrame, 12, 4)] {
        for windowed in [false, true] {
            for i in 0..DP_INSTANCES {
                let k_len = rng.random_range(1..=max_k);
                let t_len = rng.random_range(k_len..=max_t);
                let mut costs = random_costs(&mut rng, t_len, k_len);
                if windowed {
                    let w = random_windows(&mut rng, t_len, k_len);
                    costs = ordered_steps::dp::apply_windows(&costs, &w).unwrap();
                }
                let dp = solve(&costs, mode).map_err(|e| format!("{mode:?} #{i}: {e}"))?;
                let bf = brute_force(&costs, mode).map_err(|e| format!("{mode:?} #{i}: {e}"))?;
                let (a, b) = (dp.cost(&costs), bf.cost(&costs));
                ensure(a == b, format!("{mode:?} windows={windowed} #{i}: dp {a} vs brute force {b}"))?;
                solved += 1;
            }
        }
    }
    within(start.elapsed(), DP_BUDGET)?;
    Ok(format!("{solved} instances equal, {:?}", start.elapsed()))
}

fn majorize_corpus(seed: u64) -> SyntheticCorpus {
    generate_synthetic(&SyntheticSpec {
        num_tasks: 5,
        videos_per_task: 10,
        video_length: 60,
        feature_dim: 16,
        train_fraction: 1.0,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn training_videos(corpus: &SyntheticCorpus) -> Vec<TrainingVideo> {
    corpus
        .train_videos()
        .map(|v| TrainingVideo {
            task: v.task,
            features: v.features.clone(),
            windows: Some(
                text_windows(&v.transcript, &corpus.tasks[v.task], v.features.len(), 1.0, TextParams::default())
                    .unwrap(),
            ),
        })
        .collect()
}

fn majorize_monotone() -> Check {
    let start = Instant::now();
    let mut drops = Vec::new();
    for seed in 0..SEEDS {
        let corpus = majorize_corpus(seed);
        let tasks = TaskSet::new(corpus.tasks.clone(), Granularity::Component).unwrap();
        let videos = training_videos(&corpus);
        // A large rate is clamped to the inverse smoothness bound.
        let config = TrainConfig {
            mode: TrainMode::Majorize,
            outer_iterations: 30,
            learning_rate: 1.0,
            seed,
            ..TrainConfig::default()
        };
        let (_, history) = train(&videos, &tasks, &config).map_err(|e| e.to_string())?;
        ensure(history.len() == 30, format!("seed {seed}: {} iterations recorded", history.len()))?;
        for (i, w) in history.windows(2).enumerate() {
            ensure(
                w[1] <= w[0] + MONOTONE_TOL,
                format!("seed {seed}, iteration {}: {} -> {}", i + 2, w[0], w[1]),
            )?;
        }
        drops.push(history[0] - history[29]);
    }
    within(start.elapsed(), MONOTONE_BUDGET)?;
    Ok(format!(
        "non-increasing over {SEEDS} seeds, objective drops {:?}, {:?}",
        drops.iter().map(|d| (d * 1e3).round() / 1e3).collect::<Vec<_>>(),
        start.elapsed()
    ))
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..GRAD_INSTANCES {
        let m = rng.random_range(1..=6);
        let d = rng.random_range(1..=5);
        let k_len = rng.random_range(1..=4);
        let rows: Vec<Vec<usize>> = (0..k_len)
            .map(|_| {
                let mut r: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
                if r.is_empty() {
                    r.push(rng.random_range(0..m));
                }
                r
            })
            .collect();
        let a = StepComponentMatrix::from_rows(m, rows).unwrap();
        let mut bank = ComponentClassifierBank::from_parts(
            m,
            d,
            (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
            0.0,
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let batch: Vec<Example<'_>> = xs
            .iter()
            .map(|x| Example { x, matrix: &a, step: rng.random_range(0..k_len) })
            .collect();
        let (_, grad) = batch_loss_and_grad(&bank, &batch, None).map_err(|e| e.to_string())?;
        for p in 0..bank.num_params() {
            let orig = bank.param(p);
            bank.set_param(p, orig + GRAD_STEP);
            let plus = batch_loss_and_grad(&bank, &batch, None).unwrap().0;
            bank.set_param(p, orig - GRAD_STEP);
            let minus = batch_loss_and_grad(&bank, &batch, None).unwrap().0;
            bank.set_param(p, orig);
            let fd = (plus - minus) / (2.0 * GRAD_STEP);
            let an = grad.get(p);
            let scale = fd.abs().max(an.abs());
            // Gradients that vanish (K = 1) are compared absolutely.
            let err = if scale < 1e-8 { (fd - an).abs() } else { (fd - an).abs() / scale };
            worst = worst.max(err);
            ensure(err < GRAD_REL_TOL, format!("instance {i}, param {p}: fd {fd} vs analytic {an}"))?;
        }
    }
    within(start.elapsed(), GRAD_BUDGET)?;
    Ok(format!("worst relative error {worst:.2e} over {GRAD_INSTANCES} instances"))
}

/// The criterion-4 corpus for one seed.
fn sharing_corpus(seed: u64, jitter: f64) -> SyntheticCorpus {
    generate_synthetic(&SyntheticSpec {
        num_tasks: 10,
        shared_component_pool_size: 12,
        signal_strength: 1.0,
        noise_std: 0.75,
        missing_step_prob: 0.2,
        narration_jitter_sec: jitter,
        feature_dim: 8,
        videos_per_task: 20,
        video_length: 60,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_recall(granularity: Granularity, use_text: bool) -> Result<(f64, f64), String> {
    let (mut rec, mut uni) = (Vec::new(), Vec::new());
    for seed in 0..SEEDS {
        let corpus = sharing_corpus(seed, 2.0);
        let config = TrainConfig {
            use_text_constraints: use_text,
            seed,
            ..TrainConfig::default()
        };
        let r = run_experiment(&corpus, granularity, &config, TextParams::default()).map_err(|e| e.to_string())?;
        rec.push(r.recall);
        uni.push(r.uniform_recall);
    }
    Ok((mean(&rec), mean(&uni)))
}

fn sharing_gain() -> Check {
    let start = Instant::now();
    let (comp, uniform) = mean_recall(Granularity::Component, true)?;
    let (shared, _) = mean_recall(Granularity::SharedStep, true)?;
    let (task, _) = mean_recall(Granularity::TaskStep, true)?;
    let summary = format!(
        "component {comp:.3}, shared-step {shared:.3}, task-step {task:.3}, uniform {uniform:.3}"
    );
    ensure(comp >= shared && shared >= task, format!("ordering violated: {summary}"))?;
    ensure(comp - task >= SHARING_GAP, format!("sharing gap below {SHARING_GAP}: {summary}"))?;
    ensure(task - uniform >= UNIFORM_GAP, format!("not {UNIFORM_GAP} above uniform: {summary}"))?;
    within(start.elapsed(), SHARING_BUDGET)?;
    Ok(summary)
}

fn text_ablation() -> Check {
    let (with, _) = mean_recall(Granularity::Component, true)?;
    let (without, _) = mean_recall(Granularity::Component, false)?;
    let summary = format!("with narration {with:.3}, without {without:.3}");
    ensure(with - without >= TEXT_GAP, format!("gain below {TEXT_GAP}: {summary}"))?;
    Ok(summary)
}

fn text_localization() -> Check {
    let (mut hit, mut total) = (0usize, 0usize);
    for seed in 0..SEEDS {
        let corpus = sharing_corpus(seed, 2.0);
        for v in &corpus.videos {
            let w = text_windows(&v.transcript, &corpus.tasks[v.task], v.features.len(), 1.0, TextParams::default())
                .map_err(|e| e.to_string())?;
            for (k, span) in v.planted.iter().enumerate() {
                if let Some((start, _)) = *span {
                    total += 1;
                    hit += usize::from(w.allows(k, start));
                }
            }
        }
    }
    let frac = hit as f64 / total as f64;
    ensure(frac >= CONTAINMENT, format!("{hit}/{total} = {frac:.3} below {CONTAINMENT}"))?;
    Ok(format!("{hit}/{total} = {frac:.3} of true starts inside their window"))
}

fn exact_values() -> Check {
    let oc = order_consistency(&[2, 1, 3]).map_err(|e| e.to_string())?;
    ensure(oc == 2.0 / 3.0, format!("order consistency {oc}"))?;

    let a = StepComponentMatrix::from_rows(3, vec![vec![0], vec![1], vec![2]]).unwrap();
    let bank = ComponentClassifierBank::zeros(3, 2, 0.5).unwrap();
    let x = [0.7, -1.3];
    for k in 0..3 {
        let (loss, _) = batch_loss_and_grad(&bank, &[Example { x: &x, matrix: &a, step: k }], None).unwrap();
        ensure(loss == 3f64.ln(), format!("zero-weight loss {loss}"))?;
    }

    let row = StepComponentMatrix::from_rows(3, vec![vec![0, 2]]).unwrap();
    let f = compose_step_scores(&[0.2, 9.9, 0.4], &row).map_err(|e| e.to_string())?;
    ensure((f[0] - 0.3).abs() <= f64::EPSILON, format!("composition {}", f[0]))?;

    let u = uniform_baseline(10, 2).map_err(|e| e.to_string())?;
    ensure(u.times() == [2, 7], format!("uniform baseline {:?}", u.times()))?;
    Ok("2/3, ln 3, 0.3, (2, 7)".into())
}

fn crosstask_paths() -> Option<(PathBuf, PathBuf, PathBuf)> {
    let var = |name| std::env::var_os(name).map(PathBuf::from);
    Some((var("CROSSTASK_TASKS")?, var("CROSSTASK_ANNOTATIONS")?, var("CROSSTASK_FEATURES")?))
}

fn crosstask(tasks_path: &Path, annotations: &Path, features: &Path) -> Check {
    let tasks = io::read_tasks(tasks_path).map_err(|e| e.to_string())?;
    let vocab = build_vocabulary(&tasks).map_err(|e| e.to_string())?;
    let mut gts: Vec<(GroundTruth, usize)> = Vec::new();
    for task in &tasks {
        let dir = annotations.join(&task.id);
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            let feat = features.join(&task.id).join(format!("{stem}.ctft"));
            let gt = io::read_annotation(&path, task.num_steps()).map_err(|e| e.to_string())?;
            let t_len = io::read_features(&feat).map_err(|e| e.to_string())?.len();
            gts.push((gt, t_len));
        }
    }
    let refs: Vec<_> = gts.iter().map(|(g, t)| (g, *t, 1.0)).collect();
    let stats = corpus_stats(&refs).map_err(|e| e.to_string())?;
    let summary = format!(
        "M = {}, background {:.3}, missing {:.3}",
        vocab.len(),
        stats.background_fraction,
        stats.missing_step_fraction
    );
    ensure(vocab.len() == CROSSTASK_COMPONENTS, summary.clone())?;
    ensure((stats.background_fraction - CROSSTASK_BACKGROUND).abs() <= CROSSTASK_TOL, summary.clone())?;
    ensure((stats.missing_step_fraction - CROSSTASK_MISSING).abs() <= CROSSTASK_TOL, summary.clone())?;
    Ok(summary)
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 7] = [
        ("dp oracle equivalence", dp_oracle),
        ("majorize monotonicity", majorize_monotone),
        ("gradient fidelity", gradient_fidelity),
        ("sharing gain", sharing_gain),
        ("text-constraint ablation", text_ablation),
        ("text localization", text_localization),
        ("exact unit values", exact_values),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[{}] {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[{}] {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    match crosstask_paths() {
        Some((t, a, f)) => match crosstask(&t, &a, &f) {
            Ok(detail) => println!("[8] crosstask statistics: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("[8] crosstask statistics: FAIL ({detail})");
            }
        },
        None => println!("[8] crosstask statistics: SKIPPED (CROSSTASK_* not set)"),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
