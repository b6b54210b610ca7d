//! Alternating weakly supervised training: ordered assignments `Y` from
//! dynamic programming, then classifier updates on the assigned segments.
//!
//! Two modes are available. `Simple` runs a few epochs of mini-batch Adam per
//! alternation. `Majorize` takes one full gradient step of size `delta` and
//! picks `Y` against the quadratic upper bound
//! `sum Y F(theta) - delta/2 |sum Y grad F(theta)|^2`, which makes the
//! objective non-increasing when `delta` is at most the inverse smoothness
//! constant of the summed loss.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dp::{
    apply_windows, check_windows_feasible, sample_feasible, solve, Assignment, AssignmentMode,
    ConstraintWindows, CostMatrix,
};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::matrix::dot;
use crate::model::{
    adam_step, batch_loss_and_grad, gradient_step, loss_term_table, summed_loss_and_grad,
    AdamState, ComponentClassifierBank, Example, DEFAULT_DROPOUT, DEFAULT_LEARNING_RATE,
};
use crate::par::Exec;
use crate::task::TaskSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TrainMode {
    #[default]
    Simple,
    Majorize,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Simple => "simple",
            TrainMode::Majorize => "majorize",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(TrainMode::Simple),
            "majorize" => Ok(TrainMode::Majorize),
            other => Err(Error::invalid(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub init_epochs: usize,
    pub outer_iterations: usize,
    /// Adam epochs per alternation in simple mode.
    pub inner_epochs: usize,
    /// Adam learning rate, or the gradient step `delta` in majorize mode.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub use_text_constraints: bool,
    pub assignment_mode: AssignmentMode,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Simple,
            init_epochs: 30,
            outer_iterations: 30,
            inner_epochs: 1,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 64,
            dropout: DEFAULT_DROPOUT,
            use_text_constraints: true,
            assignment_mode: AssignmentMode::SingleFrame,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.inner_epochs == 0 {
            return Err(Error::invalid("batch size and inner epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.mode == TrainMode::Majorize && self.assignment_mode != AssignmentMode::SingleFrame
        {
            return Err(Error::invalid("majorize mode needs single-frame assignments"));
        }
        Ok(())
    }
}

/// A training video: features, the index of its task in the [`TaskSet`] and
/// optional text-derived windows.
#[derive(Clone, Debug)]
pub struct TrainingVideo {
    pub task: usize,
    pub features: FeatureSequence,
    pub windows: Option<ConstraintWindows>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub bank: ComponentClassifierBank,
    pub optimizer: AdamState,
    /// Current assignment per video; `None` for skipped videos.
    pub assignments: Vec<Option<Assignment>>,
    pub history: Vec<f64>,
    active: Vec<bool>,
    majorize_step: f64,
    rng: ChaCha8Rng,
}

impl TrainState {
    /// Whether video `i` takes part in training.
    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    /// The gradient step used in majorize mode.
    pub fn majorize_step(&self) -> f64 {
        self.majorize_step
    }
}

fn effective_windows(video: &TrainingVideo, num_steps: usize, config: &TrainConfig) -> ConstraintWindows {
    match (&video.windows, config.use_text_constraints) {
        (Some(w), true) => w.clamped(video.features.len()),
        _ => ConstraintWindows::unconstrained(num_steps),
    }
}

fn check_videos(videos: &[TrainingVideo], tasks: &TaskSet) -> Result<usize> {
    let first = videos.first().ok_or_else(|| Error::invalid("no training videos"))?;
    let dim = first.features.dim();
    for (i, v) in videos.iter().enumerate() {
        if v.task >= tasks.len() {
            return Err(Error::invalid(format!(
                "video {i} refers to task index {} but only {} tasks exist",
                v.task,
                tasks.len()
            )));
        }
        if v.features.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: dim,
                got: v.features.dim(),
            });
        }
        if let Some(w) = &v.windows {
            let k = tasks.task(v.task).num_steps();
            if w.num_steps() != k {
                return Err(Error::DimensionMismatch {
                    what: "constraint window count",
                    expected: k,
                    got: w.num_steps(),
                });
            }
        }
    }
    Ok(dim)
}

/// Upper bound on the smoothness constant of `sum_{t,k} Y_tk F_tk` over all
/// single-frame `Y`. Each term is the cross-entropy (Hessian at most 1/2)
/// composed with a linear map of squared norm at most `K (|x|^2 + 1)`.
pub fn smoothness_bound(videos: &[TrainingVideo], tasks: &TaskSet) -> f64 {
    videos
        .iter()
        .map(|v| {
            let k = tasks.task(v.task).num_steps() as f64;
            let max_sq = (0..v.features.len())
                .map(|t| {
                    let x = v.features.segment(t);
                    dot(x, x)
                })
                .fold(0.0, f64::max);
            k * 0.5 * k * (max_sq + 1.0)
        })
        .sum()
}

/// Builds the zero bank, draws `init_epochs` rounds of random feasible
/// assignments with one supervised epoch each, then sets the assignments to
/// the DP optimum under the resulting bank.
pub fn initialize(videos: &[TrainingVideo], tasks: &TaskSet, config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    let dim = check_videos(videos, tasks)?;
    let bank = ComponentClassifierBank::zeros(tasks.vocabulary().len(), dim, config.dropout)?;

    let mut active = Vec::with_capacity(videos.len());
    for (i, v) in videos.iter().enumerate() {
        let k = tasks.task(v.task).num_steps();
        let ok = match check_windows_feasible(v.features.len(), &effective_windows(v, k, config)) {
            Ok(()) => true,
            Err(Error::Infeasible(msg)) => {
                log::warn!("skipping video {i}: {msg}");
                false
            }
            Err(e) => return Err(e),
        };
        active.push(ok);
    }
    if !active.iter().any(|&a| a) {
        return Err(Error::infeasible("every training video is infeasible under its windows"));
    }

    let mut majorize_step = config.learning_rate;
    if config.mode == TrainMode::Majorize {
        let bound = smoothness_bound(videos, tasks);
        if majorize_step * bound > 1.0 {
            log::warn!(
                "step {majorize_step} exceeds the safe bound {}; using the bound",
                1.0 / bound
            );
            majorize_step = 1.0 / bound;
        }
    }

    let mut state = TrainState {
        optimizer: AdamState::new(&bank, config.learning_rate),
        bank,
        assignments: vec![None; videos.len()],
        history: Vec::new(),
        active,
        majorize_step,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };

    let jobs: Vec<usize> = (0..videos.len()).filter(|&i| state.active[i]).collect();
    for _ in 0..config.init_epochs {
        let seeded: Vec<(usize, u64)> = jobs.iter().map(|&i| (i, state.rng.random())).collect();
        let samples = config.exec.try_map(&seeded, |_, &(i, seed)| {
            let v = &videos[i];
            let k = tasks.task(v.task).num_steps();
            sample_feasible(v.features.len(), k, &effective_windows(v, k, config), seed)
        })?;
        let labels: Vec<(usize, usize, usize)> = seeded
            .iter()
            .zip(&samples)
            .flat_map(|(&(i, _), a)| a.iter().map(move |(t, k)| (i, t, k)))
            .collect();
        supervised_epoch(&mut state, videos, tasks, labels, config)?;
    }

    state.assignments = solve_assignments(&state, videos, tasks, config, TrainMode::Simple)?;
    Ok(state)
}

fn supervised_epoch(
    state: &mut TrainState,
    videos: &[TrainingVideo],
    tasks: &TaskSet,
    mut labels: Vec<(usize, usize, usize)>,
    config: &TrainConfig,
) -> Result<()> {
    labels.shuffle(&mut state.rng);
    for chunk in labels.chunks(config.batch_size) {
        let batch: Vec<Example<'_>> = chunk
            .iter()
            .map(|&(i, t, k)| Example {
                x: videos[i].features.segment(t),
                matrix: tasks.matrix(videos[i].task),
                step: k,
            })
            .collect();
        let seed = state.rng.random();
        let (loss, grad) = batch_loss_and_grad(&state.bank, &batch, Some(seed))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        adam_step(&mut state.bank, &grad, &mut state.optimizer)?;
    }
    Ok(())
}

fn solve_assignments(
    state: &TrainState,
    videos: &[TrainingVideo],
    tasks: &TaskSet,
    config: &TrainConfig,
    cost: TrainMode,
) -> Result<Vec<Option<Assignment>>> {
    let delta = state.majorize_step;
    config.exec.try_map(videos, |i, v| {
        if !state.active[i] {
            return Ok(None);
        }
        let a = tasks.matrix(v.task);
        let majorize = cost == TrainMode::Majorize;
        let table = loss_term_table(&state.bank, a, &v.features, majorize)?;
        let mut values = table.values;
        if let Some(norms) = table.grad_sq_norms {
            for (c, n) in values.as_mut_slice().iter_mut().zip(norms.as_slice()) {
                *c -= 0.5 * delta * n;
            }
        }
        let costs = apply_windows(
            &CostMatrix::new(values)?,
            &effective_windows(v, a.num_steps(), config),
        )?;
        match solve(&costs, config.assignment_mode) {
            Ok(y) => Ok(Some(y)),
            Err(Error::Infeasible(msg)) => {
                log::warn!("skipping video {i}: {msg}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    })
}

fn examples<'a>(
    assignments: &[Option<Assignment>],
    videos: &'a [TrainingVideo],
    tasks: &'a TaskSet,
) -> Vec<Example<'a>> {
    let mut out = Vec::new();
    for (v, y) in videos.iter().zip(assignments) {
        if let Some(y) = y {
            let matrix = tasks.matrix(v.task);
            out.extend(y.iter().map(|(t, k)| Example {
                x: v.features.segment(t),
                matrix,
                step: k,
            }));
        }
    }
    out
}

/// `sum Y F(theta) - delta/2 |sum Y grad F(theta)|^2`.
fn majorizer(
    bank: &ComponentClassifierBank,
    assignments: &[Option<Assignment>],
    videos: &[TrainingVideo],
    tasks: &TaskSet,
    delta: f64,
) -> Result<f64> {
    let (loss, grad) = summed_loss_and_grad(bank, &examples(assignments, videos, tasks))?;
    Ok(loss - 0.5 * delta * grad.squared_norm())
}

/// New assignments under the current bank. Simple mode minimizes
/// `sum Y F`; majorize mode minimizes `sum Y (F - delta/2 |grad F|^2)` and
/// keeps the incumbent when it has the lower exact majorizer.
pub fn update_assignments(
    state: &TrainState,
    videos: &[TrainingVideo],
    tasks: &TaskSet,
    config: &TrainConfig,
) -> Result<Vec<Option<Assignment>>> {
    let candidate = solve_assignments(state, videos, tasks, config, config.mode)?;
    if config.mode == TrainMode::Simple {
        return Ok(candidate);
    }
    let same_support = candidate
        .iter()
        .zip(&state.assignments)
        .all(|(c, i)| c.is_some() == i.is_some());
    if !same_support {
        return Ok(candidate);
    }
    let delta = state.majorize_step;
    let new = majorizer(&state.bank, &candidate, videos, tasks, delta)?;
    let old = majorizer(&state.bank, &state.assignments, videos, tasks, delta)?;
    if new <= old {
        Ok(candidate)
    } else {
        log::debug!("keeping incumbent assignments ({old} < {new})");
        Ok(state.assignments.clone())
    }
}

/// Parameter update on the current assignments.
pub fn update_parameters(
    state: &mut TrainState,
    videos: &[TrainingVideo],
    tasks: &TaskSet,
    config: &TrainConfig,
) -> Result<()> {
    match config.mode {
        TrainMode::Simple => {
            let labels: Vec<(usize, usize, usize)> = state
                .assignments
                .iter()
                .enumerate()
                .filter_map(|(i, y)| y.as_ref().map(|y| (i, y)))
                .flat_map(|(i, y)| y.iter().map(move |(t, k)| (i, t, k)))
                .collect();
            for _ in 0..config.inner_epochs {
                supervised_epoch(state, videos, tasks, labels.clone(), config)?;
            }
        }
        TrainMode::Majorize => {
            let ex = examples(&state.assignments, videos, tasks);
            let (loss, grad) = summed_loss_and_grad(&state.bank, &ex)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss".into()));
            }
            gradient_step(&mut state.bank, &grad, state.majorize_step)?;
        }
    }
    Ok(())
}

/// `sum_v sum_{t,k} Y_tk F_tk` with dropout off.
pub fn objective(state: &TrainState, videos: &[TrainingVideo], tasks: &TaskSet) -> Result<f64> {
    let ex = examples(&state.assignments, videos, tasks);
    let mut total = 0.0;
    for e in &ex {
        let f = state.bank.step_scores(e.matrix, e.x)?;
        total += crate::model::step_cross_entropy(&f, e.step)?.0;
    }
    Ok(total)
}

/// Initialization followed by `outer_iterations` alternations, recording the
/// objective after each.
pub fn train_state(videos: &[TrainingVideo], tasks: &TaskSet, config: &TrainConfig) -> Result<TrainState> {
    let mut state = initialize(videos, tasks, config)?;
    for it in 0..config.outer_iterations {
        state.assignments = update_assignments(&state, videos, tasks, config)?;
        update_parameters(&mut state, videos, tasks, config)?;
        let value = objective(&state, videos, tasks)?;
        log::info!("iteration {}: objective {value:.6}", it + 1);
        state.history.push(value);
    }
    Ok(state)
}

pub fn train(
    videos: &[TrainingVideo],
    tasks: &TaskSet,
    config: &TrainConfig,
) -> Result<(ComponentClassifierBank, Vec<f64>)> {
    let state = train_state(videos, tasks, config)?;
    Ok((state.bank, state.history))
}
