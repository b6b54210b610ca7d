//! Linear component classifiers composed into step scores, the softmax
//! cross-entropy over a task's steps, its analytic gradients, and Adam.
//!
//! Step score: `f_k(x) = sum_m A[k,m] g_m(x) / sum_m A[k,m]` with
//! `g_m(x) = w_m . x + b_m`. Loss of labeling segment `t` with step `k`:
//! `F_tk = -log softmax_k(f(x_t))`, the softmax running over the task's steps
//! only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::matrix::{dot, Mat};
use crate::task::StepComponentMatrix;

pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;

/// M linear classifiers over D-dimensional features.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentClassifierBank {
    num_components: usize,
    dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    dropout_rate: f64,
}

impl ComponentClassifierBank {
    pub fn zeros(num_components: usize, dim: usize, dropout_rate: f64) -> Result<Self> {
        Self::from_parts(
            num_components,
            dim,
            vec![0.0; num_components * dim],
            vec![0.0; num_components],
            dropout_rate,
        )
    }

    pub fn from_parts(
        num_components: usize,
        dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        dropout_rate: f64,
    ) -> Result<Self> {
        if num_components == 0 || dim == 0 {
            return Err(Error::invalid("classifier bank needs M >= 1 and D >= 1"));
        }
        if weights.len() != num_components * dim {
            return Err(Error::DimensionMismatch {
                what: "weight count",
                expected: num_components * dim,
                got: weights.len(),
            });
        }
        if biases.len() != num_components {
            return Err(Error::DimensionMismatch {
                what: "bias count",
                expected: num_components,
                got: biases.len(),
            });
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier parameters".into()));
        }
        Ok(ComponentClassifierBank {
            num_components,
            dim,
            weights,
            biases,
            dropout_rate,
        })
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weight_row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.dim..(m + 1) * self.dim]
    }

    /// Total parameter count, weights first then biases.
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.biases[i - self.weights.len()]
        }
    }

    pub fn set_param(&mut self, i: usize, value: f64) {
        let nw = self.weights.len();
        if i < nw {
            self.weights[i] = value;
        } else {
            self.biases[i - nw] = value;
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_matrix(&self, a: &StepComponentMatrix) -> Result<()> {
        if a.num_components() != self.num_components {
            return Err(Error::DimensionMismatch {
                what: "component count",
                expected: self.num_components,
                got: a.num_components(),
            });
        }
        Ok(())
    }

    #[inline]
    fn component_score(&self, m: usize, x: &[f64]) -> f64 {
        dot(self.weight_row(m), x) + self.biases[m]
    }

    /// Outputs of the components in `a.support()`, in that order.
    fn support_scores(&self, a: &StepComponentMatrix, x: &[f64]) -> Vec<f64> {
        a.support()
            .iter()
            .map(|&m| self.component_score(m, x))
            .collect()
    }

    /// `f(x)` for every step of `a`, without dropout.
    pub fn step_scores(&self, a: &StepComponentMatrix, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_matrix(a)?;
        Ok(compose_local(&self.support_scores(a, x), a))
    }
}

/// Same shape as the bank's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BankGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl BankGradient {
    pub fn zeros_like(bank: &ComponentClassifierBank) -> Self {
        BankGradient {
            weights: vec![0.0; bank.weights.len()],
            biases: vec![0.0; bank.biases.len()],
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.biases[i - self.weights.len()]
        }
    }

    pub fn squared_norm(&self) -> f64 {
        dot(&self.weights, &self.weights) + dot(&self.biases, &self.biases)
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(&mut self.biases).for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &BankGradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(dim: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..dim)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect()
}

/// `g = W x + b`; when `training`, `x` first goes through a dropout mask drawn
/// from `seed`.
pub fn forward_components(
    bank: &ComponentClassifierBank,
    x: &[f64],
    training: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    bank.check_dim(x)?;
    let dropped;
    let input = if training && bank.dropout_rate > 0.0 {
        let mask = dropout_mask(bank.dim, bank.dropout_rate, &mut ChaCha8Rng::seed_from_u64(seed));
        dropped = x.iter().zip(&mask).map(|(a, b)| a * b).collect::<Vec<_>>();
        &dropped[..]
    } else {
        x
    };
    Ok((0..bank.num_components)
        .map(|m| bank.component_score(m, input))
        .collect())
}

/// Average of the component outputs active in each step.
pub fn compose_step_scores(g: &[f64], a: &StepComponentMatrix) -> Result<Vec<f64>> {
    if g.len() != a.num_components() {
        return Err(Error::DimensionMismatch {
            what: "component output count",
            expected: a.num_components(),
            got: g.len(),
        });
    }
    (0..a.num_steps())
        .map(|k| {
            let row = a.row(k);
            if row.is_empty() {
                return Err(Error::invalid(format!("step {k} has no components")));
            }
            Ok(row.iter().map(|&m| g[m]).sum::<f64>() / row.len() as f64)
        })
        .collect()
}

fn compose_local(g_support: &[f64], a: &StepComponentMatrix) -> Vec<f64> {
    (0..a.num_steps())
        .map(|k| {
            let row = a.local_row(k);
            row.iter().map(|&j| g_support[j]).sum::<f64>() / row.len() as f64
        })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(f: &[f64]) -> Vec<f64> {
    let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = f.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_sum_exp(f: &[f64]) -> f64 {
    let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-log softmax_k(f)` and its gradient `softmax(f) - e_k`.
pub fn step_cross_entropy(f: &[f64], k: usize) -> Result<(f64, Vec<f64>)> {
    if k >= f.len() {
        return Err(Error::invalid(format!(
            "step index {k} out of range for {} steps",
            f.len()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("step scores".into()));
    }
    let loss = log_sum_exp(f) - f[k];
    let mut grad = softmax(f);
    grad[k] -= 1.0;
    Ok((loss, grad))
}

/// Gradient of the loss with respect to the outputs of `a.support()`, given
/// the gradient with respect to the step scores.
fn support_gradient(a: &StepComponentMatrix, df: &[f64]) -> Vec<f64> {
    let mut dg = vec![0.0; a.support().len()];
    for (k, &d) in df.iter().enumerate() {
        let row = a.local_row(k);
        let share = d / row.len() as f64;
        for &j in row {
            dg[j] += share;
        }
    }
    dg
}

/// One labeled segment: features, its task's step/component matrix and the
/// step it is labeled with.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub matrix: &'a StepComponentMatrix,
    pub step: usize,
}

/// Adds `scale * grad F` of one example into `grad` and returns its loss.
fn accumulate_example(
    bank: &ComponentClassifierBank,
    ex: &Example<'_>,
    input: &[f64],
    grad: &mut BankGradient,
    scale: f64,
) -> Result<f64> {
    let a = ex.matrix;
    let f = compose_local(&bank.support_scores(a, input), a);
    let (loss, df) = step_cross_entropy(&f, ex.step)?;
    let dg = support_gradient(a, &df);
    let dim = bank.dim;
    for (&m, &c) in a.support().iter().zip(&dg) {
        let c = c * scale;
        let row = &mut grad.weights[m * dim..(m + 1) * dim];
        for (w, xi) in row.iter_mut().zip(input) {
            *w += c * xi;
        }
        grad.biases[m] += c;
    }
    Ok(loss)
}

fn check_example(bank: &ComponentClassifierBank, ex: &Example<'_>) -> Result<()> {
    bank.check_dim(ex.x)?;
    bank.check_matrix(ex.matrix)?;
    if ex.step >= ex.matrix.num_steps() {
        return Err(Error::invalid(format!(
            "step index {} out of range for {} steps",
            ex.step,
            ex.matrix.num_steps()
        )));
    }
    Ok(())
}

/// Mean cross-entropy over `batch` and its exact gradient. With
/// `dropout_seed`, every example's features pass through a fresh dropout mask.
pub fn batch_loss_and_grad(
    bank: &ComponentClassifierBank,
    batch: &[Example<'_>],
    dropout_seed: Option<u64>,
) -> Result<(f64, BankGradient)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut grad = BankGradient::zeros_like(bank);
    let scale = 1.0 / batch.len() as f64;
    let mut rng = dropout_seed
        .filter(|_| bank.dropout_rate > 0.0)
        .map(ChaCha8Rng::seed_from_u64);
    let mut total = 0.0;
    for ex in batch {
        check_example(bank, ex)?;
        total += match rng.as_mut() {
            Some(rng) => {
                let mask = dropout_mask(bank.dim, bank.dropout_rate, rng);
                let input: Vec<f64> = ex.x.iter().zip(&mask).map(|(a, b)| a * b).collect();
                accumulate_example(bank, ex, &input, &mut grad, scale)?
            }
            None => accumulate_example(bank, ex, ex.x, &mut grad, scale)?,
        };
    }
    Ok((total * scale, grad))
}

/// `sum_i grad F_i` over the examples (no averaging, no dropout) together
/// with the summed loss.
pub fn summed_loss_and_grad(
    bank: &ComponentClassifierBank,
    examples: &[Example<'_>],
) -> Result<(f64, BankGradient)> {
    let mut grad = BankGradient::zeros_like(bank);
    let mut total = 0.0;
    for ex in examples {
        check_example(bank, ex)?;
        total += accumulate_example(bank, ex, ex.x, &mut grad, 1.0)?;
    }
    Ok((total, grad))
}

/// `grad F_tk` with respect to every bank parameter.
pub fn term_gradient(
    bank: &ComponentClassifierBank,
    a: &StepComponentMatrix,
    x: &[f64],
    step: usize,
) -> Result<BankGradient> {
    Ok(summed_loss_and_grad(bank, &[Example { x, matrix: a, step }])?.1)
}

/// T×K step scores of a video, dropout off.
pub fn score_matrix(
    bank: &ComponentClassifierBank,
    a: &StepComponentMatrix,
    features: &FeatureSequence,
) -> Result<Mat> {
    bank.check_dim(features.segment(0))?;
    bank.check_matrix(a)?;
    let k_len = a.num_steps();
    let mut out = Mat::zeros(features.len(), k_len);
    for t in 0..features.len() {
        let f = compose_local(&bank.support_scores(a, features.segment(t)), a);
        out.row_mut(t).copy_from_slice(&f);
    }
    Ok(out)
}

/// Per-(t, k) losses `F_tk` of a video and, optionally, `|grad F_tk|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTable {
    pub values: Mat,
    pub grad_sq_norms: Option<Mat>,
}

/// Losses of every (segment, step) labeling. The squared gradient norms use
/// the closed form for the linear bank: with
/// `c_m = sum_j (p_j - [j = k]) A[j,m] / deg_j`,
/// `|grad F_tk|^2 = |c|^2 (|x_t|^2 + 1)`.
pub fn loss_term_table(
    bank: &ComponentClassifierBank,
    a: &StepComponentMatrix,
    features: &FeatureSequence,
    with_grad_norms: bool,
) -> Result<LossTable> {
    let scores = score_matrix(bank, a, features)?;
    let (t_len, k_len) = (features.len(), a.num_steps());
    let mut values = Mat::zeros(t_len, k_len);
    let mut norms = with_grad_norms.then(|| Mat::zeros(t_len, k_len));
    let mut onehot = vec![0.0; k_len];
    for t in 0..t_len {
        let f = scores.row(t);
        let lse = log_sum_exp(f);
        for k in 0..k_len {
            values[(t, k)] = lse - f[k];
        }
        if let Some(norms) = norms.as_mut() {
            let x = features.segment(t);
            let input_sq = dot(x, x) + 1.0;
            let p = softmax(f);
            for k in 0..k_len {
                onehot.copy_from_slice(&p);
                onehot[k] -= 1.0;
                let c = support_gradient(a, &onehot);
                norms[(t, k)] = dot(&c, &c) * input_sq;
            }
        }
    }
    Ok(LossTable {
        values,
        grad_sq_norms: norms,
    })
}

/// Adam moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(bank: &ComponentClassifierBank, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; bank.num_params()],
            second_moment: vec![0.0; bank.num_params()],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of every bank parameter.
pub fn adam_step(
    bank: &mut ComponentClassifierBank,
    grad: &BankGradient,
    state: &mut AdamState,
) -> Result<()> {
    let n = bank.num_params();
    if grad.weights.len() + grad.biases.len() != n || state.first_moment.len() != n {
        return Err(Error::DimensionMismatch {
            what: "parameter count",
            expected: n,
            got: grad.weights.len() + grad.biases.len(),
        });
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let nw = bank.weights.len();
    let params = bank.weights.iter_mut().chain(bank.biases.iter_mut());
    let grads = grad.weights.iter().chain(&grad.biases);
    for (i, (p, &g)) in params.zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    debug_assert_eq!(bank.weights.len(), nw);
    Ok(())
}

/// Plain gradient step `theta <- theta - rate * grad`.
pub fn gradient_step(bank: &mut ComponentClassifierBank, grad: &BankGradient, rate: f64) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    for (p, g) in bank.weights.iter_mut().zip(&grad.weights) {
        *p -= rate * g;
    }
    for (p, g) in bank.biases.iter_mut().zip(&grad.biases) {
        *p -= rate * g;
    }
    Ok(())
}
