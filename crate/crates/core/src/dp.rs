//! Exact solvers for `min_{Y in C} sum_{t,k} S[t,k] Y[t,k]` where `C` holds
//! the ordering and at-least-once constraints, plus exhaustive oracles.
//!
//! Background carries cost 0. A `+inf` entry forbids placing a step at that
//! segment, which is how constraint windows are imposed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Mat;

/// T×K matrix of per-(segment, step) costs. Entries are finite or `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(Mat);

impl CostMatrix {
    pub fn new(values: Mat) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::invalid("cost matrix must have T >= 1 and K >= 1"));
        }
        if values
            .as_slice()
            .iter()
            .any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(Error::NonFinite(
                "cost entries must be finite or +inf".into(),
            ));
        }
        Ok(CostMatrix(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Mat::from_rows(rows))
    }

    pub fn num_segments(&self) -> usize {
        self.0.rows()
    }

    pub fn num_steps(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.0[(t, k)]
    }

    pub fn values(&self) -> &Mat {
        &self.0
    }

    /// `f(S)` applied to every finite entry; forbidden entries stay `+inf`.
    pub fn map_finite(&self, f: impl Fn(f64) -> f64) -> Result<CostMatrix> {
        CostMatrix::new(self.0.map(|v| if v.is_finite() { f(v) } else { v }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AssignmentMode {
    /// Each step occupies one contiguous block of segments.
    Runs,
    /// Each step occupies exactly one segment.
    SingleFrame,
}

/// Binary T×K labeling, stored as one inclusive segment span per step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    mode: AssignmentMode,
    num_segments: usize,
    spans: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn single_frame(num_segments: usize, times: Vec<usize>) -> Result<Self> {
        let a = Assignment {
            mode: AssignmentMode::SingleFrame,
            num_segments,
            spans: times.into_iter().map(|t| (t, t)).collect(),
        };
        a.check_structure()?;
        Ok(a)
    }

    pub fn runs(num_segments: usize, spans: Vec<(usize, usize)>) -> Result<Self> {
        let a = Assignment {
            mode: AssignmentMode::Runs,
            num_segments,
            spans,
        };
        a.check_structure()?;
        Ok(a)
    }

    fn check_structure(&self) -> Result<()> {
        if self.spans.is_empty() {
            return Err(Error::invalid("assignment needs at least one step"));
        }
        let mut prev_end: Option<usize> = None;
        for (k, &(lo, hi)) in self.spans.iter().enumerate() {
            if lo > hi || hi >= self.num_segments {
                return Err(Error::invalid(format!(
                    "step {k} span [{lo}, {hi}] invalid for T = {}",
                    self.num_segments
                )));
            }
            if self.mode == AssignmentMode::SingleFrame && lo != hi {
                return Err(Error::invalid(format!(
                    "step {k} covers several segments in single-frame mode"
                )));
            }
            if prev_end.is_some_and(|p| lo <= p) {
                return Err(Error::invalid(format!(
                    "step {k} starts before step {} ends",
                    k - 1
                )));
            }
            prev_end = Some(hi);
        }
        Ok(())
    }

    pub fn mode(&self) -> AssignmentMode {
        self.mode
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn num_steps(&self) -> usize {
        self.spans.len()
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    /// First segment of every step; for single-frame assignments these are
    /// the predicted times.
    pub fn times(&self) -> Vec<usize> {
        self.spans.iter().map(|&(lo, _)| lo).collect()
    }

    /// Number of nonzero entries of the label matrix.
    pub fn num_assigned(&self) -> usize {
        self.spans.iter().map(|&(lo, hi)| hi - lo + 1).sum()
    }

    /// Iterates the nonzero `(t, k)` entries, step-major.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.spans
            .iter()
            .enumerate()
            .flat_map(|(k, &(lo, hi))| (lo..=hi).map(move |t| (t, k)))
    }

    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let mut y = vec![vec![0u8; self.spans.len()]; self.num_segments];
        for (t, k) in self.iter() {
            y[t][k] = 1;
        }
        y
    }

    /// `sum_{t,k} S[t,k] Y[t,k]`, accumulated step-major so every caller sums
    /// in the same order.
    pub fn cost(&self, costs: &CostMatrix) -> f64 {
        self.iter().map(|(t, k)| costs.get(t, k)).sum()
    }

    /// Checks the structural invariants and, when given, window membership.
    pub fn validate(&self, windows: Option<&ConstraintWindows>) -> Result<()> {
        self.check_structure()?;
        if let Some(w) = windows {
            if w.num_steps() != self.num_steps() {
                return Err(Error::DimensionMismatch {
                    what: "window count",
                    expected: self.num_steps(),
                    got: w.num_steps(),
                });
            }
            for (t, k) in self.iter() {
                if !w.allows(k, t) {
                    return Err(Error::invalid(format!(
                        "step {k} at segment {t} lies outside its window"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-step inclusive segment windows; `None` leaves a step unconstrained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintWindows {
    windows: Vec<Option<(usize, usize)>>,
}

impl ConstraintWindows {
    pub fn unconstrained(num_steps: usize) -> Self {
        ConstraintWindows {
            windows: vec![None; num_steps],
        }
    }

    pub fn new(windows: Vec<Option<(usize, usize)>>) -> Result<Self> {
        for (k, w) in windows.iter().enumerate() {
            if let Some((lo, hi)) = *w {
                if lo > hi {
                    return Err(Error::invalid(format!(
                        "window of step {k} is empty: [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(ConstraintWindows { windows })
    }

    pub fn num_steps(&self) -> usize {
        self.windows.len()
    }

    pub fn get(&self, k: usize) -> Option<(usize, usize)> {
        self.windows[k]
    }

    pub fn as_slice(&self) -> &[Option<(usize, usize)>] {
        &self.windows
    }

    pub fn allows(&self, k: usize, t: usize) -> bool {
        self.windows[k].is_none_or(|(lo, hi)| lo <= t && t <= hi)
    }

    pub fn is_unconstrained(&self) -> bool {
        self.windows.iter().all(Option::is_none)
    }

    /// Checks `hi < T` for every window.
    pub fn check_fits(&self, num_segments: usize) -> Result<()> {
        for (k, w) in self.windows.iter().enumerate() {
            if let Some((_, hi)) = *w {
                if hi >= num_segments {
                    return Err(Error::invalid(format!(
                        "window of step {k} ends at {hi}, beyond T = {num_segments}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Clamp every window into `[0, T-1]`. Windows starting past the end are
    /// pinned to the last segment.
    pub fn clamped(&self, num_segments: usize) -> ConstraintWindows {
        let last = num_segments.saturating_sub(1);
        ConstraintWindows {
            windows: self
                .windows
                .iter()
                .map(|w| w.map(|(lo, hi)| (lo.min(last), hi.min(last))))
                .collect(),
        }
    }
}

/// Forbid (`+inf`) every entry outside its step's window.
pub fn apply_windows(costs: &CostMatrix, windows: &ConstraintWindows) -> Result<CostMatrix> {
    if windows.num_steps() != costs.num_steps() {
        return Err(Error::DimensionMismatch {
            what: "window count",
            expected: costs.num_steps(),
            got: windows.num_steps(),
        });
    }
    windows.check_fits(costs.num_segments())?;
    let mut out = costs.values().clone();
    for k in 0..costs.num_steps() {
        if let Some((lo, hi)) = windows.get(k) {
            for t in (0..costs.num_segments()).filter(|t| *t < lo || *t > hi) {
                out[(t, k)] = f64::INFINITY;
            }
        }
    }
    Ok(CostMatrix(out))
}

/// Greedy left-to-right scan: place each step at its earliest allowed segment
/// after the previous one. Succeeds iff some ordered single-frame (and hence
/// runs) assignment has finite cost.
fn check_feasible(costs: &CostMatrix) -> Result<()> {
    let (t_len, k_len) = (costs.num_segments(), costs.num_steps());
    if t_len < k_len {
        return Err(Error::infeasible(format!(
            "{k_len} steps cannot be ordered within {t_len} segments"
        )));
    }
    let mut next = 0;
    for k in 0..k_len {
        match (next..t_len).find(|&t| costs.get(t, k).is_finite()) {
            Some(t) => next = t + 1,
            None => {
                return Err(Error::infeasible(format!(
                    "no allowed segment for step {k} after segment {next}"
                )))
            }
        }
    }
    Ok(())
}

/// Whether some ordered assignment of `windows.num_steps()` steps into
/// `num_segments` segments respects every window.
pub fn check_windows_feasible(num_segments: usize, windows: &ConstraintWindows) -> Result<()> {
    if num_segments == 0 || windows.num_steps() == 0 {
        return Err(Error::invalid("feasibility needs T >= 1 and K >= 1"));
    }
    let zeros = CostMatrix(Mat::zeros(num_segments, windows.num_steps()));
    check_feasible(&apply_windows(&zeros, windows)?)
}

/// Ordered single-frame assignment: times `t_0 < ... < t_{K-1}` minimizing
/// `sum_k S[t_k, k]`. Among optimal solutions the lexicographically earliest
/// time vector is returned.
pub fn solve_single_frame(costs: &CostMatrix) -> Result<Assignment> {
    check_feasible(costs)?;
    let (t_len, k_len) = (costs.num_segments(), costs.num_steps());

    // tail[k][t]: cheapest placement of steps k.. with step k at segment t.
    // tail_min[k][t]: min over t' >= t of tail[k][t'].
    let mut tail = Mat::filled(k_len, t_len, f64::INFINITY);
    let mut tail_min = Mat::filled(k_len, t_len + 1, f64::INFINITY);
    for k in (0..k_len).rev() {
        for t in (0..t_len).rev() {
            let rest = if k + 1 == k_len {
                0.0
            } else {
                tail_min[(k + 1, t + 1)]
            };
            let v = costs.get(t, k) + rest;
            tail[(k, t)] = v;
            tail_min[(k, t)] = v.min(tail_min[(k, t + 1)]);
        }
    }

    let mut times = Vec::with_capacity(k_len);
    let mut start = 0;
    for k in 0..k_len {
        let target = tail_min[(k, start)];
        if !target.is_finite() {
            return Err(Error::infeasible("no finite ordered assignment"));
        }
        let t = (start..t_len)
            .find(|&t| tail[(k, t)] == target)
            .expect("suffix minimum is attained");
        times.push(t);
        start = t + 1;
    }
    Assignment::single_frame(t_len, times)
}

// Runs-mode state layout: 0 is (y=0, z=0); for z in 1..=K, `2z-1` is
// background after step z, i.e. (0, z), and `2z` is inside step z, i.e. (z, z).
const START: usize = 0;

#[inline]
fn bg(z: usize) -> usize {
    2 * z - 1
}

#[inline]
fn on(z: usize) -> usize {
    2 * z
}

/// Ordered runs assignment: every step occupies one contiguous block, blocks
/// appear in step order, background anywhere in between. O(KT) time.
pub fn solve_runs(costs: &CostMatrix) -> Result<Assignment> {
    check_feasible(costs)?;
    let (t_len, k_len) = (costs.num_segments(), costs.num_steps());
    let n_states = 2 * k_len + 1;

    let mut value = vec![f64::INFINITY; n_states];
    let mut next = vec![f64::INFINITY; n_states];
    let mut back = vec![0u32; t_len * n_states];

    // t = 0: only transitions out of the start state are possible.
    value[START] = 0.0;
    back[START] = START as u32;
    value[on(1)] = costs.get(0, 0);
    back[on(1)] = START as u32;

    for t in 1..t_len {
        let row = &mut back[t * n_states..(t + 1) * n_states];
        next[START] = value[START];
        row[START] = START as u32;
        for z in 1..=k_len {
            // Entering or continuing step z.
            let entry_from = if z == 1 {
                [(on(1), value[on(1)]), (START, value[START]), (START, value[START])]
            } else {
                [
                    (on(z), value[on(z)]),
                    (on(z - 1), value[on(z - 1)]),
                    (bg(z - 1), value[bg(z - 1)]),
                ]
            };
            let (arg, best) = argmin(&entry_from);
            next[on(z)] = costs.get(t, z - 1) + best;
            row[on(z)] = arg as u32;

            // Background after step z has finished.
            let (arg, best) = argmin(&[(bg(z), value[bg(z)]), (on(z), value[on(z)])]);
            next[bg(z)] = best;
            row[bg(z)] = arg as u32;
        }
        std::mem::swap(&mut value, &mut next);
    }

    let (mut state, best) = argmin(&[(on(k_len), value[on(k_len)]), (bg(k_len), value[bg(k_len)])]);
    if !best.is_finite() {
        return Err(Error::infeasible("no finite ordered runs assignment"));
    }

    let mut labels = vec![0usize; t_len];
    for t in (0..t_len).rev() {
        labels[t] = if state != START && state % 2 == 0 {
            state / 2
        } else {
            0
        };
        state = back[t * n_states + state] as usize;
    }

    let mut spans = vec![(usize::MAX, 0); k_len];
    for (t, &y) in labels.iter().enumerate() {
        if y > 0 {
            let span = &mut spans[y - 1];
            span.0 = span.0.min(t);
            span.1 = t;
        }
    }
    Assignment::runs(t_len, spans)
}

/// First strictly smallest value wins, so earlier candidates take ties.
#[inline]
fn argmin(cands: &[(usize, f64)]) -> (usize, f64) {
    let mut best = cands[0];
    for &c in &cands[1..] {
        if c.1 < best.1 {
            best = c;
        }
    }
    best
}

pub fn solve(costs: &CostMatrix, mode: AssignmentMode) -> Result<Assignment> {
    match mode {
        AssignmentMode::Runs => solve_runs(costs),
        AssignmentMode::SingleFrame => solve_single_frame(costs),
    }
}

pub const BRUTE_FORCE_MAX_RUNS_SEGMENTS: usize = 10;
pub const BRUTE_FORCE_MAX_RUNS_STEPS: usize = 3;
pub const BRUTE_FORCE_MAX_COMBINATIONS: u128 = 1_000_000;

/// Exhaustive search over every feasible assignment. Test oracle for the
/// dynamic programs; single-frame ties resolve to the lexicographically
/// earliest time vector, like [`solve_single_frame`].
pub fn brute_force(costs: &CostMatrix, mode: AssignmentMode) -> Result<Assignment> {
    let (t_len, k_len) = (costs.num_segments(), costs.num_steps());
    match mode {
        AssignmentMode::Runs => {
            if t_len > BRUTE_FORCE_MAX_RUNS_SEGMENTS || k_len > BRUTE_FORCE_MAX_RUNS_STEPS {
                return Err(Error::TooLarge(format!(
                    "runs brute force needs T <= {BRUTE_FORCE_MAX_RUNS_SEGMENTS} and K <= {BRUTE_FORCE_MAX_RUNS_STEPS}, got T = {t_len}, K = {k_len}"
                )));
            }
            brute_force_runs(costs)
        }
        AssignmentMode::SingleFrame => {
            let count = binomial(t_len, k_len);
            if count > BRUTE_FORCE_MAX_COMBINATIONS {
                return Err(Error::TooLarge(format!(
                    "C({t_len}, {k_len}) = {count} candidate placements"
                )));
            }
            brute_force_single_frame(costs)
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

fn keep_best(best: &mut Option<(f64, Assignment)>, cand: Assignment, costs: &CostMatrix) {
    let c = cand.cost(costs);
    if c.is_finite() && best.as_ref().is_none_or(|(b, _)| c < *b) {
        *best = Some((c, cand));
    }
}

fn brute_force_single_frame(costs: &CostMatrix) -> Result<Assignment> {
    let (t_len, k_len) = (costs.num_segments(), costs.num_steps());
    if t_len < k_len {
        return Err(Error::infeasible("fewer segments than steps"));
    }
    let mut best = None;
    let mut times: Vec<usize> = (0..k_len).collect();
    loop {
        keep_best(
            &mut best,
            Assignment::single_frame(t_len, times.clone())?,
            costs,
        );
        // Next combination in lexicographic order.
        let Some(i) = (0..k_len).rev().find(|&i| times[i] < t_len - k_len + i) else {
            break;
        };
        times[i] += 1;
        for j in i + 1..k_len {
            times[j] = times[j - 1] + 1;
        }
    }
    best.map(|(_, a)| a)
        .ok_or_else(|| Error::infeasible("every placement hits a forbidden entry"))
}

fn brute_force_runs(costs: &CostMatrix) -> Result<Assignment> {
    let (t_len, k_len) = (costs.num_segments(), costs.num_steps());
    let mut best = None;
    let mut labels = vec![0usize; t_len];
    'outer: loop {
        if let Some(spans) = runs_from_labels(&labels, k_len) {
            keep_best(&mut best, Assignment::runs(t_len, spans)?, costs);
        }
        for y in labels.iter_mut() {
            if *y < k_len {
                *y += 1;
                continue 'outer;
            }
            *y = 0;
        }
        break;
    }
    best.map(|(_, a)| a)
        .ok_or_else(|| Error::infeasible("no finite ordered runs assignment"))
}

/// Spans of a label sequence (0 = background) if it is ordered, covers every
/// step and keeps each step contiguous.
fn runs_from_labels(labels: &[usize], k_len: usize) -> Option<Vec<(usize, usize)>> {
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(k_len);
    for (t, &y) in labels.iter().enumerate() {
        if y == 0 {
            continue;
        }
        match spans.len() {
            n if y == n + 1 => spans.push((t, t)),
            n if y == n && spans[n - 1].1 + 1 == t => spans[n - 1].1 = t,
            _ => return None,
        }
    }
    (spans.len() == k_len).then_some(spans)
}

/// A random single-frame assignment satisfying `windows`: the ordered
/// optimum of i.i.d. uniform costs masked by the windows.
pub fn sample_feasible(
    num_segments: usize,
    num_steps: usize,
    windows: &ConstraintWindows,
    seed: u64,
) -> Result<Assignment> {
    if num_segments == 0 || num_steps == 0 {
        return Err(Error::invalid("sampling needs T >= 1 and K >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..num_segments * num_steps)
        .map(|_| rng.random::<f64>())
        .collect();
    let costs = CostMatrix(Mat::from_vec(num_segments, num_steps, data));
    solve_single_frame(&apply_windows(&costs, windows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_segment_single_step() {
        let s = cm(&[&[2.5]]);
        for mode in [AssignmentMode::Runs, AssignmentMode::SingleFrame] {
            let a = solve(&s, mode).unwrap();
            assert_eq!(a.to_matrix(), vec![vec![1]]);
            assert_eq!(a.cost(&s), 2.5);
            assert_eq!(brute_force(&s, mode).unwrap(), a);
        }
    }

    #[test]
    fn runs_extend_over_negative_costs() {
        let s = cm(&[&[-1.0], &[-2.0]]);
        let a = solve_runs(&s).unwrap();
        assert_eq!(a.spans(), &[(0, 1)]);
        assert_eq!(a.cost(&s), -3.0);
    }

    #[test]
    fn runs_brute_force_picks_single_negative_segment() {
        let s = cm(&[&[1.0], &[-4.0], &[1.0]]);
        let a = brute_force(&s, AssignmentMode::Runs).unwrap();
        assert_eq!(a.spans(), &[(1, 1)]);
        assert_eq!(a.cost(&s), -4.0);
        assert_eq!(solve_runs(&s).unwrap(), a);
    }

    #[test]
    fn single_frame_example() {
        let s = cm(&[&[0.0, 5.0], &[1.0, 0.0], &[2.0, 1.0]]);
        let a = solve_single_frame(&s).unwrap();
        assert_eq!(a.times(), vec![0, 1]);
        assert_eq!(a.cost(&s), 0.0);
        assert_eq!(brute_force(&s, AssignmentMode::SingleFrame).unwrap().cost(&s), 0.0);
    }

    #[test]
    fn single_frame_ties_go_to_earliest_times() {
        let s = CostMatrix::new(Mat::zeros(4, 2)).unwrap();
        assert_eq!(solve_single_frame(&s).unwrap().times(), vec![0, 1]);
    }

    #[test]
    fn coinciding_point_windows_are_infeasible() {
        let s = CostMatrix::new(Mat::zeros(3, 2)).unwrap();
        let w = ConstraintWindows::new(vec![Some((1, 1)), Some((1, 1))]).unwrap();
        let masked = apply_windows(&s, &w).unwrap();
        assert!(matches!(
            solve_single_frame(&masked),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(solve_runs(&masked), Err(Error::Infeasible(_))));
    }

    #[test]
    fn too_few_segments_is_infeasible() {
        let s = CostMatrix::new(Mat::zeros(2, 3)).unwrap();
        assert!(matches!(solve_single_frame(&s), Err(Error::Infeasible(_))));
    }

    #[test]
    fn windows_mask_outside_entries() {
        let s = CostMatrix::new(Mat::zeros(3, 2)).unwrap();
        assert_eq!(
            apply_windows(&s, &ConstraintWindows::unconstrained(2)).unwrap(),
            s
        );
        let w = ConstraintWindows::new(vec![Some((1, 1)), None]).unwrap();
        let m = apply_windows(&s, &w).unwrap();
        assert_eq!(m.get(0, 0), f64::INFINITY);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(2, 0), f64::INFINITY);
        assert!((0..3).all(|t| m.get(t, 1) == 0.0));

        let too_long = ConstraintWindows::new(vec![Some((0, 3)), None]).unwrap();
        assert!(apply_windows(&s, &too_long).is_err());
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let s = CostMatrix::new(Mat::zeros(11, 1)).unwrap();
        assert!(matches!(
            brute_force(&s, AssignmentMode::Runs),
            Err(Error::TooLarge(_))
        ));
        let s = CostMatrix::new(Mat::zeros(40, 10)).unwrap();
        assert!(matches!(
            brute_force(&s, AssignmentMode::SingleFrame),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn cost_matrix_rejects_nan_and_negative_infinity() {
        assert!(CostMatrix::from_rows(&[[f64::NAN]]).is_err());
        assert!(CostMatrix::from_rows(&[[f64::NEG_INFINITY]]).is_err());
        assert!(CostMatrix::from_rows(&[[f64::INFINITY]]).is_ok());
    }

    #[test]
    fn assignment_structure_is_checked() {
        assert!(Assignment::single_frame(3, vec![1, 1]).is_err());
        assert!(Assignment::single_frame(3, vec![2, 1]).is_err());
        assert!(Assignment::single_frame(3, vec![0, 3]).is_err());
        assert!(Assignment::runs(5, vec![(0, 2), (2, 3)]).is_err());
        let a = Assignment::runs(5, vec![(0, 1), (3, 4)]).unwrap();
        assert_eq!(a.num_assigned(), 4);
        assert_eq!(
            a.to_matrix(),
            vec![vec![1, 0], vec![1, 0], vec![0, 0], vec![0, 1], vec![0, 1]]
        );
    }

    #[test]
    fn sample_on_tight_instance_is_unique() {
        for seed in 0..5 {
            let a = sample_feasible(2, 2, &ConstraintWindows::unconstrained(2), seed).unwrap();
            assert_eq!(a.times(), vec![0, 1]);
        }
        let w = ConstraintWindows::new(vec![Some((0, 1)), Some((1, 1))]).unwrap();
        assert_eq!(sample_feasible(2, 2, &w, 9).unwrap().times(), vec![0, 1]);
    }

    #[test]
    fn sample_is_deterministic_and_covers_segments() {
        let w = ConstraintWindows::unconstrained(1);
        assert_eq!(
            sample_feasible(30, 1, &w, 7).unwrap(),
            sample_feasible(30, 1, &w, 7).unwrap()
        );
        let mut seen = [false; 4];
        for seed in 0..10_000 {
            seen[sample_feasible(4, 1, &w, seed).unwrap().times()[0]] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sample_respects_windows() {
        let w = ConstraintWindows::new(vec![Some((2, 5)), None, Some((9, 12))]).unwrap();
        for seed in 0..200 {
            let a = sample_feasible(15, 3, &w, seed).unwrap();
            a.validate(Some(&w)).unwrap();
        }
    }

    #[test]
    fn linear_time_in_segments() {
        use std::time::Instant;
        let k = 8;
        let build = |t: usize| {
            let data = (0..t * k).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
            CostMatrix::new(Mat::from_vec(t, k, data)).unwrap()
        };
        let time = |s: &CostMatrix| {
            (0..5)
                .map(|_| {
                    let start = Instant::now();
                    solve_runs(s).unwrap();
                    solve_single_frame(s).unwrap();
                    start.elapsed().as_secs_f64()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let (small, large) = (build(50_000), build(100_000));
        let ratio = time(&large) / time(&small);
        assert!(ratio < 3.0, "doubling T scaled runtime by {ratio:.2}");
    }

    fn cost_strategy() -> impl Strategy<Value = (usize, usize, Vec<i32>)> {
        (1usize..=4).prop_flat_map(|k| {
            (k..=9usize).prop_flat_map(move |t| {
                (Just(t), Just(k), proptest::collection::vec(-5i32..=5, t * k))
            })
        })
    }

    proptest! {
        #[test]
        fn solutions_satisfy_invariants((t, k, raw) in cost_strategy()) {
            let s = CostMatrix::new(Mat::from_vec(t, k, raw.iter().map(|&v| v as f64).collect())).unwrap();
            let sf = solve_single_frame(&s).unwrap();
            prop_assert_eq!(sf.mode(), AssignmentMode::SingleFrame);
            prop_assert_eq!(sf.num_assigned(), k);
            sf.validate(None).unwrap();
            if k <= 3 {
                let runs = solve_runs(&s).unwrap();
                runs.validate(None).unwrap();
                prop_assert_eq!(runs.cost(&s), brute_force(&s, AssignmentMode::Runs).unwrap().cost(&s));
            }
            prop_assert_eq!(&sf, &brute_force(&s, AssignmentMode::SingleFrame).unwrap());
        }

        #[test]
        fn constant_shift((t, k, raw) in cost_strategy(), c in -3i32..=3) {
            let s = CostMatrix::new(Mat::from_vec(t, k, raw.iter().map(|&v| v as f64).collect())).unwrap();
            let shifted = s.map_finite(|v| v + c as f64).unwrap();
            // Every single-frame labeling shifts by K*c, so the argmin is unchanged.
            prop_assert_eq!(solve_single_frame(&s).unwrap(), solve_single_frame(&shifted).unwrap());
            // A fixed runs labeling shifts by c per assigned segment.
            let runs = solve_runs(&s).unwrap();
            let n = runs.num_assigned() as f64;
            prop_assert_eq!(runs.cost(&shifted), runs.cost(&s) + c as f64 * n);
            prop_assert!(solve_runs(&shifted).unwrap().cost(&shifted) <= runs.cost(&shifted));
        }
    }
}
