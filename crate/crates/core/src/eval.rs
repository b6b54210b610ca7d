//! Inference on unseen videos, recall and mAP against annotated intervals,
//! and corpus statistics.

use crate::dp::{solve_single_frame, CostMatrix};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::matrix::Mat;
use crate::model::{score_matrix, ComponentClassifierBank};
use crate::task::StepComponentMatrix;

/// Annotated intervals of one video: per step, inclusive `[start, end]`
/// intervals in seconds. An empty list marks a missing step.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    intervals: Vec<Vec<(f64, f64)>>,
}

impl GroundTruth {
    pub fn new(intervals: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::invalid("ground truth needs at least one step"));
        }
        for (k, list) in intervals.iter().enumerate() {
            for &(a, b) in list {
                if !(a.is_finite() && b.is_finite()) || a < 0.0 || a > b {
                    return Err(Error::invalid(format!(
                        "step {k}: bad interval [{a}, {b}]"
                    )));
                }
            }
        }
        Ok(GroundTruth { intervals })
    }

    /// All steps missing.
    pub fn empty(num_steps: usize) -> Self {
        GroundTruth {
            intervals: vec![Vec::new(); num_steps],
        }
    }

    pub fn num_steps(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self, k: usize) -> &[(f64, f64)] {
        &self.intervals[k]
    }

    pub fn is_missing(&self, k: usize) -> bool {
        self.intervals[k].is_empty()
    }

    pub fn contains(&self, k: usize, seconds: f64) -> bool {
        self.intervals[k].iter().any(|&(a, b)| a <= seconds && seconds <= b)
    }

    /// Errors when an interval ends after `duration` seconds.
    pub fn check_duration(&self, duration: f64) -> Result<()> {
        for (k, list) in self.intervals.iter().enumerate() {
            if let Some(&(a, b)) = list.iter().find(|&&(_, b)| b > duration) {
                return Err(Error::invalid(format!(
                    "step {k}: interval [{a}, {b}] exceeds duration {duration}"
                )));
            }
        }
        Ok(())
    }

    /// Step indices of all intervals ordered by start time.
    pub fn occurrence_order(&self) -> Vec<usize> {
        let mut occ: Vec<(f64, usize)> = self
            .intervals
            .iter()
            .enumerate()
            .flat_map(|(k, list)| list.iter().map(move |&(a, _)| (a, k)))
            .collect();
        occ.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        occ.into_iter().map(|(_, k)| k).collect()
    }
}

/// One predicted segment per step, optionally with the score matrix it came
/// from.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    times: Vec<usize>,
    scores: Option<Mat>,
    seconds_per_segment: f64,
}

impl Prediction {
    pub fn new(times: Vec<usize>, scores: Option<Mat>, seconds_per_segment: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("prediction needs at least one step"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("predicted times must be strictly increasing"));
        }
        if !(seconds_per_segment.is_finite() && seconds_per_segment > 0.0) {
            return Err(Error::invalid("segment length must be positive"));
        }
        if let Some(s) = &scores {
            if s.cols() != times.len() || times.last().is_some_and(|&t| t >= s.rows()) {
                return Err(Error::invalid("score matrix does not match predicted times"));
            }
        }
        Ok(Prediction {
            times,
            scores,
            seconds_per_segment,
        })
    }

    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn scores(&self) -> Option<&Mat> {
        self.scores.as_ref()
    }

    pub fn seconds_per_segment(&self) -> f64 {
        self.seconds_per_segment
    }

    pub fn num_steps(&self) -> usize {
        self.times.len()
    }

    /// Midpoint of segment `t` in seconds.
    pub fn segment_time(&self, t: usize) -> f64 {
        (t as f64 + 0.5) * self.seconds_per_segment
    }
}

/// Best ordered single-frame labeling by step score. Narration is not used.
pub fn infer(
    bank: &ComponentClassifierBank,
    a: &StepComponentMatrix,
    features: &FeatureSequence,
) -> Result<Prediction> {
    if features.len() < a.num_steps() {
        return Err(Error::invalid(format!(
            "{} steps cannot be ordered within {} segments",
            a.num_steps(),
            features.len()
        )));
    }
    let scores = score_matrix(bank, a, features)?;
    let y = solve_single_frame(&CostMatrix::new(scores.map(|v| -v))?)?;
    Prediction::new(y.times(), Some(scores), features.seconds_per_segment())
}

/// `t_k = floor((k - 1/2) T / K)` for `k = 1..=K`.
pub fn uniform_baseline(num_segments: usize, num_steps: usize) -> Result<Prediction> {
    if num_steps == 0 || num_segments < num_steps {
        return Err(Error::invalid(format!(
            "uniform baseline needs 1 <= K <= T, got T={num_segments}, K={num_steps}"
        )));
    }
    let times = (1..=num_steps)
        .map(|k| ((2 * k - 1) * num_segments) / (2 * num_steps))
        .collect();
    Prediction::new(times, None, 1.0)
}

/// Which ground-truth intervals a prediction may hit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IntervalRule {
    #[default]
    Any,
    /// Only the earliest interval of each step counts.
    First,
}

fn check_pairs(preds: &[Prediction], gts: &[GroundTruth]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            what: "video count",
            expected: gts.len(),
            got: preds.len(),
        });
    }
    for (p, g) in preds.iter().zip(gts) {
        if p.num_steps() != g.num_steps() {
            return Err(Error::DimensionMismatch {
                what: "step count",
                expected: g.num_steps(),
                got: p.num_steps(),
            });
        }
    }
    Ok(())
}

/// Correct steps over all steps of all videos, counting any interval.
pub fn recall(preds: &[Prediction], gts: &[GroundTruth]) -> Result<f64> {
    recall_with(preds, gts, IntervalRule::Any)
}

pub fn recall_with(preds: &[Prediction], gts: &[GroundTruth], rule: IntervalRule) -> Result<f64> {
    check_pairs(preds, gts)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        for (k, &t) in p.times().iter().enumerate() {
            total += 1;
            let s = p.segment_time(t);
            let ok = match rule {
                IntervalRule::Any => g.contains(k, s),
                IntervalRule::First => g
                    .intervals(k)
                    .iter()
                    .min_by(|x, y| x.0.total_cmp(&y.0))
                    .is_some_and(|&(a, b)| a <= s && s <= b),
            };
            hit += usize::from(ok);
        }
    }
    if total == 0 {
        return Err(Error::invalid("no steps to evaluate"));
    }
    Ok(hit as f64 / total as f64)
}

/// Average precision of a ranking: `scores` with `positive` labels, ties
/// broken by position.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let num_pos = positive.iter().filter(|&&p| p).count();
    if num_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let (mut seen, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            seen += 1;
            sum += seen as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / num_pos as f64)
}

/// Per step, ranks every segment of every video by its score; positives are
/// segments whose midpoint lies in a ground-truth interval of that step. The
/// mean runs over steps with at least one positive.
pub fn mean_average_precision(preds: &[Prediction], gts: &[GroundTruth]) -> Result<f64> {
    check_pairs(preds, gts)?;
    let k_len = gts.first().map_or(0, GroundTruth::num_steps);
    if gts.iter().any(|g| g.num_steps() != k_len) {
        return Err(Error::invalid("mAP needs videos of a single task"));
    }
    let mut aps = Vec::new();
    for k in 0..k_len {
        let (mut scores, mut positive) = (Vec::new(), Vec::new());
        for (p, g) in preds.iter().zip(gts) {
            let s = p
                .scores()
                .ok_or_else(|| Error::invalid("mAP needs score matrices"))?;
            for t in 0..s.rows() {
                let v = s[(t, k)];
                if !v.is_finite() {
                    return Err(Error::NonFinite("scores".into()));
                }
                scores.push(v);
                positive.push(g.contains(k, p.segment_time(t)));
            }
        }
        aps.extend(average_precision(&scores, &positive));
    }
    if aps.is_empty() {
        return Err(Error::invalid("no step has a positive segment"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Length of the longest strictly increasing subsequence over the length.
pub fn order_consistency(sequence: &[usize]) -> Result<f64> {
    if sequence.is_empty() {
        return Err(Error::invalid("order consistency needs a non-empty sequence"));
    }
    let mut tails: Vec<usize> = Vec::new();
    for &x in sequence {
        let pos = tails.partition_point(|&v| v < x);
        if pos == tails.len() {
            tails.push(x);
        } else {
            tails[pos] = x;
        }
    }
    Ok(tails.len() as f64 / sequence.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    /// Segments in no interval over all segments.
    pub background_fraction: f64,
    /// Steps without intervals over all steps.
    pub missing_step_fraction: f64,
    /// Mean over videos with at least one interval.
    pub mean_order_consistency: Option<f64>,
}

/// Statistics of annotated videos given as `(ground truth, T, seconds per
/// segment)`.
pub fn corpus_stats(videos: &[(&GroundTruth, usize, f64)]) -> Result<CorpusStats> {
    if videos.is_empty() {
        return Err(Error::invalid("no videos"));
    }
    let (mut bg, mut segs, mut missing, mut steps) = (0usize, 0usize, 0usize, 0usize);
    let mut consistencies = Vec::new();
    for &(g, t_len, sps) in videos {
        for t in 0..t_len {
            let s = (t as f64 + 0.5) * sps;
            bg += usize::from(!(0..g.num_steps()).any(|k| g.contains(k, s)));
        }
        segs += t_len;
        missing += (0..g.num_steps()).filter(|&k| g.is_missing(k)).count();
        steps += g.num_steps();
        let occ = g.occurrence_order();
        if !occ.is_empty() {
            consistencies.push(order_consistency(&occ)?);
        }
    }
    if segs == 0 {
        return Err(Error::invalid("videos have no segments"));
    }
    Ok(CorpusStats {
        background_fraction: bg as f64 / segs as f64,
        missing_step_fraction: missing as f64 / steps as f64,
        mean_order_consistency: (!consistencies.is_empty())
            .then(|| consistencies.iter().sum::<f64>() / consistencies.len() as f64),
    })
}
