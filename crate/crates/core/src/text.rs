//! Narration-derived step windows: sliding-window TF-IDF, cosine similarity,
//! ordered localization of step mentions, and the triplet margin loss for
//! training sentence aggregators externally.

use std::collections::HashMap;

use crate::dp::{solve_single_frame, ConstraintWindows, CostMatrix};
use crate::error::{Error, Result};
use crate::matrix::{dot, Mat};
use crate::stem::stem_tokens;
use crate::task::TaskSpec;

pub const DEFAULT_WINDOW_WORDS: usize = 5;
pub const DEFAULT_HALF_WIDTH_SEC: f64 = 4.5;

/// Subtitle words with their timestamps in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedTranscript {
    words: Vec<(String, f64)>,
}

impl TimedTranscript {
    pub fn new(words: Vec<(String, f64)>) -> Result<Self> {
        let mut prev = f64::NEG_INFINITY;
        let mut out = Vec::with_capacity(words.len());
        for (i, (token, time)) in words.into_iter().enumerate() {
            if !time.is_finite() {
                return Err(Error::NonFinite(format!("time of word {i}")));
            }
            if time < prev {
                return Err(Error::invalid(format!(
                    "word {i} at {time}s precedes the previous word at {prev}s"
                )));
            }
            prev = time;
            out.push((token.to_lowercase(), time));
        }
        Ok(TimedTranscript { words: out })
    }

    pub fn words(&self) -> &[(String, f64)] {
        &self.words
    }

    /// Number of words (L).
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.words[index].1
    }
}

/// Unit-norm TF-IDF rows for the L sliding windows (`windows`) and the K step
/// descriptions (`steps`) over a shared term list.
#[derive(Clone, Debug)]
pub struct TfIdf {
    pub terms: Vec<String>,
    pub windows: Mat,
    pub steps: Mat,
}

/// TF-IDF of the `window` words starting at every transcript position, and
/// of each step description.
///
/// `tf` is the raw term count, `idf = ln((1 + N) / (1 + df)) + 1` with the
/// documents being all L windows plus the K descriptions. Zero rows stay zero.
pub fn sliding_tfidf(transcript: &TimedTranscript, task: &TaskSpec, window: usize) -> Result<TfIdf> {
    if window == 0 {
        return Err(Error::invalid("sliding window must hold at least one word"));
    }
    if transcript.is_empty() {
        return Err(Error::invalid("transcript is empty"));
    }
    if task.steps().is_empty() {
        return Err(Error::invalid("task has no steps"));
    }

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut terms = Vec::new();
    let mut intern = |s: String| -> usize {
        *index.entry(s.clone()).or_insert_with(|| {
            terms.push(s);
            terms.len() - 1
        })
    };
    let word_terms: Vec<Vec<usize>> = transcript
        .words()
        .iter()
        .map(|(w, _)| stem_tokens(w).into_iter().map(&mut intern).collect())
        .collect();
    let step_terms: Vec<Vec<usize>> = task
        .steps()
        .iter()
        .map(|s| stem_tokens(s).into_iter().map(&mut intern).collect())
        .collect();

    let n_terms = terms.len();
    let l_len = transcript.len();
    let counts = |ids: &mut dyn Iterator<Item = usize>| {
        let mut tf = vec![0.0; n_terms];
        for id in ids {
            tf[id] += 1.0;
        }
        tf
    };
    let mut docs: Vec<Vec<f64>> = (0..l_len)
        .map(|l| {
            let end = (l + window).min(l_len);
            counts(&mut word_terms[l..end].iter().flatten().copied())
        })
        .collect();
    docs.extend(step_terms.iter().map(|ids| counts(&mut ids.iter().copied())));

    let n_docs = docs.len() as f64;
    let mut df = vec![0.0; n_terms];
    for doc in &docs {
        for (d, &tf) in df.iter_mut().zip(doc) {
            if tf > 0.0 {
                *d += 1.0;
            }
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1.0 + n_docs) / (1.0 + d)).ln() + 1.0)
        .collect();

    let embed = |doc: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = doc.iter().zip(&idf).map(|(tf, idf)| tf * idf).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    };
    let rows: Vec<Vec<f64>> = docs.iter().map(|d| embed(d)).collect();
    let (window_rows, step_rows) = rows.split_at(l_len);
    let to_mat = |rows: &[Vec<f64>]| {
        Mat::from_vec(rows.len(), n_terms, rows.iter().flatten().copied().collect())
    };
    Ok(TfIdf {
        terms,
        windows: to_mat(window_rows),
        steps: to_mat(step_rows),
    })
}

/// L×K cosine similarities between unit-norm window and step rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(Mat);

impl SimilarityMatrix {
    pub fn values(&self) -> &Mat {
        &self.0
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.0[(l, k)]
    }

    pub fn from_mat(values: Mat) -> Result<Self> {
        if values.as_slice().iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::invalid("similarities must lie in [-1, 1]"));
        }
        Ok(SimilarityMatrix(values))
    }
}

/// `S = U V^T`, clamped into [-1, 1] against rounding.
pub fn similarity(u: &Mat, v: &Mat) -> Result<SimilarityMatrix> {
    if u.cols() != v.cols() {
        return Err(Error::DimensionMismatch {
            what: "embedding dimension",
            expected: u.cols(),
            got: v.cols(),
        });
    }
    let mut s = Mat::zeros(u.rows(), v.rows());
    for l in 0..u.rows() {
        for k in 0..v.rows() {
            s[(l, k)] = dot(u.row(l), v.row(k)).clamp(-1.0, 1.0);
        }
    }
    Ok(SimilarityMatrix(s))
}

/// Word index of each step's mention: the ordered placement `l_0 < ... < l_{K-1}`
/// maximizing total similarity.
pub fn localize_steps(sim: &SimilarityMatrix) -> Result<Vec<usize>> {
    let (l_len, k_len) = (sim.0.rows(), sim.0.cols());
    if l_len < k_len {
        return Err(Error::invalid(format!(
            "cannot place {k_len} ordered steps among {l_len} words"
        )));
    }
    let costs = CostMatrix::new(sim.0.map(|v| -v))?;
    Ok(solve_single_frame(&costs)?.times())
}

/// Windows of `±half_width_sec` around each mention, in 1-second segments.
pub fn windows_from_mentions(
    indices: &[usize],
    transcript: &TimedTranscript,
    half_width_sec: f64,
    num_segments: usize,
) -> Result<ConstraintWindows> {
    windows_from_mentions_scaled(indices, transcript, half_width_sec, num_segments, 1.0)
}

/// Window of step k is `[floor((t_k - h) / s), ceil((t_k + h) / s)]` clipped
/// to `[0, T-1]`, where `t_k` is the mention time and `s` the segment length.
pub fn windows_from_mentions_scaled(
    indices: &[usize],
    transcript: &TimedTranscript,
    half_width_sec: f64,
    num_segments: usize,
    seconds_per_segment: f64,
) -> Result<ConstraintWindows> {
    if !(half_width_sec > 0.0 && half_width_sec.is_finite()) {
        return Err(Error::invalid("half width must be positive"));
    }
    if !(seconds_per_segment > 0.0 && seconds_per_segment.is_finite()) {
        return Err(Error::invalid("segment length must be positive"));
    }
    if num_segments == 0 {
        return Err(Error::invalid("video has no segments"));
    }
    if indices.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::invalid("mention indices must be strictly increasing"));
    }
    let last = (num_segments - 1) as f64;
    let windows = indices
        .iter()
        .map(|&l| {
            if l >= transcript.len() {
                return Err(Error::invalid(format!(
                    "mention index {l} beyond transcript of {} words",
                    transcript.len()
                )));
            }
            let t = transcript.time(l);
            let lo = ((t - half_width_sec) / seconds_per_segment).floor().clamp(0.0, last);
            let hi = ((t + half_width_sec) / seconds_per_segment).ceil().clamp(0.0, last);
            Ok(Some((lo as usize, hi as usize)))
        })
        .collect::<Result<Vec<_>>>()?;
    ConstraintWindows::new(windows)
}

/// Parameters of the narration pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextParams {
    pub window: usize,
    pub half_width_sec: f64,
}

impl Default for TextParams {
    fn default() -> Self {
        TextParams {
            window: DEFAULT_WINDOW_WORDS,
            half_width_sec: DEFAULT_HALF_WIDTH_SEC,
        }
    }
}

/// TF-IDF, similarity, ordered localization and windowing in one call.
pub fn text_windows(
    transcript: &TimedTranscript,
    task: &TaskSpec,
    num_segments: usize,
    seconds_per_segment: f64,
    params: TextParams,
) -> Result<ConstraintWindows> {
    let emb = sliding_tfidf(transcript, task, params.window)?;
    let sim = similarity(&emb.windows, &emb.steps)?;
    let mentions = localize_steps(&sim)?;
    windows_from_mentions_scaled(
        &mentions,
        transcript,
        params.half_width_sec,
        num_segments,
        seconds_per_segment,
    )
}

/// `a^T b / (|a| |b|)`.
pub fn cossim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "vector length",
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Hinge loss pulling an anchor towards same-meaning sentences and away from
/// different-meaning ones:
/// `(1/|P|) sum_{p in P, n in N} max(0, cos(a, n) - cos(a, p) + margin)`.
pub fn triplet_margin_loss(
    anchor: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    margin: f64,
) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid(
            "triplet loss needs at least one positive and one negative",
        ));
    }
    if !(margin >= 0.0) {
        return Err(Error::invalid("margin must be non-negative"));
    }
    let pos = positives
        .iter()
        .map(|p| cossim(anchor, p))
        .collect::<Result<Vec<_>>>()?;
    let neg = negatives
        .iter()
        .map(|n| cossim(anchor, n))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = pos
        .iter()
        .flat_map(|p| neg.iter().map(move |n| (n - p + margin).max(0.0)))
        .sum();
    Ok(total / positives.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{brute_force, AssignmentMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transcript(words: &[(&str, f64)]) -> TimedTranscript {
        TimedTranscript::new(words.iter().map(|(w, t)| (w.to_string(), *t)).collect()).unwrap()
    }

    fn task(steps: &[&str]) -> TaskSpec {
        TaskSpec::new("t", "t", steps.iter().copied()).unwrap()
    }

    #[test]
    fn identical_text_has_unit_similarity() {
        let tr = transcript(&[("pour", 0.0), ("milk", 0.5)]);
        let emb = sliding_tfidf(&tr, &task(&["pour milk"]), 5).unwrap();
        let sim = similarity(&emb.windows, &emb.steps).unwrap();
        assert!((sim.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_vocabularies_are_orthogonal() {
        let tr = transcript(&[("hello", 0.0), ("there", 0.5), ("friends", 1.0)]);
        let emb = sliding_tfidf(&tr, &task(&["pour milk", "cut steak"]), 2).unwrap();
        let sim = similarity(&emb.windows, &emb.steps).unwrap();
        assert!(sim.values().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn toy_tfidf_weights_by_hand() {
        // Windows of two words: {pour, milk}, {milk, now}, {now}; one step
        // {pour, milk}. N = 4 documents; df(pour) = 2, df(milk) = 3, df(now) = 2.
        let tr = transcript(&[("pour", 0.0), ("milk", 1.0), ("now", 2.0)]);
        let emb = sliding_tfidf(&tr, &task(&["pour milk"]), 2).unwrap();
        assert_eq!(emb.terms, ["pour", "milk", "now"]);
        let idf_pour = (5.0f64 / 3.0).ln() + 1.0;
        let idf_milk = (5.0f64 / 4.0).ln() + 1.0;
        let idf_now = (5.0f64 / 3.0).ln() + 1.0;

        let n0 = (idf_pour * idf_pour + idf_milk * idf_milk).sqrt();
        let n1 = (idf_milk * idf_milk + idf_now * idf_now).sqrt();
        let expected = [
            [idf_pour / n0, idf_milk / n0, 0.0],
            [0.0, idf_milk / n1, idf_now / n1],
            [0.0, 0.0, 1.0],
        ];
        for (l, row) in expected.iter().enumerate() {
            for (d, &want) in row.iter().enumerate() {
                assert!((emb.windows[(l, d)] - want).abs() < 1e-12, "U[{l},{d}]");
            }
        }
        for (d, &want) in expected[0].iter().enumerate() {
            assert!((emb.steps[(0, d)] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_examples() {
        let u = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let s = 0.5f64.sqrt();
        let v = Mat::from_rows(&[[1.0, 0.0], [s, s]]);
        let sim = similarity(&u, &v).unwrap();
        assert_eq!(sim.get(0, 0), 1.0);
        assert_eq!(sim.get(1, 0), 0.0);
        assert!((sim.get(0, 1) - 0.7071067811865476).abs() < 1e-9);
        assert!(similarity(&u, &Mat::zeros(1, 3)).is_err());
        // Swapping identical inputs leaves the matrix unchanged.
        let a = similarity(&v, &v).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn localize_single_step_is_argmax() {
        let mut m = Mat::zeros(10, 1);
        m[(7, 0)] = 0.9;
        m[(2, 0)] = 0.4;
        assert_eq!(localize_steps(&SimilarityMatrix::from_mat(m).unwrap()).unwrap(), vec![7]);
    }

    #[test]
    fn localize_diagonal() {
        let mut m = Mat::zeros(6, 4);
        for k in 0..4 {
            m[(k, k)] = 1.0;
        }
        assert_eq!(
            localize_steps(&SimilarityMatrix::from_mat(m).unwrap()).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(localize_steps(&SimilarityMatrix::from_mat(Mat::zeros(2, 3)).unwrap()).is_err());
    }

    #[test]
    fn localize_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = Mat::from_vec(6, 2, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
            let sim = SimilarityMatrix::from_mat(m.clone()).unwrap();
            let neg = CostMatrix::new(m.map(|v| -v)).unwrap();
            let oracle = brute_force(&neg, AssignmentMode::SingleFrame).unwrap();
            assert_eq!(localize_steps(&sim).unwrap(), oracle.times());
        }
    }

    #[test]
    fn mention_windows() {
        let tr = transcript(&[("a", 1.0), ("b", 10.0), ("c", 40.0)]);
        let w = windows_from_mentions(&[1], &tr, 4.5, 100).unwrap();
        assert_eq!(w.get(0), Some((5, 15)));
        // floor(1 - 4.5) clips to 0; ceil(1 + 4.5) = 6.
        let w = windows_from_mentions(&[0], &tr, 4.5, 100).unwrap();
        assert_eq!(w.get(0), Some((0, 6)));
        let w = windows_from_mentions(&[1, 2], &tr, 4.5, 100).unwrap();
        let ((_, hi0), (lo1, _)) = (w.get(0).unwrap(), w.get(1).unwrap());
        assert!(hi0 < lo1);
        let w = windows_from_mentions(&[2], &tr, 4.5, 30).unwrap();
        assert_eq!(w.get(0), Some((29, 29)));
        assert!(windows_from_mentions(&[1, 1], &tr, 4.5, 100).is_err());
        assert!(windows_from_mentions(&[0], &tr, 0.0, 100).is_err());
    }

    #[test]
    fn cossim_examples() {
        assert!((cossim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cossim(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert!((cossim(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.7071067811865476).abs() < 1e-9);
        assert!(cossim(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn triplet_loss_examples() {
        let a = vec![1.0, 0.0];
        let loss = triplet_margin_loss(&a, &[vec![2.0, 0.0]], &[vec![0.0, 1.0]], 0.1).unwrap();
        assert_eq!(loss, 0.0);
        let p = vec![0.3, 0.4];
        let loss = triplet_margin_loss(&a, &[p.clone()], &[p], 0.1).unwrap();
        assert!((loss - 0.1).abs() < 1e-15);
        assert!(triplet_margin_loss(&a, &[], &[vec![1.0, 0.0]], 0.1).is_err());
        assert!(triplet_margin_loss(&a, &[vec![1.0, 0.0]], &[], 0.1).is_err());
    }

    #[test]
    fn triplet_loss_matches_direct_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut unit = |d: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let a = unit(5);
        let pos = vec![unit(5), unit(5)];
        let neg = vec![unit(5), unit(5), unit(5)];
        let dotp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let mut direct = 0.0;
        for p in &pos {
            for n in &neg {
                direct += f64::max(0.0, dotp(&a, n) - dotp(&a, p) + 0.1);
            }
        }
        direct /= 2.0;
        let loss = triplet_margin_loss(&a, &pos, &neg, 0.1).unwrap();
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn transcript_times_must_not_decrease() {
        assert!(TimedTranscript::new(vec![("a".into(), 2.0), ("b".into(), 1.0)]).is_err());
        assert!(TimedTranscript::new(vec![("a".into(), f64::NAN)]).is_err());
    }

    proptest! {
        #[test]
        fn tfidf_rows_are_unit_and_similarities_bounded(
            words in proptest::collection::vec(prop_oneof!["pour", "milk", "egg", "cut", "the", "now"], 1..20),
            window in 1usize..6,
        ) {
            let tr = TimedTranscript::new(
                words.iter().enumerate().map(|(i, w)| (w.to_string(), i as f64)).collect(),
            ).unwrap();
            let emb = sliding_tfidf(&tr, &task(&["pour milk", "crack egg", "cut steak"]), window).unwrap();
            for m in [&emb.windows, &emb.steps] {
                for r in 0..m.rows() {
                    let n: f64 = m.row(r).iter().map(|x| x * x).sum();
                    prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
                }
            }
            let sim = similarity(&emb.windows, &emb.steps).unwrap();
            prop_assert!(sim.values().as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn localization_ignores_constant_offsets(
            raw in proptest::collection::vec(-4i32..=4, 18), c in -3i32..=3,
        ) {
            let m = Mat::from_vec(6, 3, raw.iter().map(|&v| v as f64 / 8.0).collect());
            let shifted = m.map(|v| v + c as f64 / 8.0);
            // Shifted entries may leave [-1, 1]; bypass the range check.
            let a = localize_steps(&SimilarityMatrix(m)).unwrap();
            let b = localize_steps(&SimilarityMatrix(shifted)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn windows_keep_mention_order(times in proptest::collection::vec(0.0f64..200.0, 1..8)) {
            let mut times = times;
            times.sort_by(f64::total_cmp);
            let tr = TimedTranscript::new(times.iter().map(|&t| ("w".to_string(), t)).collect()).unwrap();
            let idx: Vec<usize> = (0..times.len()).collect();
            let w = windows_from_mentions(&idx, &tr, 4.5, 150).unwrap();
            for k in 1..idx.len() {
                prop_assert!(w.get(k - 1).unwrap().0 <= w.get(k).unwrap().0);
            }
        }

        #[test]
        fn triplet_loss_zero_when_separated(
            pos in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..4),
            neg in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..4),
            anchor in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let nonzero = |v: &Vec<f64>| v.iter().any(|x| x.abs() > 1e-3);
            prop_assume!(nonzero(&anchor) && pos.iter().all(nonzero) && neg.iter().all(nonzero));
            let h = 0.1;
            let loss = triplet_margin_loss(&anchor, &pos, &neg, h).unwrap();
            prop_assert!(loss >= 0.0);
            let min_p = pos.iter().map(|p| cossim(&anchor, p).unwrap()).fold(f64::INFINITY, f64::min);
            let max_n = neg.iter().map(|n| cossim(&anchor, n).unwrap()).fold(f64::NEG_INFINITY, f64::max);
            if min_p >= max_n + h {
                prop_assert_eq!(loss, 0.0);
            }
        }
    }
}
