//! Synthetic corpora with planted, ordered steps built from a shared pool of
//! components, for checking the whole pipeline at desk scale.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{infer, recall, uniform_baseline, GroundTruth};
use crate::features::FeatureSequence;
use crate::io;
use crate::matrix::Mat;
use crate::stem::stem;
use crate::task::{Granularity, TaskSet, TaskSpec};
use crate::text::{text_windows, TextParams, TimedTranscript};
use crate::trainer::{train, TrainConfig, TrainingVideo};

const FILLER: &[&str] = &[
    "the", "and", "now", "we", "then", "just", "so", "okay", "right", "it", "you", "here", "this",
    "that", "little", "bit", "going", "to", "a", "of", "with", "is", "our", "next",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_tasks: usize,
    pub steps_per_task: usize,
    pub components_per_step: usize,
    pub shared_component_pool_size: usize,
    pub videos_per_task: usize,
    /// Segments per video; each segment lasts one second.
    pub video_length: usize,
    pub feature_dim: usize,
    pub signal_strength: f64,
    /// Root-mean-square norm of the per-segment noise vector.
    pub noise_std: f64,
    pub missing_step_prob: f64,
    pub narration_jitter_sec: f64,
    pub seed: u64,
    /// Share of segments outside every step.
    pub background_fraction: f64,
    /// Leading share of each task's videos marked for training.
    pub train_fraction: f64,
    pub filler_words_per_sec: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_tasks: 10,
            steps_per_task: 4,
            components_per_step: 2,
            shared_component_pool_size: 12,
            videos_per_task: 20,
            video_length: 60,
            feature_dim: 32,
            signal_strength: 1.0,
            noise_std: 0.75,
            missing_step_prob: 0.2,
            narration_jitter_sec: 2.0,
            seed: 0,
            background_fraction: 0.72,
            train_fraction: 0.5,
            filler_words_per_sec: 1.5,
        }
    }
}

fn binomial_at_least(n: usize, k: usize, need: usize) -> bool {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c >= need as u128 {
            return true;
        }
    }
    c >= need as u128
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_tasks", self.num_tasks),
            ("steps_per_task", self.steps_per_task),
            ("components_per_step", self.components_per_step),
            ("shared_component_pool_size", self.shared_component_pool_size),
            ("videos_per_task", self.videos_per_task),
            ("video_length", self.video_length),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        let unit = [
            ("missing_step_prob", self.missing_step_prob),
            ("train_fraction", self.train_fraction),
        ];
        if let Some((name, v)) = unit.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return Err(Error::invalid("background_fraction must lie in [0, 1)"));
        }
        if !(self.signal_strength.is_finite() && self.signal_strength > 0.0) {
            return Err(Error::invalid("signal_strength must be positive"));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("narration_jitter_sec", self.narration_jitter_sec),
            ("filler_words_per_sec", self.filler_words_per_sec),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        if self.video_length < self.steps_per_task {
            return Err(Error::invalid(format!(
                "{} steps do not fit in {} segments",
                self.steps_per_task, self.video_length
            )));
        }
        if self.components_per_step > self.shared_component_pool_size {
            return Err(Error::invalid("components_per_step exceeds the pool size"));
        }
        if !binomial_at_least(
            self.shared_component_pool_size,
            self.components_per_step,
            self.steps_per_task,
        ) {
            return Err(Error::invalid(
                "the pool cannot give every step of a task a distinct component set",
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub name: String,
    pub task: usize,
    pub features: FeatureSequence,
    pub transcript: TimedTranscript,
    pub ground_truth: GroundTruth,
    /// Segment span of each step, `None` when missing.
    pub planted: Vec<Option<(usize, usize)>>,
    pub train: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub tasks: Vec<TaskSpec>,
    /// Pool words, one per component.
    pub components: Vec<String>,
    /// Pool indices used by each step of each task.
    pub step_components: Vec<Vec<Vec<usize>>>,
    pub directions: Mat,
    pub videos: Vec<SyntheticVideo>,
}

impl SyntheticCorpus {
    pub fn train_videos(&self) -> impl Iterator<Item = &SyntheticVideo> {
        self.videos.iter().filter(|v| v.train)
    }

    pub fn test_videos(&self) -> impl Iterator<Item = &SyntheticVideo> {
        self.videos.iter().filter(|v| !v.train)
    }
}

/// Distinct pronounceable words that are their own stem.
fn pseudo_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aiou";
    let taken: HashSet<&str> = FILLER.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
        }
        if taken.contains(w.as_str()) || seen.contains(&w) {
            continue;
        }
        if stem(&w).is_ok_and(|s| s == w) {
            seen.insert(w.clone());
            out.push(w);
        }
    }
    out
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Splits `total` into `bins` counts of at least `min` each, uniformly at
/// random.
fn random_split(total: usize, bins: usize, min: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = vec![min; bins];
    for _ in 0..total - min * bins {
        out[rng.random_range(0..bins)] += 1;
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let components = pseudo_words(spec.shared_component_pool_size, &mut rng);
    let mut directions = Mat::zeros(components.len(), spec.feature_dim);
    for m in 0..components.len() {
        directions
            .row_mut(m)
            .copy_from_slice(&unit_vector(spec.feature_dim, &mut rng));
    }

    let mut tasks = Vec::with_capacity(spec.num_tasks);
    let mut step_components = Vec::with_capacity(spec.num_tasks);
    for i in 0..spec.num_tasks {
        let mut sets: Vec<Vec<usize>> = Vec::new();
        while sets.len() < spec.steps_per_task {
            let mut set = sample(&mut rng, components.len(), spec.components_per_step).into_vec();
            set.sort_unstable();
            if !sets.contains(&set) {
                sets.push(set);
            }
        }
        let texts: Vec<String> = sets
            .iter()
            .map(|s| s.iter().map(|&m| components[m].as_str()).collect::<Vec<_>>().join(" "))
            .collect();
        tasks.push(TaskSpec::new(format!("task{i:02}"), format!("Synthetic task {i}"), texts)?);
        step_components.push(sets);
    }

    let means: Vec<Vec<Vec<f64>>> = step_components
        .iter()
        .map(|sets| {
            sets.iter()
                .map(|set| {
                    let mut v = vec![0.0; spec.feature_dim];
                    for &m in set {
                        for (a, b) in v.iter_mut().zip(directions.row(m)) {
                            *a += b / set.len() as f64;
                        }
                    }
                    v
                })
                .collect()
        })
        .collect();

    // Isotropic noise with E|n|^2 = noise_std^2, on the same scale as the
    // signal vector whose norm is at most signal_strength.
    let noise = Normal::new(0.0, spec.noise_std / (spec.feature_dim as f64).sqrt())
        .map_err(|e| Error::invalid(format!("noise_std: {e}")))?;
    let n_train = (spec.train_fraction * spec.videos_per_task as f64).round() as usize;
    let t_len = spec.video_length;
    let k_len = spec.steps_per_task;
    let mut videos = Vec::with_capacity(spec.num_tasks * spec.videos_per_task);
    for (task, task_spec) in tasks.iter().enumerate() {
        for j in 0..spec.videos_per_task {
            let present: Vec<usize> = (0..k_len)
                .filter(|_| !rng.random_bool(spec.missing_step_prob))
                .collect();
            let mut planted = vec![None; k_len];
            if !present.is_empty() {
                let n = present.len();
                let step_total = (((1.0 - spec.background_fraction) * t_len as f64).round() as usize)
                    .clamp(n, t_len);
                let lengths = random_split(step_total, n, 1, &mut rng);
                let gaps = random_split(t_len - step_total, n + 1, 0, &mut rng);
                let mut t = gaps[0];
                for (i, &k) in present.iter().enumerate() {
                    planted[k] = Some((t, t + lengths[i] - 1));
                    t += lengths[i] + gaps[i + 1];
                }
            }

            let mut values = Mat::zeros(t_len, spec.feature_dim);
            for (k, span) in planted.iter().enumerate() {
                if let Some((a, b)) = *span {
                    for t in a..=b {
                        for (x, m) in values.row_mut(t).iter_mut().zip(&means[task][k]) {
                            *x = spec.signal_strength * m;
                        }
                    }
                }
            }
            if spec.noise_std > 0.0 {
                for x in values.as_mut_slice() {
                    *x += noise.sample(&mut rng);
                }
            }

            let mut words: Vec<(String, f64)> = Vec::new();
            let n_filler = (spec.filler_words_per_sec * t_len as f64).round() as usize;
            for _ in 0..n_filler {
                let w = FILLER[rng.random_range(0..FILLER.len())];
                words.push((w.to_string(), rng.random_range(0.0..t_len as f64)));
            }
            for (k, span) in planted.iter().enumerate() {
                if let Some((a, _)) = *span {
                    let jitter = if spec.narration_jitter_sec > 0.0 {
                        rng.random_range(-spec.narration_jitter_sec..=spec.narration_jitter_sec)
                    } else {
                        0.0
                    };
                    let at = (a as f64 + jitter).max(0.0);
                    for (i, &m) in step_components[task][k].iter().enumerate() {
                        words.push((components[m].clone(), at + 0.01 * i as f64));
                    }
                }
            }
            words.sort_by(|x, y| x.1.total_cmp(&y.1));

            let intervals = planted
                .iter()
                .map(|s| s.map(|(a, b)| vec![(a as f64, (b + 1) as f64)]).unwrap_or_default())
                .collect();
            videos.push(SyntheticVideo {
                name: format!("{}_v{j:03}", task_spec.id),
                task,
                features: FeatureSequence::new(values)?,
                transcript: TimedTranscript::new(words)?,
                ground_truth: GroundTruth::new(intervals)?,
                planted,
                train: j < n_train,
            });
        }
    }

    Ok(SyntheticCorpus {
        tasks,
        components,
        step_components,
        directions,
        videos,
    })
}

/// Lays a corpus out under `dir`:
/// `tasks.txt`, `features/<task>/<video>.ctft`,
/// `transcripts/<task>/<video>.txt`, `annotations/<task>/<video>.tsv`, and
/// the manifests `train.tsv` (with transcripts) and `test.tsv` (without).
pub fn write_corpus(dir: &Path, corpus: &SyntheticCorpus) -> Result<()> {
    io::write_tasks(&dir.join("tasks.txt"), &corpus.tasks)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for v in &corpus.videos {
        let task_id = &corpus.tasks[v.task].id;
        let feat = format!("features/{task_id}/{}.ctft", v.name);
        let tr = format!("transcripts/{task_id}/{}.txt", v.name);
        io::write_features(&dir.join(&feat), &v.features)?;
        io::write_transcript(&dir.join(&tr), &v.transcript)?;
        io::write_annotation(
            &dir.join(format!("annotations/{task_id}/{}.tsv", v.name)),
            &v.ground_truth,
        )?;
        let entry = io::ManifestEntry {
            task_id: task_id.clone(),
            features: feat.into(),
            side: v.train.then(|| tr.into()),
        };
        if v.train {
            train.push(entry);
        } else {
            test.push(entry);
        }
    }
    let write = |name: &str, entries: &[io::ManifestEntry]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, io::format_manifest(entries)).map_err(|source| Error::Io { path, source })
    };
    write("train.tsv", &train)?;
    write("test.tsv", &test)
}

/// Test-set recall of a model trained on a corpus, next to the uniform
/// baseline on the same videos.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub recall: f64,
    pub uniform_recall: f64,
    pub history: Vec<f64>,
}

/// Trains on the corpus's training videos (with narration windows when
/// `config.use_text_constraints`) and scores the held-out videos.
pub fn run_experiment(
    corpus: &SyntheticCorpus,
    granularity: Granularity,
    config: &TrainConfig,
    text: TextParams,
) -> Result<ExperimentReport> {
    let tasks = TaskSet::new(corpus.tasks.clone(), granularity)?;
    let videos = corpus
        .train_videos()
        .map(|v| {
            let windows = if config.use_text_constraints {
                Some(text_windows(
                    &v.transcript,
                    &corpus.tasks[v.task],
                    v.features.len(),
                    v.features.seconds_per_segment(),
                    text,
                )?)
            } else {
                None
            };
            Ok(TrainingVideo {
                task: v.task,
                features: v.features.clone(),
                windows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (bank, history) = train(&videos, &tasks, config)?;

    let test: Vec<&SyntheticVideo> = corpus.test_videos().collect();
    if test.is_empty() {
        return Err(Error::invalid("corpus has no held-out videos"));
    }
    let preds = config.exec.try_map(&test, |_, v| infer(&bank, tasks.matrix(v.task), &v.features))?;
    let uniform = test
        .iter()
        .map(|v| uniform_baseline(v.features.len(), corpus.tasks[v.task].num_steps()))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<GroundTruth> = test.iter().map(|v| v.ground_truth.clone()).collect();
    Ok(ExperimentReport {
        recall: recall(&preds, &gts)?,
        uniform_recall: recall(&uniform, &gts)?,
        history,
    })
}
