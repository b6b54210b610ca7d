//! Tasks, the component vocabulary and per-task step/component matrices.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stem::{stem_tokens, tokenize};

/// A task and its ordered list of step descriptions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: String,
    pub title: String,
    steps: Vec<String>,
}

impl TaskSpec {
    /// Step descriptions are lowercased; each must contain at least one word.
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        steps: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self> {
        let id = id.into();
        let steps: Vec<String> = steps
            .into_iter()
            .map(|s| s.into().trim().to_lowercase())
            .collect();
        if id.is_empty() {
            return Err(Error::invalid("task id must not be empty"));
        }
        if steps.is_empty() {
            return Err(Error::invalid(format!("task `{id}` has no steps")));
        }
        for (k, step) in steps.iter().enumerate() {
            if tokenize(step).is_empty() {
                return Err(Error::invalid(format!(
                    "step {k} of task `{id}` has no words: `{step}`"
                )));
            }
        }
        Ok(TaskSpec {
            id,
            title: title.into(),
            steps,
        })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    /// Number of steps (K).
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// How classifiers are shared between steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One classifier per stemmed word; a step averages its words' classifiers.
    #[default]
    Component,
    /// One classifier per distinct step description across all tasks.
    SharedStep,
    /// One classifier per (task, step) pair, no sharing.
    TaskStep,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Component => "component",
            Granularity::SharedStep => "shared-step",
            Granularity::TaskStep => "task-step",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "component" => Ok(Granularity::Component),
            "shared-step" | "shared_step" => Ok(Granularity::SharedStep),
            "task-step" | "task_step" => Ok(Granularity::TaskStep),
            other => Err(Error::invalid(format!("unknown granularity `{other}`"))),
        }
    }
}

/// Ordered set of classifier keys. For [`Granularity::Component`] the keys
/// are word stems; for the step granularities they are pseudo-components.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentVocabulary {
    granularity: Granularity,
    components: Vec<String>,
    index: HashMap<String, usize>,
}

impl ComponentVocabulary {
    pub fn for_granularity(tasks: &[TaskSpec], granularity: Granularity) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid("cannot build a vocabulary from zero tasks"));
        }
        let mut vocab = ComponentVocabulary {
            granularity,
            components: Vec::new(),
            index: HashMap::new(),
        };
        for task in tasks {
            for (k, step) in task.steps.iter().enumerate() {
                for key in step_keys(task, k, step, granularity) {
                    vocab.insert(key);
                }
            }
        }
        Ok(vocab)
    }

    /// Rebuild a vocabulary from an explicit, ordered key list.
    pub fn from_components(granularity: Granularity, components: Vec<String>) -> Result<Self> {
        let mut vocab = ComponentVocabulary {
            granularity,
            components: Vec::with_capacity(components.len()),
            index: HashMap::new(),
        };
        for c in components {
            if vocab.index.contains_key(&c) {
                return Err(Error::invalid(format!("duplicate component `{c}`")));
            }
            vocab.insert(c);
        }
        if vocab.is_empty() {
            return Err(Error::invalid("empty component vocabulary"));
        }
        Ok(vocab)
    }

    fn insert(&mut self, key: String) {
        if !self.index.contains_key(&key) {
            self.index.insert(key.clone(), self.components.len());
            self.components.push(key);
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Number of components (M).
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Component vocabulary: unique stems of all step descriptions, in order of
/// first occurrence.
pub fn build_vocabulary(tasks: &[TaskSpec]) -> Result<ComponentVocabulary> {
    ComponentVocabulary::for_granularity(tasks, Granularity::Component)
}

fn step_keys(task: &TaskSpec, k: usize, step: &str, granularity: Granularity) -> Vec<String> {
    match granularity {
        Granularity::Component => stem_tokens(step),
        Granularity::SharedStep => vec![tokenize(step).join(" ")],
        Granularity::TaskStep => vec![format!("{}#{}", task.id, k)],
    }
}

/// Binary K×M matrix linking a task's steps to components, stored as the
/// sorted list of active columns of each row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepComponentMatrix {
    num_components: usize,
    rows: Vec<Vec<usize>>,
    // Union of all rows, and each row re-indexed into it.
    support: Vec<usize>,
    local_rows: Vec<Vec<usize>>,
}

impl StepComponentMatrix {
    /// Every row must be non-empty and reference columns below `num_components`.
    pub fn from_rows(num_components: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("step/component matrix needs at least one step"));
        }
        let mut clean = Vec::with_capacity(rows.len());
        for (k, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.is_empty() {
                return Err(Error::invalid(format!("step {k} has no components")));
            }
            if let Some(&m) = row.last() {
                if m >= num_components {
                    return Err(Error::DimensionMismatch {
                        what: "component index",
                        expected: num_components,
                        got: m,
                    });
                }
            }
            clean.push(row);
        }
        let mut support: Vec<usize> = clean.iter().flatten().copied().collect();
        support.sort_unstable();
        support.dedup();
        let local_rows = clean
            .iter()
            .map(|row| {
                row.iter()
                    .map(|m| support.binary_search(m).expect("column in support"))
                    .collect()
            })
            .collect();
        Ok(StepComponentMatrix {
            num_components,
            rows: clean,
            support,
            local_rows,
        })
    }

    /// Columns used by at least one step, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Row `k` as positions into [`support`](Self::support).
    pub fn local_row(&self, k: usize) -> &[usize] {
        &self.local_rows[k]
    }

    pub fn num_steps(&self) -> usize {
        self.rows.len()
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    /// Active components of step `k`.
    pub fn row(&self, k: usize) -> &[usize] {
        &self.rows[k]
    }

    pub fn row_degrees(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn entry(&self, k: usize, m: usize) -> u8 {
        u8::from(self.rows[k].binary_search(&m).is_ok())
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.num_steps())
            .map(|k| (0..self.num_components).map(|m| self.entry(k, m)).collect())
            .collect()
    }
}

pub fn build_step_component_matrix(
    task: &TaskSpec,
    vocab: &ComponentVocabulary,
    granularity: Granularity,
) -> Result<StepComponentMatrix> {
    if vocab.granularity() != granularity {
        return Err(Error::invalid(format!(
            "vocabulary was built for `{}` granularity, not `{granularity}`",
            vocab.granularity()
        )));
    }
    let rows = task
        .steps
        .iter()
        .enumerate()
        .map(|(k, step)| {
            step_keys(task, k, step, granularity)
                .into_iter()
                .map(|key| vocab.get(&key).ok_or(Error::MissingComponent(key)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    StepComponentMatrix::from_rows(vocab.len(), rows)
}

/// Tasks together with a shared vocabulary and their step/component matrices.
#[derive(Clone, Debug)]
pub struct TaskSet {
    tasks: Vec<TaskSpec>,
    vocab: ComponentVocabulary,
    matrices: Vec<StepComponentMatrix>,
    by_id: HashMap<String, usize>,
}

impl TaskSet {
    pub fn new(tasks: Vec<TaskSpec>, granularity: Granularity) -> Result<Self> {
        let vocab = ComponentVocabulary::for_granularity(&tasks, granularity)?;
        Self::with_vocabulary(tasks, vocab)
    }

    pub fn with_vocabulary(tasks: Vec<TaskSpec>, vocab: ComponentVocabulary) -> Result<Self> {
        let mut by_id = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if by_id.insert(t.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate task id `{}`", t.id)));
            }
        }
        let matrices = tasks
            .iter()
            .map(|t| build_step_component_matrix(t, &vocab, vocab.granularity()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskSet {
            tasks,
            vocab,
            matrices,
            by_id,
        })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn vocabulary(&self) -> &ComponentVocabulary {
        &self.vocab
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn task(&self, index: usize) -> &TaskSpec {
        &self.tasks[index]
    }

    pub fn matrix(&self, index: usize) -> &StepComponentMatrix {
        &self.matrices[index]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}
