//! Task taxonomy and hierarchical elimination of class instances.
//!
//! The scene-level prediction (Task 1) prunes collapse mode (Task 5) and
//! component type (Task 6); the collapse-mode prediction then prunes damage
//! level (Task 7) and damage type (Task 8). Eliminations only ever remove
//! classes, and removing a class a task does not have is a no-op.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    Task1,
    Task5,
    Task6,
    Task7,
    Task8,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::Task1,
        TaskId::Task5,
        TaskId::Task6,
        TaskId::Task7,
        TaskId::Task8,
    ];

    /// Class names in taxonomy order.
    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            TaskId::Task1 => &["Pixel", "Object", "Structural"],
            TaskId::Task5 => &["None", "Partial", "Global"],
            TaskId::Task6 => &["Beam", "Column", "Wall", "Other"],
            TaskId::Task7 => &["Undamaged", "Minor", "Moderate", "Heavy"],
            TaskId::Task8 => &["Undamaged", "Flexural", "Shear", "Combined"],
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TaskId::Task1 => "scene level",
            TaskId::Task5 => "collapse mode",
            TaskId::Task6 => "component type",
            TaskId::Task7 => "damage level",
            TaskId::Task8 => "damage type",
        }
    }

    pub fn class_count(self) -> usize {
        self.vocabulary().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Task1 => "Task1",
            TaskId::Task5 => "Task5",
            TaskId::Task6 => "Task6",
            TaskId::Task7 => "Task7",
            TaskId::Task8 => "Task8",
        }
    }

    /// Every label of the task, in vocabulary order.
    pub fn labels(self) -> impl Iterator<Item = ClassLabel> {
        (0..self.class_count()).map(move |i| ClassLabel {
            task: self,
            index: i as u8,
        })
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownTask(s.to_owned()))
    }
}

/// A class drawn from one task's closed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel {
    task: TaskId,
    index: u8,
}

impl ClassLabel {
    pub fn new(task: TaskId, name: &str) -> Result<Self> {
        task.vocabulary()
            .iter()
            .position(|&n| n == name)
            .map(|i| ClassLabel {
                task,
                index: i as u8,
            })
            .ok_or_else(|| Error::UnknownLabel {
                task: task.to_string(),
                label: name.to_owned(),
            })
    }

    pub fn from_index(task: TaskId, index: usize) -> Option<Self> {
        (index < task.class_count()).then_some(ClassLabel {
            task,
            index: index as u8,
        })
    }

    pub fn task(self) -> TaskId {
        self.task
    }

    pub fn index(self) -> usize {
        self.index as usize
    }

    pub fn name(self) -> &'static str {
        self.task.vocabulary()[self.index()]
    }

    fn expect_task(self, expected: TaskId) -> Result<Self> {
        if self.task == expected {
            Ok(self)
        } else {
            Err(Error::WrongTask {
                label: self.name().to_owned(),
                expected: expected.as_str(),
                actual: self.task.as_str(),
            })
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.task, self.name())
    }
}

#[derive(Serialize, Deserialize)]
struct LabelRepr {
    task: TaskId,
    name: String,
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LabelRepr {
            task: self.task,
            name: self.name().to_owned(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = LabelRepr::deserialize(deserializer)?;
        ClassLabel::new(repr.task, &repr.name).map_err(serde::de::Error::custom)
    }
}

/// Ordered subset of one task's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskClassSet {
    task: TaskId,
    mask: u8,
}

impl TaskClassSet {
    pub fn full(task: TaskId) -> Self {
        TaskClassSet {
            task,
            mask: (1u8 << task.class_count()) - 1,
        }
    }

    pub fn from_names<S: AsRef<str>>(task: TaskId, names: &[S]) -> Result<Self> {
        let mut mask = 0u8;
        for n in names {
            mask |= 1 << ClassLabel::new(task, n.as_ref())?.index;
        }
        Ok(TaskClassSet { task, mask })
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn contains(&self, label: ClassLabel) -> bool {
        label.task == self.task && self.mask & (1 << label.index) != 0
    }

    pub fn contains_index(&self, index: usize) -> bool {
        index < self.task.class_count() && self.mask & (1 << index) != 0
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn members(&self) -> Vec<ClassLabel> {
        self.task.labels().filter(|l| self.contains(*l)).collect()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.members().into_iter().map(ClassLabel::name).collect()
    }

    pub fn is_subset_of(&self, other: &TaskClassSet) -> bool {
        self.task == other.task && self.mask & !other.mask == 0
    }

    /// Set difference by name. Names outside the vocabulary are ignored.
    pub fn without(mut self, names: &[&str]) -> Self {
        for name in names {
            if let Ok(label) = ClassLabel::new(self.task, name) {
                self.mask &= !(1 << label.index);
            }
        }
        self
    }
}

/// Full vocabulary of `task`, in taxonomy order.
pub fn base_set(task: TaskId) -> TaskClassSet {
    TaskClassSet::full(task)
}

/// Admissible Task 5 and Task 6 classes given the scene level.
pub fn refine_stage1(task1_prediction: ClassLabel) -> Result<(TaskClassSet, TaskClassSet)> {
    let label = task1_prediction.expect_task(TaskId::Task1)?;
    let task5 = base_set(TaskId::Task5);
    let task6 = base_set(TaskId::Task6);
    Ok(match label.name() {
        "Pixel" | "Object" => (task5.without(&["Global"]), task6.without(&["Other"])),
        _ => (
            task5.without(&["Partial"]),
            task6.without(&["Beam", "Column", "Wall"]),
        ),
    })
}

/// Admissible Task 7 and Task 8 classes given the collapse mode.
pub fn refine_stage2(task5_prediction: ClassLabel) -> Result<(TaskClassSet, TaskClassSet)> {
    let label = task5_prediction.expect_task(TaskId::Task5)?;
    let task7 = base_set(TaskId::Task7);
    let task8 = base_set(TaskId::Task8);
    Ok(match label.name() {
        "None" => (task7.without(&["Moderate", "Heavy"]), task8),
        "Partial" => (
            task7.without(&["Undamaged", "Heavy"]),
            task8.without(&["Undamaged"]),
        ),
        // "Minor" is not a damage type; its removal is a no-op.
        _ => (
            task7.without(&["Undamaged", "Minor"]),
            task8.without(&["Undamaged", "Minor"]),
        ),
    })
}

/// Refined class sets for the four downstream tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RefinementResult {
    pub task5: TaskClassSet,
    pub task6: TaskClassSet,
    pub task7: TaskClassSet,
    pub task8: TaskClassSet,
}

impl RefinementResult {
    pub fn set_for(&self, task: TaskId) -> Option<&TaskClassSet> {
        match task {
            TaskId::Task1 => None,
            TaskId::Task5 => Some(&self.task5),
            TaskId::Task6 => Some(&self.task6),
            TaskId::Task7 => Some(&self.task7),
            TaskId::Task8 => Some(&self.task8),
        }
    }

    pub fn sets(&self) -> [&TaskClassSet; 4] {
        [&self.task5, &self.task6, &self.task7, &self.task8]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefinementRepr {
    #[serde(rename = "Task5")]
    task5: Vec<String>,
    #[serde(rename = "Task6")]
    task6: Vec<String>,
    #[serde(rename = "Task7")]
    task7: Vec<String>,
    #[serde(rename = "Task8")]
    task8: Vec<String>,
}

impl Serialize for RefinementResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let names = |s: &TaskClassSet| s.names().into_iter().map(str::to_owned).collect();
        RefinementRepr {
            task5: names(&self.task5),
            task6: names(&self.task6),
            task7: names(&self.task7),
            task8: names(&self.task8),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RefinementResult {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = RefinementRepr::deserialize(deserializer)?;
        let set = |task, names: &[String]| {
            TaskClassSet::from_names(task, names).map_err(serde::de::Error::custom)
        };
        Ok(RefinementResult {
            task5: set(TaskId::Task5, &repr.task5)?,
            task6: set(TaskId::Task6, &repr.task6)?,
            task7: set(TaskId::Task7, &repr.task7)?,
            task8: set(TaskId::Task8, &repr.task8)?,
        })
    }
}

/// Runs both elimination stages.
///
/// In `strict` mode a Task 5 prediction that stage one already eliminated is
/// reported as [`Error::InconsistentPrediction`].
pub fn refine_class_instances(
    task1_prediction: ClassLabel,
    task5_prediction: ClassLabel,
    strict: bool,
) -> Result<RefinementResult> {
    let (task5, task6) = refine_stage1(task1_prediction)?;
    let (task7, task8) = refine_stage2(task5_prediction)?;
    if strict && !task5.contains(task5_prediction) {
        return Err(Error::InconsistentPrediction {
            task1: task1_prediction.name().to_owned(),
            task5: task5_prediction.name().to_owned(),
        });
    }
    Ok(RefinementResult {
        task5,
        task6,
        task7,
        task8,
    })
}

/// Zeroes the scores of eliminated classes, optionally rescaling the
/// survivors to sum to one.
pub fn apply_mask(scores: &[f64], allowed: &TaskClassSet, renormalize: bool) -> Result<Vec<f64>> {
    let expected = allowed.task().class_count();
    if scores.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "scores must be finite and non-negative, got {bad}"
        )));
    }
    let mut masked: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| if allowed.contains_index(i) { s } else { 0.0 })
        .collect();
    if renormalize {
        let mass: f64 = masked.iter().sum();
        if mass <= 0.0 {
            return Err(Error::AllMasked);
        }
        masked.iter_mut().for_each(|s| *s /= mass);
    }
    Ok(masked)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}
