use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const ASC_CLASSES: usize = 10;
pub const TAG_CLASSES: usize = 80;
pub const SED_CLASSES: usize = 14;

/// The three jointly learned tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    /// Acoustic scene classification (multiclass, per segment).
    #[serde(rename = "ASC")]
    Asc,
    /// Audio tagging (multilabel, per segment).
    #[serde(rename = "TAG")]
    Tag,
    /// Sound event detection (multilabel, per frame).
    #[serde(rename = "SED")]
    Sed,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Asc, Task::Tag, Task::Sed];

    pub fn classes(self) -> usize {
        match self {
            Task::Asc => ASC_CLASSES,
            Task::Tag => TAG_CLASSES,
            Task::Sed => SED_CLASSES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Asc => "ASC",
            Task::Tag => "TAG",
            Task::Sed => "SED",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ASC" => Ok(Task::Asc),
            "TAG" => Ok(Task::Tag),
            "SED" => Ok(Task::Sed),
            other => Err(format!("unknown task `{other}` (expected ASC, TAG or SED)")),
        }
    }
}

/// Subset of tasks; iteration order is always ASC, TAG, SED.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct TaskSet([bool; 3]);

impl TaskSet {
    pub const fn empty() -> Self {
        Self([false; 3])
    }

    pub const fn all() -> Self {
        Self([true; 3])
    }

    pub fn only(task: Task) -> Self {
        let mut s = Self::empty();
        s.insert(task);
        s
    }

    pub fn insert(&mut self, task: Task) {
        self.0[task.index()] = true;
    }

    pub fn contains(&self, task: Task) -> bool {
        self.0[task.index()]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = Task> + '_ {
        Task::ALL.into_iter().filter(|t| self.contains(*t))
    }
}

impl FromIterator<Task> for TaskSet {
    fn from_iter<I: IntoIterator<Item = Task>>(iter: I) -> Self {
        let mut s = Self::empty();
        for t in iter {
            s.insert(t);
        }
        s
    }
}

impl Serialize for TaskSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for TaskSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tasks = Vec::<Task>::deserialize(deserializer)?;
        Ok(tasks.into_iter().collect())
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Task::as_str).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}
