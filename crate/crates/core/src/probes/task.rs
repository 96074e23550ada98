use serde::{Deserialize, Serialize};

use crate::data::{Attribute, Dataset, NUM_EMOTIONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Verification,
    IdentityClosedSet,
    Gender,
    Ethnicity,
    Emotion,
    Attractive,
    Smiling,
}

/// A classification task `k` with `C_k` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub k: usize,
    pub name: String,
    pub num_classes: usize,
    pub task: Task,
}

impl TaskSpec {
    pub fn new(k: usize, name: impl Into<String>, num_classes: usize, task: Task) -> Result<Self> {
        let name = name.into();
        if num_classes < 2 {
            return Err(Error::Config(format!("task '{name}' needs at least 2 classes, got {num_classes}")));
        }
        Ok(TaskSpec {
            k,
            name,
            num_classes,
            task,
        })
    }

    pub fn verification() -> Self {
        TaskSpec::new(1, "identity", 2, Task::Verification).expect("valid")
    }

    /// Closed-set identification over ids `0..num_identities`.
    pub fn identity(num_identities: usize) -> Result<Self> {
        TaskSpec::new(1, "identity-closed-set", num_identities, Task::IdentityClosedSet)
    }

    pub fn gender() -> Self {
        TaskSpec::new(2, "gender", 2, Task::Gender).expect("valid")
    }

    pub fn emotion() -> Self {
        TaskSpec::new(3, "emotion", NUM_EMOTIONS, Task::Emotion).expect("valid")
    }

    pub fn ethnicity() -> Self {
        TaskSpec::new(4, "ethnicity", 3, Task::Ethnicity).expect("valid")
    }

    pub fn attractive() -> Self {
        TaskSpec::new(5, "attractive", 2, Task::Attractive).expect("valid")
    }

    pub fn smiling() -> Self {
        TaskSpec::new(6, "smiling", 2, Task::Smiling).expect("valid")
    }

    /// Accuracy of uniform random guessing, in percent.
    pub fn chance_percent(&self) -> f64 {
        100.0 / self.num_classes as f64
    }

    fn attribute(&self) -> Option<Attribute> {
        match self.task {
            Task::Verification => None,
            Task::IdentityClosedSet => Some(Attribute::Identity),
            Task::Gender => Some(Attribute::Gender),
            Task::Ethnicity => Some(Attribute::Ethnicity),
            Task::Emotion => Some(Attribute::Emotion),
            Task::Attractive => Some(Attribute::Attractive),
            Task::Smiling => Some(Attribute::Smiling),
        }
    }

    /// Per-sample class labels for this task.
    pub fn labels(&self, ds: &Dataset) -> Result<Vec<usize>> {
        let attr = self.attribute().ok_or_else(|| {
            Error::UnsupportedTask(format!("'{}' is a pair task without per-sample labels", self.name))
        })?;
        let labels = ds.labels(attr);
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for task '{}' with {} classes",
                self.name, self.num_classes
            )));
        }
        Ok(labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chance_levels() {
        assert!((TaskSpec::emotion().chance_percent() - 16.67).abs() < 0.01);
        assert!((TaskSpec::ethnicity().chance_percent() - 33.33).abs() < 0.01);
        assert_eq!(TaskSpec::gender().chance_percent(), 50.0);
        assert_eq!(TaskSpec::verification().chance_percent(), 50.0);
    }

    #[test]
    fn fewer_than_two_classes_rejected() {
        assert!(matches!(TaskSpec::identity(1), Err(Error::Config(_))));
    }
}
