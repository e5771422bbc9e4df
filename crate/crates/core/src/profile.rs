//! Per-task configuration: aspects, templates and the m / K constants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{aspect_names, TaskTemplates};
use crate::dialogue::{validate_aspects, AspectConfig, SpeakerLabels, Task};
use crate::error::Result;

/// Candidates each promoter proposes (m).
pub fn default_candidate_count(task: Task) -> usize {
    match task {
        Task::Esc => 4,
        Task::Persuasion => 3,
    }
}

/// Candidates passed to the generator (K).
pub const DEFAULT_TOP_K: usize = 3;

/// Everything the turn pipeline needs to know about one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskProfile {
    pub task: Task,
    pub aspects: Vec<AspectConfig>,
    pub templates: TaskTemplates,
    pub top_k: usize,
    pub labels: SpeakerLabels,
}

impl TaskProfile {
    pub fn builtin(task: Task) -> Self {
        Self::from_templates(TaskTemplates::builtin(task), default_candidate_count(task))
    }

    /// Loads templates from `dir`, falling back to builtin copies.
    pub fn from_dir(dir: &Path, task: Task) -> Result<Self> {
        let (templates, fell_back) = TaskTemplates::load_dir(dir, task)?;
        if !fell_back.is_empty() {
            tracing::info!(?fell_back, %task, "using builtin templates for missing files");
        }
        Ok(Self::from_templates(
            templates,
            default_candidate_count(task),
        ))
    }

    pub fn from_templates(templates: TaskTemplates, m: usize) -> Self {
        let task = templates.task;
        let labels = SpeakerLabels::for_task(task);
        let aspects = templates
            .aspects
            .iter()
            .enumerate()
            .map(|(i, a)| AspectConfig {
                aspect_id: i + 1,
                name: a.name.clone(),
                tracker_template: a.tracker.clone(),
                promoter_template: a.promoter.clone(),
                candidate_count: m,
                speaker_labels: labels.clone(),
            })
            .collect();
        Self {
            task,
            aspects,
            templates,
            top_k: DEFAULT_TOP_K,
            labels,
        }
    }

    pub fn with_candidate_count(mut self, m: usize) -> Self {
        for a in &mut self.aspects {
            a.candidate_count = m;
        }
        self
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = k;
        self
    }

    pub fn n_aspects(&self) -> usize {
        self.aspects.len()
    }

    pub fn aspect_name(&self, id: usize) -> Option<&str> {
        self.aspects
            .iter()
            .find(|a| a.aspect_id == id)
            .map(|a| a.name.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        validate_aspects(&self.aspects)?;
        if self.top_k == 0 {
            return Err(crate::error::Error::invalid("top_k must be at least 1"));
        }
        Ok(())
    }
}

/// Aspect id for a name such as `"comforting"`.
pub fn aspect_id_by_name(task: Task, name: &str) -> Option<usize> {
    let name = name.trim().to_lowercase();
    aspect_names(task)
        .iter()
        .position(|n| *n == name)
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_profiles_have_three_aspects() {
        for task in Task::all() {
            let p = TaskProfile::builtin(task);
            p.validate().unwrap();
            assert_eq!(p.n_aspects(), 3);
        }
    }

    #[test]
    fn default_constants() {
        assert_eq!(default_candidate_count(Task::Esc), 4);
        assert_eq!(default_candidate_count(Task::Persuasion), 3);
        assert_eq!(DEFAULT_TOP_K, 3);
        assert_eq!(
            TaskProfile::builtin(Task::Esc).aspects[0].candidate_count,
            4
        );
    }

    #[test]
    fn aspect_lookup() {
        assert_eq!(aspect_id_by_name(Task::Esc, "Comforting"), Some(2));
        assert_eq!(aspect_id_by_name(Task::Persuasion, "proposition"), Some(3));
        assert_eq!(aspect_id_by_name(Task::Esc, "appeal"), None);
    }
}
