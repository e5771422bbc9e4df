use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::Task;
use crate::error::{Error, Result};

/// A prompt body with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub task: Task,
}

impl PromptTemplate {
    pub fn new(template_id: impl Into<String>, body: impl Into<String>, task: Task) -> Self {
        Self {
            template_id: template_id.into(),
            body: body.into(),
            task,
        }
    }

    /// Placeholder names referenced by the body, in order of first use.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for (_, name) in scan(&self.body) {
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    /// Substitutes every placeholder in one pass. Values are inserted
    /// verbatim and never re-scanned.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut cursor = 0;
        for (start, name) in scan(&self.body) {
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::MissingPlaceholder {
                    template: self.template_id.clone(),
                    name: name.to_string(),
                })?;
            out.push_str(&self.body[cursor..start]);
            out.push_str(value);
            cursor = start + name.len() + 2;
        }
        out.push_str(&self.body[cursor..]);
        Ok(out.trim_end().to_string())
    }
}

/// Yields (byte offset of `{`, name) for each `{identifier}` in `body`.
fn scan(body: &str) -> impl Iterator<Item = (usize, &str)> {
    let bytes = body.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() {
            if bytes[i] == b'{' {
                let start = i;
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                    j += 1;
                }
                if j > start + 1 && j < bytes.len() && bytes[j] == b'}' {
                    i = j + 1;
                    return Some((start, &body[start + 1..j]));
                }
            }
            i += 1;
        }
        None
    })
}

/// English number word for small counts, digits otherwise.
pub fn count_word(n: usize) -> String {
    const WORDS: [&str; 13] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve",
    ];
    WORDS
        .get(n)
        .map_or_else(|| n.to_string(), |w| w.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AspectTemplates {
    pub name: String,
    pub tracker: PromptTemplate,
    pub promoter: PromptTemplate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineTemplates {
    pub plain: PromptTemplate,
    pub cot: PromptTemplate,
    pub mixinit: PromptTemplate,
}

/// Every prompt program used for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTemplates {
    pub task: Task,
    pub aspects: Vec<AspectTemplates>,
    pub generate: PromptTemplate,
    pub seeker: Option<PromptTemplate>,
    pub baselines: BaselineTemplates,
}

pub fn aspect_names(task: Task) -> [&'static str; 3] {
    match task {
        Task::Esc => ["exploration", "comforting", "action"],
        Task::Persuasion => ["attention", "appeal", "proposition"],
    }
}

macro_rules! builtin {
    ($path:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $path))
    };
}

fn builtin_file(task: Task, rel: &str) -> Option<&'static str> {
    let s = match (task, rel) {
        (Task::Esc, "exploration/tracker.txt") => builtin!("esc/exploration/tracker.txt"),
        (Task::Esc, "exploration/promoter.txt") => builtin!("esc/exploration/promoter.txt"),
        (Task::Esc, "comforting/tracker.txt") => builtin!("esc/comforting/tracker.txt"),
        (Task::Esc, "comforting/promoter.txt") => builtin!("esc/comforting/promoter.txt"),
        (Task::Esc, "action/tracker.txt") => builtin!("esc/action/tracker.txt"),
        (Task::Esc, "action/promoter.txt") => builtin!("esc/action/promoter.txt"),
        (Task::Esc, "generate.txt") => builtin!("esc/generate.txt"),
        (Task::Esc, "seeker.txt") => builtin!("esc/seeker.txt"),
        (Task::Esc, "baselines/gpt35.txt") => builtin!("esc/baselines/gpt35.txt"),
        (Task::Esc, "baselines/gpt35_cot.txt") => builtin!("esc/baselines/gpt35_cot.txt"),
        (Task::Esc, "baselines/mixinit.txt") => builtin!("esc/baselines/mixinit.txt"),
        (Task::Persuasion, "attention/tracker.txt") => builtin!("persuasion/attention/tracker.txt"),
        (Task::Persuasion, "attention/promoter.txt") => {
            builtin!("persuasion/attention/promoter.txt")
        }
        (Task::Persuasion, "appeal/tracker.txt") => builtin!("persuasion/appeal/tracker.txt"),
        (Task::Persuasion, "appeal/promoter.txt") => builtin!("persuasion/appeal/promoter.txt"),
        (Task::Persuasion, "proposition/tracker.txt") => {
            builtin!("persuasion/proposition/tracker.txt")
        }
        (Task::Persuasion, "proposition/promoter.txt") => {
            builtin!("persuasion/proposition/promoter.txt")
        }
        (Task::Persuasion, "generate.txt") => builtin!("persuasion/generate.txt"),
        (Task::Persuasion, "baselines/gpt35.txt") => builtin!("persuasion/baselines/gpt35.txt"),
        (Task::Persuasion, "baselines/gpt35_cot.txt") => {
            builtin!("persuasion/baselines/gpt35_cot.txt")
        }
        (Task::Persuasion, "baselines/mixinit.txt") => builtin!("persuasion/baselines/mixinit.txt"),
        _ => return None,
    };
    Some(s)
}

impl TaskTemplates {
    /// Templates compiled into the binary.
    pub fn builtin(task: Task) -> Self {
        Self::assemble(task, |rel| {
            builtin_file(task, rel)
                .map(str::to_owned)
                .ok_or_else(|| Error::invalid(format!("no builtin template {task}/{rel}")))
        })
        .expect("builtin templates are complete")
    }

    /// Loads `<root>/<task>/<aspect>/{tracker,promoter}.txt`,
    /// `<root>/<task>/generate.txt`, `<root>/<task>/seeker.txt` and
    /// `<root>/<task>/baselines/*.txt`. Files absent on disk fall back to the
    /// builtin copy; the returned list names the files that did.
    pub fn load_dir(root: &Path, task: Task) -> Result<(Self, Vec<String>)> {
        let dir = root.join(task.as_str());
        let mut fell_back = Vec::new();
        let templates = Self::assemble(task, |rel| {
            let path = dir.join(rel);
            match fs::read_to_string(&path) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    fell_back.push(rel.to_string());
                    builtin_file(task, rel).map(str::to_owned).ok_or_else(|| {
                        Error::invalid(format!("missing template {}", path.display()))
                    })
                }
                Err(e) => Err(e.into()),
            }
        })?;
        Ok((templates, fell_back))
    }

    fn assemble(task: Task, mut read: impl FnMut(&str) -> Result<String>) -> Result<Self> {
        let mut load = |rel: &str| -> Result<PromptTemplate> {
            let body = read(rel)?;
            Ok(PromptTemplate::new(
                format!("{task}/{}", rel.trim_end_matches(".txt")),
                body,
                task,
            ))
        };
        let mut aspects = Vec::new();
        for name in aspect_names(task) {
            aspects.push(AspectTemplates {
                name: name.to_string(),
                tracker: load(&format!("{name}/tracker.txt"))?,
                promoter: load(&format!("{name}/promoter.txt"))?,
            });
        }
        let generate = load("generate.txt")?;
        let seeker = match task {
            Task::Esc => Some(load("seeker.txt")?),
            Task::Persuasion => None,
        };
        let baselines = BaselineTemplates {
            plain: load("baselines/gpt35.txt")?,
            cot: load("baselines/gpt35_cot.txt")?,
            mixinit: load("baselines/mixinit.txt")?,
        };
        Ok(Self {
            task,
            aspects,
            generate,
            seeker,
            baselines,
        })
    }

    /// All templates keyed by id, for listing and diffing.
    pub fn by_id(&self) -> BTreeMap<&str, &PromptTemplate> {
        let mut m = BTreeMap::new();
        for a in &self.aspects {
            m.insert(a.tracker.template_id.as_str(), &a.tracker);
            m.insert(a.promoter.template_id.as_str(), &a.promoter);
        }
        m.insert(self.generate.template_id.as_str(), &self.generate);
        if let Some(s) = &self.seeker {
            m.insert(s.template_id.as_str(), s);
        }
        for b in [
            &self.baselines.plain,
            &self.baselines.cot,
            &self.baselines.mixinit,
        ] {
            m.insert(b.template_id.as_str(), b);
        }
        m
    }
}
