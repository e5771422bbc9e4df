//! Native corpus document plus adapters for the public ESConv JSON and P4G
//! CSV layouts.
//!
//! Native layout:
//! `{task, dialogues:[{dialogue_id, problem_summary?, emotion?, problem_type?,
//!   turns:[{speaker, text, strategies?}]}], splits?:{train, val, test}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dialogue::{DialogueHistory, Speaker, Task, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_type: Option<String>,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn from_turns(id: &str, turns: Vec<(Speaker, &str)>) -> Self {
        Self {
            dialogue_id: id.to_string(),
            problem_summary: None,
            emotion: None,
            problem_type: None,
            turns: turns
                .into_iter()
                .map(|(speaker, text)| Turn {
                    speaker,
                    text: text.to_string(),
                    strategies: Vec::new(),
                })
                .collect(),
        }
    }

    /// The whole dialogue as a history.
    pub fn history(&self, task: Task) -> Result<DialogueHistory> {
        let utterances = self
            .turns
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut u = Utterance::new(t.speaker, t.text.clone(), i)?;
                u.strategies = t.strategies.clone();
                Ok(u)
            })
            .collect::<Result<Vec<_>>>()?;
        DialogueHistory::from_utterances(task, utterances)
    }

    pub fn has_strategy_annotation(&self) -> bool {
        self.turns.iter().any(|t| !t.strategies.is_empty())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub task: Task,
    pub dialogues: Vec<Dialogue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Splits>,
}

impl Corpus {
    pub fn new(task: Task, dialogues: Vec<Dialogue>) -> Result<Self> {
        let c = Self {
            task,
            dialogues,
            splits: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, d) in self.dialogues.iter().enumerate() {
            if !seen.insert(d.dialogue_id.as_str()) {
                return Err(violation(
                    format!("$.dialogues[{i}].dialogue_id"),
                    format!("duplicate id `{}`", d.dialogue_id),
                ));
            }
            for (j, t) in d.turns.iter().enumerate() {
                let path = format!("$.dialogues[{i}].turns[{j}]");
                if t.text.trim().is_empty() {
                    return Err(violation(format!("{path}.text"), "empty text"));
                }
                if t.speaker == Speaker::User && !t.strategies.is_empty() {
                    return Err(violation(
                        format!("{path}.strategies"),
                        "strategy tags are only allowed on system turns",
                    ));
                }
            }
        }
        if let Some(s) = &self.splits {
            for (name, ids) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
                for (k, id) in ids.iter().enumerate() {
                    if !seen.contains(id.as_str()) {
                        return Err(violation(
                            format!("$.splits.{name}[{k}]"),
                            format!("unknown dialogue `{id}`"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dialogues in a split; with no split manifest every dialogue is in
    /// the training split.
    pub fn split(&self, which: Split) -> Vec<&Dialogue> {
        let Some(s) = &self.splits else {
            return match which {
                Split::Train => self.dialogues.iter().collect(),
                _ => Vec::new(),
            };
        };
        let ids: BTreeSet<&str> = match which {
            Split::Train => &s.train,
            Split::Val => &s.val,
            Split::Test => &s.test,
        }
        .iter()
        .map(String::as_str)
        .collect();
        self.dialogues
            .iter()
            .filter(|d| ids.contains(d.dialogue_id.as_str()))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.dialogue_id == id)
    }

    /// SHA-256 of the canonical JSON encoding of the dialogues.
    pub fn content_hash(&self) -> [u8; 32] {
        hash_dialogues(self.dialogues.iter())
    }
}

pub fn hash_dialogues<'a>(dialogues: impl Iterator<Item = &'a Dialogue>) -> [u8; 32] {
    let mut h = Sha256::new();
    for d in dialogues {
        h.update(serde_json::to_vec(d).expect("dialogue serializes"));
        h.update(b"\n");
    }
    h.finalize().into()
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

fn parse_speaker(raw: &str, path: &str) -> Result<Speaker> {
    match raw.trim().to_lowercase().as_str() {
        "system" | "supporter" | "persuader" | "sys" | "er" | "0" => Ok(Speaker::System),
        "user" | "seeker" | "persuadee" | "usr" | "ee" | "1" => Ok(Speaker::User),
        other => Err(violation(path, format!("unknown speaker `{other}`"))),
    }
}

fn str_at<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a str> {
    v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| violation(format!("{path}.{key}"), "expected a string"))
}

fn opt_str(v: &Value, key: &str) -> Option<String> {
    v.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
}

fn strategies_at(v: &Value, path: &str) -> Result<Vec<String>> {
    match v.get("strategies") {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::String(s)) => Ok(vec![s.clone()]),
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.as_str().map(str::to_owned).ok_or_else(|| {
                    violation(format!("{path}.strategies[{i}]"), "expected a string")
                })
            })
            .collect(),
        Some(_) => Err(violation(
            format!("{path}.strategies"),
            "expected a list of strings",
        )),
    }
}

/// Parses the native document.
pub fn parse_native(doc: &Value, task: Task) -> Result<Corpus> {
    let declared = str_at(doc, "task", "$")?;
    let declared: Task = declared
        .parse()
        .map_err(|_| violation("$.task", format!("unknown task `{declared}`")))?;
    if declared != task {
        return Err(violation(
            "$.task",
            format!("corpus is for {declared}, expected {task}"),
        ));
    }
    let list = doc
        .get("dialogues")
        .and_then(Value::as_array)
        .ok_or_else(|| violation("$.dialogues", "expected a list"))?;
    let mut dialogues = Vec::with_capacity(list.len());
    for (i, d) in list.iter().enumerate() {
        let path = format!("$.dialogues[{i}]");
        let id = match d.get("dialogue_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                return Err(violation(
                    format!("{path}.dialogue_id"),
                    "expected a string",
                ))
            }
        };
        let turns_v = d
            .get("turns")
            .and_then(Value::as_array)
            .ok_or_else(|| violation(format!("{path}.turns"), "expected a list"))?;
        let mut turns = Vec::with_capacity(turns_v.len());
        for (j, t) in turns_v.iter().enumerate() {
            let tp = format!("{path}.turns[{j}]");
            turns.push(Turn {
                speaker: parse_speaker(str_at(t, "speaker", &tp)?, &format!("{tp}.speaker"))?,
                text: str_at(t, "text", &tp)?.to_string(),
                strategies: strategies_at(t, &tp)?,
            });
        }
        dialogues.push(Dialogue {
            dialogue_id: id,
            problem_summary: opt_str(d, "problem_summary"),
            emotion: opt_str(d, "emotion"),
            problem_type: opt_str(d, "problem_type"),
            turns,
        });
    }
    let splits = match doc.get("splits") {
        None | Some(Value::Null) => None,
        Some(s) => Some(
            serde_json::from_value::<Splits>(s.clone())
                .map_err(|e| violation("$.splits", e.to_string()))?,
        ),
    };
    let corpus = Corpus {
        task,
        dialogues,
        splits,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Adapts the public ESConv JSON list
/// (`[{emotion_type, problem_type, situation, dialog:[{speaker, content,
/// annotation:{strategy}}]}]`).
pub fn parse_esconv(doc: &Value) -> Result<Corpus> {
    let list = doc
        .as_array()
        .ok_or_else(|| violation("$", "expected a list of dialogues"))?;
    let mut dialogues = Vec::with_capacity(list.len());
    for (i, d) in list.iter().enumerate() {
        let path = format!("$[{i}]");
        let dialog = d
            .get("dialog")
            .and_then(Value::as_array)
            .ok_or_else(|| violation(format!("{path}.dialog"), "expected a list"))?;
        let mut turns = Vec::with_capacity(dialog.len());
        for (j, t) in dialog.iter().enumerate() {
            let tp = format!("{path}.dialog[{j}]");
            let speaker = parse_speaker(str_at(t, "speaker", &tp)?, &format!("{tp}.speaker"))?;
            let text = str_at(t, "content", &tp)?.trim().to_string();
            if text.is_empty() {
                continue;
            }
            let strategies = match speaker {
                Speaker::System => t
                    .pointer("/annotation/strategy")
                    .and_then(Value::as_str)
                    .map(|s| vec![s.to_string()])
                    .unwrap_or_default(),
                Speaker::User => Vec::new(),
            };
            turns.push(Turn {
                speaker,
                text,
                strategies,
            });
        }
        let id = opt_str(d, "dialogue_id").unwrap_or_else(|| format!("esconv-{i:04}"));
        dialogues.push(Dialogue {
            dialogue_id: id,
            problem_summary: opt_str(d, "situation"),
            emotion: opt_str(d, "emotion_type"),
            problem_type: opt_str(d, "problem_type"),
            turns,
        });
    }
    Corpus::new(Task::Esc, dialogues)
}

/// Adapts a P4G CSV with columns `B2` (dialogue id), `B4` (0 persuader,
/// 1 persuadee), `Unit` (text), optional `Turn` and optional strategy
/// columns `er_label_*`.
pub fn parse_p4g_csv(text: &str) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| violation("csv header", e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("B2").ok_or_else(|| violation("csv header", "missing column B2"))?;
    let role_col = col("B4").ok_or_else(|| violation("csv header", "missing column B4"))?;
    let text_col = col("Unit").ok_or_else(|| violation("csv header", "missing column Unit"))?;
    let label_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.trim().starts_with("er_label"))
        .map(|(i, _)| i)
        .collect();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<Turn>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let path = format!("csv row {}", row + 2);
        let rec = rec.map_err(|e| violation(path.clone(), e.to_string()))?;
        let get = |c: usize| rec.get(c).unwrap_or("").trim();
        let id = get(id_col).to_string();
        if id.is_empty() {
            return Err(violation(format!("{path}, column B2"), "empty dialogue id"));
        }
        let speaker = parse_speaker(get(role_col), &format!("{path}, column B4"))?;
        let text = get(text_col).to_string();
        if text.is_empty() {
            continue;
        }
        let strategies = match speaker {
            Speaker::System => label_cols
                .iter()
                .map(|&c| get(c))
                .filter(|s| !s.is_empty() && *s != "nan")
                .map(str::to_owned)
                .collect(),
            Speaker::User => Vec::new(),
        };
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push(Turn {
            speaker,
            text,
            strategies,
        });
    }
    let dialogues = order
        .into_iter()
        .map(|id| {
            let turns = by_id.remove(&id).unwrap_or_default();
            Dialogue {
                dialogue_id: id,
                problem_summary: None,
                emotion: None,
                problem_type: None,
                turns,
            }
        })
        .collect();
    Corpus::new(Task::Persuasion, dialogues)
}

/// Loads a corpus file: `.csv` is read as P4G, a JSON list as ESConv, and
/// a JSON object as the native schema.
pub fn load_corpus(path: &Path, task: Task) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let corpus = if is_csv {
        parse_p4g_csv(&text)?
    } else {
        let doc: Value = serde_json::from_str(&text).map_err(|e| violation("$", e.to_string()))?;
        if doc.is_array() {
            parse_esconv(&doc)?
        } else {
            parse_native(&doc, task)?
        }
    };
    if corpus.task != task {
        return Err(violation(
            "$",
            format!("file holds a {} corpus, expected {task}", corpus.task),
        ));
    }
    Ok(corpus)
}

/// Applies a `{train, val, test}` id manifest.
pub fn apply_split_manifest(corpus: &mut Corpus, path: &Path) -> Result<()> {
    let splits: Splits = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| violation("$", e.to_string()))?;
    corpus.splits = Some(splits);
    corpus.validate()
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(corpus)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn native_round_trip() {
        let doc = json!({
            "task": "esc",
            "extra": 1,
            "dialogues": [{
                "dialogue_id": "d1",
                "problem_summary": "job loss",
                "turns": [
                    {"speaker": "user", "text": "I lost my job"},
                    {"speaker": "system", "text": "I'm sorry.", "strategies": ["Reflection of feelings"]}
                ]
            }]
        });
        let c = parse_native(&doc, Task::Esc).unwrap();
        assert_eq!(
            c.dialogues[0].turns[1].strategies,
            vec!["Reflection of feelings"]
        );
        let back: Corpus = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_dialogue_list_is_valid() {
        let c = parse_native(&json!({"task": "esc", "dialogues": []}), Task::Esc).unwrap();
        assert!(c.dialogues.is_empty());
    }

    #[test]
    fn violations_carry_paths() {
        let doc = json!({"task": "esc", "dialogues": [{"dialogue_id": "a", "turns": [{"speaker": "robot", "text": "x"}]}]});
        match parse_native(&doc, Task::Esc).unwrap_err() {
            Error::SchemaViolation { path, .. } => {
                assert_eq!(path, "$.dialogues[0].turns[0].speaker")
            }
            e => panic!("{e}"),
        }
        let dup = json!({"task": "esc", "dialogues": [
            {"dialogue_id": "a", "turns": []}, {"dialogue_id": "a", "turns": []}]});
        assert_eq!(
            parse_native(&dup, Task::Esc).unwrap_err().code(),
            "schema_violation"
        );
        let user_tag = json!({"task": "esc", "dialogues": [{"dialogue_id": "a", "turns": [
            {"speaker": "user", "text": "x", "strategies": ["Question"]}]}]});
        assert_eq!(
            parse_native(&user_tag, Task::Esc).unwrap_err().code(),
            "schema_violation"
        );
    }

    #[test]
    fn esconv_adapter() {
        let doc = json!([{
            "emotion_type": "anxiety", "problem_type": "job crisis", "situation": "lost job",
            "dialog": [
                {"speaker": "seeker", "content": "hi", "annotation": {}},
                {"speaker": "supporter", "content": "Hello, what's up?", "annotation": {"strategy": "Question"}}
            ]
        }]);
        let c = parse_esconv(&doc).unwrap();
        let d = &c.dialogues[0];
        assert_eq!(d.dialogue_id, "esconv-0000");
        assert_eq!(d.problem_summary.as_deref(), Some("lost job"));
        assert_eq!(d.turns[1].strategies, vec!["Question"]);
    }

    #[test]
    fn p4g_adapter() {
        let csv = "Unit,Turn,B4,B2,er_label_1\nHello there,0,0,d7,greeting\nHi,0,1,d7,\nWould you donate?,1,0,d7,proposition-of-donation\n";
        let c = parse_p4g_csv(csv).unwrap();
        assert_eq!(c.dialogues.len(), 1);
        let d = &c.dialogues[0];
        assert_eq!(d.turns.len(), 3);
        assert_eq!(d.turns[0].speaker, Speaker::System);
        assert_eq!(d.turns[2].strategies, vec!["proposition-of-donation"]);
    }

    #[test]
    fn splits_filter_dialogues() {
        let mut c = Corpus::new(
            Task::Esc,
            vec![
                Dialogue::from_turns("a", vec![(Speaker::User, "x")]),
                Dialogue::from_turns("b", vec![(Speaker::User, "y")]),
            ],
        )
        .unwrap();
        assert_eq!(c.split(Split::Train).len(), 2);
        c.splits = Some(Splits {
            train: vec!["a".into()],
            val: vec!["b".into()],
            test: vec![],
        });
        c.validate().unwrap();
        assert_eq!(c.split(Split::Val)[0].dialogue_id, "b");
        c.splits.as_mut().unwrap().test.push("zzz".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_is_content_sensitive() {
        let a = Corpus::new(
            Task::Esc,
            vec![Dialogue::from_turns("a", vec![(Speaker::User, "x")])],
        )
        .unwrap();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.dialogues[0].turns[0].text = "y".into();
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
