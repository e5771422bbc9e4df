//! Offline annotation: for every system turn of a corpus, run all agents
//! on the preceding history and pseudo-label the candidates against the
//! gold utterance. Output is one JSON record per line.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::run_all_agents;
use crate::coordination::{candidate_context_text, label_candidates, RankLabel, TrainExample};
use crate::dialogue::{
    AspectId, DialogueHistory, Speaker, SpeakerLabels, StateSummary, Task, TopicCandidate,
};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::profile::TaskProfile;

use super::schema::Dialogue;
use super::strategy::StrategyMap;

/// Dialogues processed concurrently before their records are flushed.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTurn {
    pub dialogue_id: String,
    /// 1-based index of the system turn within its dialogue.
    pub round: usize,
    /// Position of the gold system utterance in the dialogue.
    pub turn_index: usize,
    pub summaries: Vec<StateSummary>,
    pub candidates: Vec<TopicCandidate>,
    /// One per candidate, in candidate order.
    pub labels: Vec<RankLabel>,
    /// Embedding similarity of each candidate to the gold utterance.
    pub similarities: Vec<f64>,
    pub gt_utterance: String,
    pub gt_strategies: Vec<String>,
    pub gt_aspects: BTreeSet<AspectId>,
}

impl AnnotatedTurn {
    pub fn key(&self) -> (String, usize) {
        (self.dialogue_id.clone(), self.turn_index)
    }

    pub fn validate(&self, n_aspects: usize) -> Result<()> {
        if self.labels.len() != self.candidates.len() {
            return Err(Error::invalid("labels must cover every candidate"));
        }
        let mut pos: Vec<usize> = self.labels.iter().map(|l| l.position).collect();
        pos.sort_unstable();
        if pos != (1..=self.candidates.len()).collect::<Vec<_>>() {
            return Err(Error::invalid("labels are not a permutation"));
        }
        if self.gt_aspects.iter().any(|&a| a == 0 || a > n_aspects) {
            return Err(Error::invalid("gt_aspects outside the configured aspects"));
        }
        Ok(())
    }

    /// Whether each candidate promotes a gold aspect.
    pub fn relevant(&self) -> Vec<bool> {
        self.candidates
            .iter()
            .map(|c| self.gt_aspects.contains(&c.aspect_id))
            .collect()
    }

    /// The history the agents saw for this turn.
    pub fn prefix(&self, dialogue: &Dialogue, task: Task) -> Result<DialogueHistory> {
        Ok(dialogue.history(task)?.prefix(self.turn_index))
    }

    /// Builds a training example; candidate-context texts are embedded
    /// through the gateway (its providers are deterministic, so the
    /// example is too).
    pub fn to_train_example(
        &self,
        history: &DialogueHistory,
        labels: &SpeakerLabels,
        gateway: &Gateway,
    ) -> Result<TrainExample> {
        let n_d = gateway.dim();
        let mut states = Array2::zeros((self.summaries.len(), n_d));
        for (i, s) in self.summaries.iter().enumerate() {
            let e = s
                .embedding
                .as_ref()
                .ok_or_else(|| Error::invalid("annotated summary lacks an embedding"))?;
            if e.len() != n_d {
                return Err(Error::DimensionMismatch {
                    expected: n_d,
                    got: e.len(),
                });
            }
            states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(e.as_slice()));
        }
        let mut candidates = Array2::zeros((self.candidates.len(), n_d));
        for (i, c) in self.candidates.iter().enumerate() {
            let e = gateway.embed_text(&candidate_context_text(history, labels, c)?)?;
            candidates
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(e.as_slice()));
        }
        Ok(TrainExample {
            candidates,
            states,
            labels: self.labels.iter().map(|l| l.position).collect(),
            relevant: self.relevant(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnFailure {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationReport {
    pub written: usize,
    pub skipped_existing: usize,
    /// System turns with nothing before them (no history to analyse).
    pub skipped_no_history: usize,
    pub failures: Vec<TurnFailure>,
}

/// Annotates one system turn at position `pos` of `history`.
pub fn annotate_turn(
    dialogue_id: &str,
    round: usize,
    pos: usize,
    history: &DialogueHistory,
    profile: &TaskProfile,
    map: &StrategyMap,
    gateway: &Gateway,
) -> Result<AnnotatedTurn> {
    let gold = &history.utterances()[pos];
    if gold.speaker != Speaker::System {
        return Err(Error::invalid("annotation target must be a system turn"));
    }
    let prefix = history.prefix(pos);
    let outputs = run_all_agents(&profile.aspects, &prefix, gateway)?;
    let gt_aspects: BTreeSet<AspectId> = map
        .aspects_for(&gold.strategies)
        .into_iter()
        .filter(|&a| a <= profile.n_aspects())
        .collect();
    let mut summaries = Vec::with_capacity(outputs.len());
    let mut candidates = Vec::new();
    for o in outputs {
        summaries.push(o.summary);
        candidates.extend(o.candidates);
    }
    let (items, labels) = label_candidates(&candidates, &gold.text, &gt_aspects, gateway)?;
    Ok(AnnotatedTurn {
        dialogue_id: dialogue_id.to_string(),
        round,
        turn_index: pos,
        summaries,
        candidates,
        labels,
        similarities: items.iter().map(|i| i.similarity).collect(),
        gt_utterance: gold.text.clone(),
        gt_strategies: gold.strategies.clone(),
        gt_aspects,
    })
}

enum Outcome {
    Done(Box<AnnotatedTurn>),
    Existing,
    NoHistory,
    Failed(TurnFailure),
}

fn annotate_dialogue(
    d: &Dialogue,
    profile: &TaskProfile,
    map: &StrategyMap,
    gateway: &Gateway,
    done: &HashSet<(String, usize)>,
) -> Vec<Outcome> {
    let history = match d.history(profile.task) {
        Ok(h) => h,
        Err(e) => {
            return vec![Outcome::Failed(TurnFailure {
                dialogue_id: d.dialogue_id.clone(),
                turn_index: 0,
                code: e.code().into(),
                message: e.to_string(),
            })]
        }
    };
    let mut out = Vec::new();
    let mut round = 0;
    for (pos, u) in history.utterances().iter().enumerate() {
        if u.speaker != Speaker::System {
            continue;
        }
        round += 1;
        if pos == 0 {
            out.push(Outcome::NoHistory);
            continue;
        }
        if done.contains(&(d.dialogue_id.clone(), pos)) {
            out.push(Outcome::Existing);
            continue;
        }
        out.push(
            match annotate_turn(&d.dialogue_id, round, pos, &history, profile, map, gateway) {
                Ok(t) => Outcome::Done(Box::new(t)),
                Err(e) => {
                    tracing::warn!(dialogue = %d.dialogue_id, pos, error = %e, "annotation failed");
                    Outcome::Failed(TurnFailure {
                        dialogue_id: d.dialogue_id.clone(),
                        turn_index: pos,
                        code: e.code().into(),
                        message: e.to_string(),
                    })
                }
            },
        );
    }
    out
}

/// Reads an annotation file. A torn final line (from an interrupted run)
/// is ignored; any other malformed line is an error.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotatedTurn>> {
    Ok(read_valid_prefix(path)?.0)
}

fn read_valid_prefix(path: &Path) -> Result<(Vec<AnnotatedTurn>, u64)> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut turns = Vec::new();
    let mut valid_len = 0u64;
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if !line.ends_with('\n') {
            break;
        }
        if !line.trim().is_empty() {
            let t = serde_json::from_str::<AnnotatedTurn>(line.trim_end()).map_err(|e| {
                Error::SchemaViolation {
                    path: format!("{}:{lineno}", path.display()),
                    message: e.to_string(),
                }
            })?;
            turns.push(t);
        }
        valid_len += n as u64;
    }
    Ok((turns, valid_len))
}

/// Annotates `dialogues` into the NDJSON file at `out`. With `resume`,
/// turns already present in the file are skipped; otherwise the file is
/// rewritten. Records are written in dialogue order, so the file is
/// identical across runs with deterministic providers.
pub fn annotate_corpus(
    dialogues: &[&Dialogue],
    profile: &TaskProfile,
    map: &StrategyMap,
    gateway: &Gateway,
    out: &Path,
    resume: bool,
) -> Result<AnnotationReport> {
    profile.validate()?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut done = HashSet::new();
    let mut file = if resume && out.exists() {
        let (existing, valid_len) = read_valid_prefix(out)?;
        done.extend(existing.iter().map(AnnotatedTurn::key));
        let f = OpenOptions::new().write(true).open(out)?;
        f.set_len(valid_len)?;
        let mut f = OpenOptions::new().append(true).open(out)?;
        f.flush()?;
        f
    } else {
        File::create(out)?
    };
    let mut report = AnnotationReport::default();
    for chunk in dialogues.chunks(CHUNK) {
        let results: Vec<Vec<Outcome>> = chunk
            .par_iter()
            .map(|d| annotate_dialogue(d, profile, map, gateway, &done))
            .collect();
        let mut buf = Vec::new();
        for outcome in results.into_iter().flatten() {
            match outcome {
                Outcome::Done(t) => {
                    serde_json::to_writer(&mut buf, &t)?;
                    buf.push(b'\n');
                    done.insert(t.key());
                    report.written += 1;
                }
                Outcome::Existing => report.skipped_existing += 1,
                Outcome::NoHistory => report.skipped_no_history += 1,
                Outcome::Failed(f) => report.failures.push(f),
            }
        }
        file.write_all(&buf)?;
        file.flush()?;
    }
    tracing::info!(
        written = report.written,
        skipped = report.skipped_existing,
        failed = report.failures.len(),
        "annotation finished"
    );
    Ok(report)
}
