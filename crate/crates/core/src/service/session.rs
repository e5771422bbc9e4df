//! Session registry backed by an append-only event log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueHistory, Speaker, Task, Utterance};
use crate::error::{Error, Result};
use crate::pipeline::{TurnPipeline, TurnTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub task: Task,
    pub history: DialogueHistory,
    pub traces: Vec<TurnTrace>,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub task: Task,
    pub turns: usize,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created {
        session_id: String,
        task: Task,
        created_at: u64,
    },
    User {
        session_id: String,
        utterance: Utterance,
    },
    Turn {
        session_id: String,
        trace: TurnTrace,
    },
}

pub struct SessionManager {
    pipelines: BTreeMap<Task, Arc<TurnPipeline>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    busy: Mutex<HashSet<String>>,
    log: Option<Mutex<File>>,
}

/// Clears the in-flight mark when a turn finishes, however it finishes.
struct BusyGuard<'a> {
    set: &'a Mutex<HashSet<String>>,
    id: String,
}

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.set.lock().expect("busy set").remove(&self.id);
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl SessionManager {
    /// In-memory manager without persistence.
    pub fn new(pipelines: BTreeMap<Task, Arc<TurnPipeline>>) -> Self {
        Self {
            pipelines,
            sessions: RwLock::new(HashMap::new()),
            busy: Mutex::new(HashSet::new()),
            log: None,
        }
    }

    /// Opens (or creates) the event log and rebuilds every session in it.
    pub fn with_log(pipelines: BTreeMap<Task, Arc<TurnPipeline>>, path: &Path) -> Result<Self> {
        let mut mgr = Self::new(pipelines);
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = match serde_json::from_str(&line) {
                    Ok(e) => e,
                    Err(e) => {
                        tracing::warn!(line = i + 1, error = %e, "skipping unreadable event");
                        continue;
                    }
                };
                mgr.replay(event)?;
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        mgr.log = Some(Mutex::new(
            OpenOptions::new().create(true).append(true).open(path)?,
        ));
        Ok(mgr)
    }

    fn replay(&mut self, event: Event) -> Result<()> {
        let sessions = self.sessions.get_mut().expect("sessions lock");
        match event {
            Event::Created {
                session_id,
                task,
                created_at,
            } => {
                sessions.insert(
                    session_id.clone(),
                    Arc::new(Mutex::new(Session {
                        session_id,
                        task,
                        history: DialogueHistory::new(task),
                        traces: Vec::new(),
                        created_at,
                    })),
                );
            }
            Event::User {
                session_id,
                utterance,
            } => {
                if let Some(s) = sessions.get(&session_id) {
                    s.lock()
                        .expect("session")
                        .history
                        .push_utterance(utterance)?;
                }
            }
            Event::Turn { session_id, trace } => {
                if let Some(s) = sessions.get(&session_id) {
                    let mut s = s.lock().expect("session");
                    s.history.push_utterance(trace.utterance.clone())?;
                    s.traces.push(trace);
                }
            }
        }
        Ok(())
    }

    fn append(&self, event: &Event) -> Result<()> {
        if let Some(log) = &self.log {
            let mut line = serde_json::to_vec(event)?;
            line.push(b'\n');
            let mut f = log.lock().expect("event log");
            f.write_all(&line)?;
            f.flush()?;
        }
        Ok(())
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.pipelines.keys().copied().collect()
    }

    pub fn create_session(&self, task: Task) -> Result<String> {
        if !self.pipelines.contains_key(&task) {
            return Err(Error::ModelNotLoaded);
        }
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let created_at = now_secs();
        self.append(&Event::Created {
            session_id: session_id.clone(),
            task,
            created_at,
        })?;
        self.sessions.write().expect("sessions lock").insert(
            session_id.clone(),
            Arc::new(Mutex::new(Session {
                session_id: session_id.clone(),
                task,
                history: DialogueHistory::new(task),
                traces: Vec::new(),
                created_at,
            })),
        );
        Ok(session_id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn get_session(&self, id: &str) -> Result<Session> {
        Ok(self.session(id)?.lock().expect("session").clone())
    }

    pub fn list_sessions(&self) -> Vec<SessionSummary> {
        let mut out: Vec<SessionSummary> = self
            .sessions
            .read()
            .expect("sessions lock")
            .values()
            .map(|s| {
                let s = s.lock().expect("session");
                SessionSummary {
                    session_id: s.session_id.clone(),
                    task: s.task,
                    turns: s.history.len(),
                    created_at: s.created_at,
                }
            })
            .collect();
        out.sort_by(|a, b| (a.created_at, &a.session_id).cmp(&(b.created_at, &b.session_id)));
        out
    }

    /// Records the user turn, runs the pipeline and records the system
    /// turn. On a pipeline error the user turn stays recorded; posting
    /// again retries. A second post while a turn runs is rejected.
    pub fn post_user_message(&self, id: &str, text: &str) -> Result<TurnTrace> {
        if text.trim().is_empty() {
            return Err(Error::invalid("message text is empty"));
        }
        let handle = self.session(id)?;
        if !self.busy.lock().expect("busy set").insert(id.to_string()) {
            return Err(Error::TurnInProgress);
        }
        let _guard = BusyGuard {
            set: &self.busy,
            id: id.to_string(),
        };
        let (task, history) = {
            let mut s = handle.lock().expect("session");
            let idx = s.history.last().map_or(0, |u| u.turn_index + 1);
            let utterance = Utterance::new(Speaker::User, text.trim(), idx)?;
            self.append(&Event::User {
                session_id: id.to_string(),
                utterance: utterance.clone(),
            })?;
            s.history.push_utterance(utterance)?;
            (s.task, s.history.clone())
        };
        let pipeline = self.pipelines.get(&task).ok_or(Error::ModelNotLoaded)?;
        let trace = pipeline.run_turn(&history)?;
        let mut s = handle.lock().expect("session");
        self.append(&Event::Turn {
            session_id: id.to_string(),
            trace: trace.clone(),
        })?;
        s.history.push_utterance(trace.utterance.clone())?;
        s.traces.push(trace.clone());
        Ok(trace)
    }

    /// All traces, or the one for `round` (1-based).
    pub fn get_trace(&self, id: &str, round: Option<usize>) -> Result<Vec<TurnTrace>> {
        let s = self.get_session(id)?;
        match round {
            None => Ok(s.traces),
            Some(r) => s
                .traces
                .into_iter()
                .find(|t| t.round == r)
                .map(|t| vec![t])
                .ok_or(Error::UnknownRound(r)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::mock_pipeline;

    fn manager() -> SessionManager {
        SessionManager::new(BTreeMap::from([(
            Task::Esc,
            Arc::new(mock_pipeline(Task::Esc, 8).unwrap()),
        )]))
    }

    #[test]
    fn lifecycle() {
        let m = manager();
        let a = m.create_session(Task::Esc).unwrap();
        let b = m.create_session(Task::Esc).unwrap();
        assert_ne!(a, b);
        assert!(m.get_session(&a).unwrap().history.is_empty());
        assert_eq!(
            m.create_session(Task::Persuasion).unwrap_err().code(),
            "model_not_loaded"
        );
        let t = m.post_user_message(&a, "I feel lonely lately.").unwrap();
        assert_eq!(t.round, 1);
        m.post_user_message(&a, "My friends moved away.").unwrap();
        assert_eq!(m.get_trace(&a, None).unwrap().len(), 2);
        assert_eq!(m.get_trace(&a, Some(1)).unwrap()[0].round, 1);
        assert_eq!(
            m.get_trace(&a, Some(9)).unwrap_err().code(),
            "unknown_round"
        );
        assert_eq!(
            m.get_trace("nope", None).unwrap_err().code(),
            "unknown_session"
        );
        assert_eq!(
            m.post_user_message(&a, "  ").unwrap_err().code(),
            "invalid_input"
        );
        assert_eq!(m.get_session(&a).unwrap().history.len(), 4);
        assert_eq!(m.list_sessions().len(), 2);
    }

    #[test]
    fn one_turn_in_flight() {
        let m = manager();
        let a = m.create_session(Task::Esc).unwrap();
        m.busy.lock().unwrap().insert(a.clone());
        assert_eq!(
            m.post_user_message(&a, "hi").unwrap_err().code(),
            "turn_in_progress"
        );
    }

    #[test]
    fn log_rebuilds_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        let pipelines =
            || BTreeMap::from([(Task::Esc, Arc::new(mock_pipeline(Task::Esc, 8).unwrap()))]);
        let m = SessionManager::with_log(pipelines(), &path).unwrap();
        let a = m.create_session(Task::Esc).unwrap();
        m.post_user_message(&a, "I can't focus at work.").unwrap();
        let before = m.get_session(&a).unwrap();
        drop(m);
        let m2 = SessionManager::with_log(pipelines(), &path).unwrap();
        assert_eq!(m2.get_session(&a).unwrap(), before);
        m2.post_user_message(&a, "It's been weeks.").unwrap();
        assert_eq!(m2.get_trace(&a, None).unwrap().len(), 2);
    }
}
