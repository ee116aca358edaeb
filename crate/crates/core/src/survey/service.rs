use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::StudyConfig;
use crate::error::{Error, Result};
use crate::geometry::{DesignVector, NormalizationStats};
use crate::sampler::AuditRecord;

use super::engine::{
    Answer, Engine, PopulationSnapshot, Question, QuestionKind, SessionState, SessionStatus, SubmitSummary,
    ValidationBlock,
};
use super::finalize::{finalize, FinalModels, FinalReport, RespondentData};
use super::store::{Event, EventLog};

/// Source of timestamps, in seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
    }
}

/// A clock that only moves when told to.
pub struct FixedClock(Mutex<f64>);

impl FixedClock {
    pub fn new(t: f64) -> Self {
        FixedClock(Mutex::new(t))
    }

    pub fn set(&self, t: f64) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = t;
    }

    pub fn advance(&self, dt: f64) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) += dt;
    }
}

impl Clock for FixedClock {
    fn now(&self) -> f64 {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Content hash of a design, used as its public id.
pub fn design_id(d: &DesignVector) -> String {
    let mut h = Sha256::new();
    for v in d.as_slice() {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Default)]
pub struct DesignRegistry(RwLock<HashMap<String, DesignVector>>);

impl DesignRegistry {
    pub fn register(&self, d: &DesignVector) -> String {
        let id = design_id(d);
        self.0.write().unwrap_or_else(|e| e.into_inner()).entry(id.clone()).or_insert(*d);
        id
    }

    pub fn get(&self, id: &str) -> Option<DesignVector> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).get(id).copied()
    }
}

enum AuditSink {
    File(File),
    Memory(Vec<AuditRecord>),
}

/// One study: its frozen configuration and validation block, its sessions and log.
///
/// Lock order is gate, then session, then log. Question generation and learning hold
/// the gate shared; finishing a session holds it exclusively while the population
/// snapshot is swapped, so every question in the log was generated against the
/// snapshot that precedes it.
pub struct Study {
    pub id: String,
    pub config: StudyConfig,
    pub validation: ValidationBlock,
    norm: Arc<NormalizationStats>,
    clock: Arc<dyn Clock>,
    designs: Arc<DesignRegistry>,
    gate: RwLock<()>,
    snapshot: RwLock<Arc<PopulationSnapshot>>,
    sessions: RwLock<Vec<(String, Arc<Mutex<SessionState>>)>>,
    log: Mutex<EventLog>,
    audit: Mutex<AuditSink>,
}

impl Study {
    #[allow(clippy::too_many_arguments)]
    fn new(
        id: String,
        config: StudyConfig,
        validation: ValidationBlock,
        log: EventLog,
        audit_path: Option<PathBuf>,
        norm: Arc<NormalizationStats>,
        clock: Arc<dyn Clock>,
        designs: Arc<DesignRegistry>,
    ) -> Result<Self> {
        let audit = match audit_path {
            Some(p) => AuditSink::File(OpenOptions::new().create(true).append(true).open(p)?),
            None => AuditSink::Memory(Vec::new()),
        };
        Ok(Study {
            id,
            snapshot: RwLock::new(Arc::new(PopulationSnapshot::empty(config.gamma))),
            config,
            validation,
            norm,
            clock,
            designs,
            gate: RwLock::new(()),
            sessions: RwLock::new(Vec::new()),
            log: Mutex::new(log),
            audit: Mutex::new(audit),
        })
    }

    fn engine(&self) -> Engine<'_> {
        Engine::new(&self.config, &self.norm, &self.validation)
    }

    pub fn snapshot(&self) -> Arc<PopulationSnapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn append(&self, e: &Event) -> Result<()> {
        lock(&self.log).append(e)
    }

    /// Lines of an in-memory log.
    pub fn log_lines(&self) -> Vec<String> {
        lock(&self.log).lines().to_vec()
    }

    /// Audit records of an in-memory study.
    pub fn audit_records(&self) -> Vec<AuditRecord> {
        match &*lock(&self.audit) {
            AuditSink::Memory(v) => v.clone(),
            AuditSink::File(_) => Vec::new(),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .find(|(sid, _)| sid == id)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::NotFound {
                kind: "session",
                id: id.to_string(),
            })
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn session_state(&self, id: &str) -> Result<SessionState> {
        let slot = self.session(id)?;
        let s = lock(&slot).clone();
        Ok(s)
    }

    /// Assigns the next respondent index and persists the new session.
    pub fn create_session(&self) -> Result<SessionState> {
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let respondent = sessions.len() + 1;
        let id = format!("{}-r{respondent:04}", self.id);
        let now = self.clock.now();
        self.append(&Event::SessionCreated {
            session: id.clone(),
            respondent,
            at: now,
        })?;
        let s = SessionState::new(id.clone(), respondent, &self.config, now);
        sessions.push((id, Arc::new(Mutex::new(s.clone()))));
        Ok(s)
    }

    /// The pending question of a session, generating and persisting it if needed.
    pub fn next_question(&self, session: &str) -> Result<Question> {
        let slot = self.session(session)?;
        let _gate = self.gate.read().unwrap_or_else(|e| e.into_inner());
        let mut s = lock(&slot);
        if let Some(q) = &s.pending {
            return Ok(q.clone());
        }
        let pop = self.snapshot();
        let mut next = s.clone();
        let q = self.engine().next_question(&mut next, &pop)?;
        self.append(&Event::QuestionIssued {
            session: s.id.clone(),
            question: q.clone(),
            snapshot_version: pop.version,
            at: self.clock.now(),
        })?;
        for d in &q.designs {
            self.designs.register(d);
        }
        if q.kind == QuestionKind::Purchase {
            if let Some(a) = next.last_audit.as_ref().filter(|a| a.round == q.round) {
                self.write_audit(a)?;
            }
        }
        *s = next;
        Ok(q)
    }

    fn write_audit(&self, a: &AuditRecord) -> Result<()> {
        match &mut *lock(&self.audit) {
            AuditSink::File(f) => {
                serde_json::to_writer(&mut *f, a)?;
                f.write_all(b"\n")?;
                f.flush()?;
            }
            AuditSink::Memory(v) => v.push(a.clone()),
        }
        Ok(())
    }

    /// Persists the answer, then learns from it.
    pub fn submit_answer(&self, session: &str, answer: Answer) -> Result<SubmitSummary> {
        let slot = self.session(session)?;
        let summary = {
            let _gate = self.gate.read().unwrap_or_else(|e| e.into_inner());
            let mut s = lock(&slot);
            let engine = self.engine();
            let q = engine.check_answer(&s, &answer)?;
            let now = self.clock.now();
            self.append(&Event::AnswerRecorded {
                session: s.id.clone(),
                seq: q.seq,
                answer,
                at: now,
            })?;
            let round = s.round;
            let status = s.status;
            let summary = engine.submit(&mut s, &self.snapshot(), answer, now)?;
            if s.round != round || (status == SessionStatus::Active && s.status != status) {
                self.append(&Event::ModelSnapshot {
                    session: s.id.clone(),
                    round,
                    form_model: s.form_model.clone(),
                    w: s.online.w.clone(),
                })?;
            }
            summary
        };
        if summary.status == SessionStatus::Finished {
            let _gate = self.gate.write().unwrap_or_else(|e| e.into_inner());
            let s = lock(&slot);
            let mut snap = self.snapshot.write().unwrap_or_else(|e| e.into_inner());
            let next = Arc::new(snap.with_finished(&s));
            self.append(&Event::SessionFinished {
                session: s.id.clone(),
                snapshot_version: next.version,
                at: self.clock.now(),
            })?;
            *snap = next;
        }
        Ok(summary)
    }

    /// Finished sessions in respondent order, refusing while any non-idle session is unfinished.
    pub fn finished_sessions(&self) -> Result<Vec<SessionState>> {
        let now = self.clock.now();
        let idle = self.config.idle_timeout_hours * 3600.0;
        let mut done = Vec::new();
        let mut open = Vec::new();
        for (id, slot) in self.sessions.read().unwrap_or_else(|e| e.into_inner()).iter() {
            let s = lock(slot);
            if s.status == SessionStatus::Finished {
                done.push(s.clone());
            } else if now - s.last_activity > idle {
                log::info!("excluding idle session {id}");
            } else {
                open.push(id.clone());
            }
        }
        if !open.is_empty() {
            return Err(Error::state(format!("unfinished sessions: {}", open.join(", "))));
        }
        Ok(done)
    }

    pub fn finalize(&self) -> Result<(FinalModels, FinalReport)> {
        let sessions = self.finished_sessions()?;
        let data = sessions
            .iter()
            .map(|s| RespondentData::from_session(s, &self.config, &self.norm))
            .collect::<Result<Vec<_>>>()?;
        finalize(&data, &self.config)
    }

    /// Rebuilds a study from its log. The recorded questions are reinstalled rather than
    /// regenerated, the answers are learned again, and every recorded model snapshot must
    /// match the recomputed one exactly.
    fn replay(
        events: Vec<Event>,
        log: EventLog,
        audit_path: Option<PathBuf>,
        norm: Arc<NormalizationStats>,
        clock: Arc<dyn Clock>,
        designs: Arc<DesignRegistry>,
    ) -> Result<Study> {
        let mut it = events.into_iter();
        let Some(Event::StudyCreated {
            study,
            config,
            validation,
            ..
        }) = it.next()
        else {
            return Err(Error::state("event log does not start with study_created"));
        };
        config.validate()?;
        let st = Study::new(study, config, validation, log, audit_path, norm, clock, designs)?;
        {
            let engine = st.engine();
            let mut sessions = st.sessions.write().unwrap_or_else(|e| e.into_inner());
            let mut snap = st.snapshot();
            let find = |sessions: &Vec<(String, Arc<Mutex<SessionState>>)>, id: &str| {
                sessions.iter().find(|(s, _)| s == id).map(|(_, s)| s.clone()).ok_or_else(|| Error::NotFound {
                    kind: "session",
                    id: id.to_string(),
                })
            };
            let diverged = |what: &str, id: &str| Error::state(format!("replay diverged at {what} of session {id}"));
            for e in it {
                match e {
                    Event::StudyCreated { .. } => return Err(Error::state("duplicate study_created event")),
                    Event::SessionCreated { session, respondent, at } => {
                        if respondent != sessions.len() + 1 {
                            return Err(diverged("creation", &session));
                        }
                        let s = SessionState::new(session.clone(), respondent, &st.config, at);
                        sessions.push((session, Arc::new(Mutex::new(s))));
                    }
                    Event::QuestionIssued {
                        session,
                        question,
                        snapshot_version,
                        ..
                    } => {
                        if snapshot_version != snap.version {
                            return Err(diverged("question snapshot", &session));
                        }
                        for d in &question.designs {
                            st.designs.register(d);
                        }
                        let slot = find(&sessions, &session)?;
                        engine.install_question(&mut lock(&slot), question)?;
                    }
                    Event::AnswerRecorded { session, seq, answer, at } => {
                        let slot = find(&sessions, &session)?;
                        let mut s = lock(&slot);
                        if s.pending.as_ref().map(|q| q.seq) != Some(seq) {
                            return Err(diverged("answer", &session));
                        }
                        engine.submit(&mut s, &snap, answer, at)?;
                    }
                    Event::ModelSnapshot {
                        session, form_model, w, ..
                    } => {
                        let slot = find(&sessions, &session)?;
                        let s = lock(&slot);
                        if s.form_model != form_model || s.online.w != w {
                            return Err(diverged("model snapshot", &session));
                        }
                    }
                    Event::SessionFinished {
                        session, snapshot_version, ..
                    } => {
                        let slot = find(&sessions, &session)?;
                        let s = lock(&slot);
                        if s.status != SessionStatus::Finished || snapshot_version != snap.version + 1 {
                            return Err(diverged("finish", &session));
                        }
                        snap = Arc::new(snap.with_finished(&s));
                    }
                }
            }
            *st.snapshot.write().unwrap_or_else(|e| e.into_inner()) = snap;
        }
        Ok(st)
    }
}

/// All studies of one process, optionally persisted under a store directory.
pub struct Service {
    store: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    norm: Arc<NormalizationStats>,
    designs: Arc<DesignRegistry>,
    studies: RwLock<BTreeMap<String, Arc<Study>>>,
    seed: Option<u64>,
    latency_budget_ms: Option<u64>,
}

impl Service {
    /// An in-memory service.
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Service {
            store: None,
            clock,
            norm: Arc::new(NormalizationStats::builtin().clone()),
            designs: Arc::new(DesignRegistry::default()),
            studies: RwLock::new(BTreeMap::new()),
            seed: None,
            latency_budget_ms: None,
        }
    }

    /// A service persisted under `store`, replaying any study logs already there.
    pub fn open(store: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        std::fs::create_dir_all(store)?;
        let mut svc = Service::new(clock);
        svc.store = Some(store.to_path_buf());
        let mut logs: Vec<PathBuf> = std::fs::read_dir(store)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "jsonl")
                    && !p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".audit.jsonl"))
            })
            .collect();
        logs.sort();
        for p in logs {
            let events = EventLog::read(&p)?;
            let st = Study::replay(
                events,
                EventLog::open(&p)?,
                Some(p.with_extension("audit.jsonl")),
                svc.norm.clone(),
                svc.clock.clone(),
                svc.designs.clone(),
            )?;
            log::info!("replayed study {} with {} sessions", st.id, st.session_ids().len());
            svc.studies.get_mut().unwrap_or_else(|e| e.into_inner()).insert(st.id.clone(), Arc::new(st));
        }
        Ok(svc)
    }

    /// Seed applied to every study created from now on.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_latency_budget(mut self, ms: Option<u64>) -> Self {
        self.latency_budget_ms = ms;
        self
    }

    pub fn norm(&self) -> &NormalizationStats {
        &self.norm
    }

    pub fn design(&self, id: &str) -> Result<DesignVector> {
        self.designs.get(id).ok_or_else(|| Error::NotFound {
            kind: "design",
            id: id.to_string(),
        })
    }

    pub fn register_design(&self, d: &DesignVector) -> String {
        self.designs.register(d)
    }

    pub fn study(&self, id: &str) -> Result<Arc<Study>> {
        self.studies.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned().ok_or_else(|| Error::NotFound {
            kind: "study",
            id: id.to_string(),
        })
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.studies.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    /// The study owning a session id of the form `<study>-rNNNN`.
    pub fn study_of_session(&self, session: &str) -> Result<Arc<Study>> {
        let not_found = || Error::NotFound {
            kind: "session",
            id: session.to_string(),
        };
        let (study, _) = session.rsplit_once("-r").ok_or_else(not_found)?;
        self.study(study).map_err(|_| not_found())
    }

    pub fn create_study_json(&self, config: &str) -> Result<Arc<Study>> {
        let cfg: StudyConfig = crate::config::from_json_with_path(config)?;
        self.create_study(cfg)
    }

    pub fn create_study(&self, mut cfg: StudyConfig) -> Result<Arc<Study>> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.latency_budget_ms.is_some() {
            cfg.latency_budget_ms = self.latency_budget_ms;
        }
        cfg.validate()?;
        let body = serde_json::to_vec(&cfg)?;
        let digest = Sha256::digest(&body);
        let base: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
        let mut studies = self.studies.write().unwrap_or_else(|e| e.into_inner());
        let mut id = format!("st{base}");
        let mut k = 1;
        while studies.contains_key(&id) {
            k += 1;
            id = format!("st{base}n{k}");
        }
        let validation = ValidationBlock::generate(&cfg);
        let (log, audit) = match &self.store {
            Some(dir) => (EventLog::open(&dir.join(format!("{id}.jsonl")))?, Some(dir.join(format!("{id}.audit.jsonl")))),
            None => (EventLog::memory(), None),
        };
        let st = Study::new(
            id.clone(),
            cfg,
            validation,
            log,
            audit,
            self.norm.clone(),
            self.clock.clone(),
            self.designs.clone(),
        )?;
        st.append(&Event::StudyCreated {
            study: id.clone(),
            config: st.config.clone(),
            validation: st.validation.clone(),
            at: self.clock.now(),
        })?;
        let st = Arc::new(st);
        studies.insert(id, st.clone());
        Ok(st)
    }
}

/// Rebuilds a single study from a log file without opening it for writing.
pub fn load_study(path: &Path, clock: Arc<dyn Clock>) -> Result<Study> {
    let events = EventLog::read(path)?;
    Study::replay(
        events,
        EventLog::memory(),
        None,
        Arc::new(NormalizationStats::builtin().clone()),
        clock,
        Arc::new(DesignRegistry::default()),
    )
}
