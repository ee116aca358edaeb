//! The bi-level questionnaire: per-session state machine, study finalization, persistence
//! and the HTTP front end.
//!
//! Each round asks a form-only comparison and a purchase choice over the same two
//! designs. Odd rounds ask the form question first and even rounds ask the purchase
//! question first. After the learning rounds a fixed validation block is served.

mod engine;
mod finalize;
pub mod http;
mod service;
mod store;

pub use engine::{
    Answer, Engine, FormAnswer, Order, PopulationSnapshot, PurchaseRecord, Question, QuestionKind,
    SessionState, SessionStatus, Side, SubmitSummary, ValidationBlock,
};
pub use finalize::{finalize, FinalModels, FinalReport, RespondentData, RespondentResult};
pub use service::{design_id, load_study, Clock, DesignRegistry, FixedClock, Service, Study, SystemClock};
pub use store::{Event, EventLog};
