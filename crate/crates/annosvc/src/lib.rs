//! Blinded human evaluation of system answers.
//!
//! Answers from several systems are pooled into one shuffled task list with
//! system and question ids hidden. Each task receives a single judgment on
//! three criteria, and an answer is correct only when all three hold.

pub mod campaign;
pub mod error;
pub mod server;
pub mod store;

pub use campaign::{AnnotationTask, Campaign, Done, Judgment, Next, Owner, SystemAccuracy, SystemAnswer, TaskView};
pub use error::{Error, Rejection, Result};
pub use server::{router, serve, AccessLog, AppState, JudgmentBody, Report, Shared};
pub use store::{load_campaign, read_log, replay, save_campaign, JudgmentLog, Store};
