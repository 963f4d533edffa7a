//! Impostor-host evaluation: four images from one cluster and one from
//! another; annotators pick the odd one out, and per-cluster accuracy
//! measures coherence.

mod io;
mod score;
mod tasks;

pub use io::{append_response, read_responses, read_tasks, write_responses, write_tasks};
pub use score::{
    qualify_annotators, qualify_log, score, simulate_random_annotator, summarize, AnnotatorSession, ClusterAccuracy, EvalReport,
    LogQualification, Response,
};
pub use tasks::{
    build_session, control_tasks, generate_tasks, ImpostorTask, TaskSet, CONTROL_ID_BASE, HOSTS, MAX_CONTROL_MISSES,
    POSITIONS, SESSION_CONTROLS, SESSION_TASKS, TASKS_PER_CLUSTER,
};
