use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use serde_json::Value;

use super::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub id: u64,
    pub kind: String,
    pub session: String,
    pub status: JobStatus,
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

#[derive(Default)]
pub struct Jobs {
    next: AtomicU64,
    map: Mutex<HashMap<u64, JobView>>,
}

/// Handle given to running work for progress reports.
#[derive(Clone)]
pub struct JobHandle {
    id: u64,
    jobs: Arc<Jobs>,
}

impl JobHandle {
    pub fn progress(&self, fraction: f64) {
        self.jobs.update(self.id, |j| j.progress = fraction.clamp(0.0, 1.0));
    }
}

impl Jobs {
    pub fn get(&self, id: u64) -> Option<JobView> {
        self.map.lock().unwrap().get(&id).cloned()
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut JobView)) {
        if let Some(j) = self.map.lock().unwrap().get_mut(&id) {
            f(j);
        }
    }

    /// Registers a pending job and runs `work` on the blocking pool.
    pub fn spawn<F>(self: &Arc<Self>, kind: &str, session: &str, work: F) -> u64
    where
        F: FnOnce(&JobHandle) -> Result<Value, ApiError> + Send + 'static,
    {
        let id = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        self.map.lock().unwrap().insert(
            id,
            JobView {
                id,
                kind: kind.to_string(),
                session: session.to_string(),
                status: JobStatus::Pending,
                progress: 0.0,
                result: None,
                error: None,
            },
        );
        let handle = JobHandle { id, jobs: Arc::clone(self) };
        tokio::task::spawn_blocking(move || {
            handle.jobs.update(id, |j| j.status = JobStatus::Running);
            let outcome = work(&handle);
            handle.jobs.update(id, |j| match outcome {
                Ok(v) => {
                    j.status = JobStatus::Done;
                    j.progress = 1.0;
                    j.result = Some(v);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            });
        });
        id
    }
}
