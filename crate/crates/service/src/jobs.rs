//! In-process job queue for long-running generation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Generate,
    MultiverseCommunity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Done | JobState::Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub design_id: String,
    pub state: JobState,
    pub progress: Progress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JobFailure>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub code: String,
    pub message: String,
}

/// Reports `(done, total)` from inside a running job.
pub type ProgressFn<'a> = &'a (dyn Fn(usize, usize) + Sync);

pub struct JobQueue {
    jobs: Mutex<HashMap<String, Job>>,
    permits: Arc<Semaphore>,
}

impl JobQueue {
    pub fn new(max_concurrent: usize) -> Self {
        Self { jobs: Mutex::new(HashMap::new()), permits: Arc::new(Semaphore::new(max_concurrent.max(1))) }
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.lock().get(id).cloned()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Job>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.lock().get_mut(id) {
            f(job);
        }
    }

    fn transition(&self, id: &str, next: JobState, f: impl FnOnce(&mut Job)) {
        self.update(id, |job| {
            if job.state.can_become(next) {
                job.state = next;
                f(job);
            }
        });
    }

    /// Queues `work` and returns the job as first recorded. `work` runs on the
    /// blocking pool once a permit is free and returns the result id.
    pub fn submit<W>(self: &Arc<Self>, kind: JobKind, design_id: &str, work: W) -> Job
    where
        W: FnOnce(ProgressFn<'_>) -> Result<String, JobFailure> + Send + 'static,
    {
        let job = Job {
            id: uuid::Uuid::new_v4().to_string(),
            kind,
            design_id: design_id.to_string(),
            state: JobState::Queued,
            progress: Progress::default(),
            result: None,
            error: None,
            created_at: Utc::now(),
        };
        self.lock().insert(job.id.clone(), job.clone());
        let queue = Arc::clone(self);
        let id = job.id.clone();
        tokio::spawn(async move {
            let _permit = queue.permits.clone().acquire_owned().await.expect("semaphore is never closed");
            queue.transition(&id, JobState::Running, |_| {});
            let runner = Arc::clone(&queue);
            let job_id = id.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let report = |done: usize, total: usize| {
                    runner.update(&job_id, |job| {
                        // Worker threads may report out of order; keep progress monotone.
                        job.progress = Progress { done: done.max(job.progress.done).min(total), total };
                    })
                };
                work(&report)
            })
            .await;
            match outcome {
                Ok(Ok(result)) => queue.transition(&id, JobState::Done, |job| {
                    job.progress.done = job.progress.total;
                    job.result = Some(result);
                }),
                Ok(Err(failure)) => queue.transition(&id, JobState::Failed, |job| job.error = Some(failure)),
                Err(join) => queue.transition(&id, JobState::Failed, |job| {
                    job.error = Some(JobFailure { code: "internal".into(), message: join.to_string() })
                }),
            }
        });
        job
    }
}
