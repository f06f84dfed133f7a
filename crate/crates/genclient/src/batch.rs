use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unirag_core::prompting::PromptRenderer;

use crate::client::{GenClient, GenError, GenerationOutput, PromptJob};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailurePolicy {
    /// Record the failure and keep going.
    #[default]
    Skip,
    /// Stop handing out new jobs after the first failure.
    Abort,
}

#[derive(Debug, Error)]
#[error("batch aborted at job {index} (`{qid}`): {error}")]
pub struct BatchAborted {
    pub index: usize,
    pub qid: String,
    #[source]
    pub error: GenError,
}

pub type JobResult = Result<GenerationOutput, GenError>;

/// Runs `jobs` with at most `parallelism` requests in flight and returns the
/// results in input order.
///
/// `on_done(index, result)` is called from worker threads as each job
/// finishes, in completion order. Under [`FailurePolicy::Abort`] the batch
/// stops scheduling after the first failure and reports the lowest failing
/// index; jobs already in flight still complete and are reported to
/// `on_done`.
pub fn run_batch<F>(
    client: &GenClient,
    renderer: &PromptRenderer,
    jobs: &[PromptJob],
    parallelism: usize,
    policy: FailurePolicy,
    on_done: F,
) -> Result<Vec<JobResult>, BatchAborted>
where
    F: Fn(usize, &JobResult) + Sync,
{
    let workers = parallelism.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<JobResult>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let result = client.generate(renderer, &jobs[i]);
                if result.is_err() && policy == FailurePolicy::Abort {
                    stop.store(true, Ordering::SeqCst);
                }
                on_done(i, &result);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(result);
            });
        }
    });

    let slots = slots.into_inner().unwrap_or_else(|e| e.into_inner());
    if policy == FailurePolicy::Abort {
        if let Some(index) = slots.iter().position(|s| matches!(s, Some(Err(_)))) {
            let mut slots = slots;
            let Some(Err(error)) = slots[index].take() else {
                unreachable!()
            };
            return Err(BatchAborted {
                index,
                qid: jobs[index].qid.clone(),
                error,
            });
        }
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every job runs unless the batch aborts"))
        .collect())
}
