use std::io::{Read, Write};

use super::wire::{read_frame, write_frame, FromWorker, ToWorker};
use super::{run_task, WorkerError};
use crate::policy::PolicyParams;
use crate::rollout::RolloutContext;

/// Misbehaviour a worker can be told to simulate, for exercising the pool's
/// recovery paths.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    /// Exit without replying when this many tasks have completed and another arrives.
    pub crash_after_tasks: Option<u32>,
    /// Exit as soon as a parameter broadcast arrives.
    pub crash_on_broadcast: bool,
    /// Send every result twice.
    pub duplicate_results: bool,
    /// Acknowledge the first broadcast without installing it.
    pub drop_first_params: bool,
}

fn send<W: Write>(w: &mut W, msg: &FromWorker) -> Result<(), WorkerError> {
    write_frame(w, &msg.encode())?;
    Ok(())
}

/// Worker loop: answers coordinator messages until `Shutdown` or end of stream.
/// Returning early (a simulated crash) simply drops the stream.
pub fn serve<R: Read, W: Write>(mut reader: R, mut writer: W, worker_id: u32, faults: &FaultPlan) -> Result<(), WorkerError> {
    let mut ctx: Option<(RolloutContext, f64)> = None;
    let mut params: Option<(u64, PolicyParams)> = None;
    let mut dropped_params = false;
    let mut done = 0u32;
    while let Some(frame) = read_frame(&mut reader)? {
        match ToWorker::decode(&frame)? {
            ToWorker::Setup(setup) => {
                let built = setup.to_context()?;
                ctx = Some((built, setup.gamma));
                params = None;
                send(&mut writer, &FromWorker::Ready { worker_id })?;
            }
            ToWorker::Params { version, policy } => {
                if faults.crash_on_broadcast {
                    return Ok(());
                }
                let (c, _) = ctx.as_ref().ok_or_else(|| WorkerError::Setup("parameters before setup".into()))?;
                if faults.drop_first_params && !dropped_params {
                    dropped_params = true;
                } else {
                    let p = PolicyParams::from_bytes_for(&policy, &c.policy_layers())
                        .map_err(|e| WorkerError::Setup(e.to_string()))?;
                    params = Some((version, p));
                }
                send(&mut writer, &FromWorker::Ack { worker_id, version })?;
            }
            ToWorker::Task(task) => {
                if faults.crash_after_tasks == Some(done) {
                    return Ok(());
                }
                let (c, gamma) = ctx.as_ref().ok_or_else(|| WorkerError::Setup("task before setup".into()))?;
                let reply = match &params {
                    Some((v, p)) if *v == task.params_version => match run_task(c, p, &task, *gamma, worker_id) {
                        Ok(r) => FromWorker::Result(r),
                        Err(message) => FromWorker::Failed { worker_id, task_id: task.task_id, message },
                    },
                    other => FromWorker::Stale { worker_id, task_id: task.task_id, have: other.as_ref().map(|(v, _)| *v) },
                };
                send(&mut writer, &reply)?;
                if faults.duplicate_results && matches!(reply, FromWorker::Result(_)) {
                    send(&mut writer, &reply)?;
                }
                done += 1;
            }
            ToWorker::Shutdown => return Ok(()),
        }
    }
    Ok(())
}

/// Worker loop over standard input and output, for process workers.
pub fn serve_stdio(worker_id: u32, faults: &FaultPlan) -> Result<(), WorkerError> {
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    serve(std::io::BufReader::new(stdin), stdout, worker_id, faults)
}
