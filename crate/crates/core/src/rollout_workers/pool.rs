use std::collections::{HashMap, VecDeque};
use std::io::{BufReader, BufWriter, Read, Write};
use std::os::unix::net::UnixStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::wire::{read_frame, write_frame, FromWorker, ResultMessage, TaskMessage, ToWorker, WorkerSetup};
use super::worker::{serve, FaultPlan};
use super::{RolloutBackend, WorkerError};
use crate::policy::PolicyParams;
use crate::rollout::RolloutContext;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolConfig {
    /// Fraction of workers (for broadcasts) and of tasks (for collection) that
    /// must succeed.
    pub quorum: f64,
    /// Limit on setup and broadcast acknowledgements.
    pub handshake_timeout: Duration,
    /// Limit on one `execute` call.
    pub task_timeout: Duration,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            quorum: 1.0,
            handshake_timeout: Duration::from_secs(30),
            task_timeout: Duration::from_secs(3600),
        }
    }
}

impl PoolConfig {
    fn required(&self, total: usize) -> usize {
        ((self.quorum.clamp(0.0, 1.0) * total as f64).ceil() as usize).min(total)
    }
}

enum Event {
    Msg(FromWorker),
    Closed,
}

enum Handle {
    Thread(JoinHandle<()>),
    Process(Child),
}

struct Slot {
    id: u32,
    writer: Option<Box<dyn Write + Send>>,
    handle: Option<Handle>,
    alive: bool,
    acked: Option<u64>,
    /// Index of the task in flight, if any.
    busy: Option<usize>,
}

/// Coordinator side of a set of workers. All bookkeeping lives here; workers
/// only see messages.
pub struct WorkerPool {
    slots: Vec<Slot>,
    events: Receiver<(u32, Event)>,
    cfg: PoolConfig,
    layers: Vec<usize>,
    current: Option<(u64, Vec<u8>)>,
}

fn spawn_reader<R: Read + Send + 'static>(id: u32, reader: R, tx: Sender<(u32, Event)>) {
    std::thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let msg = match read_frame(&mut reader) {
                Ok(Some(frame)) => FromWorker::decode(&frame).ok(),
                _ => None,
            };
            let event = match msg {
                Some(m) => Event::Msg(m),
                None => Event::Closed,
            };
            let closed = matches!(event, Event::Closed);
            if tx.send((id, event)).is_err() || closed {
                return;
            }
        }
    });
}

impl WorkerPool {
    /// `n` workers on threads of this process, each behind a socket pair.
    /// `faults[i]` (if present) applies to worker `i`.
    pub fn threads(ctx: &RolloutContext, gamma: f64, n: usize, faults: &[FaultPlan], cfg: PoolConfig) -> Result<Self, WorkerError> {
        let (tx, rx) = channel();
        let mut slots = Vec::with_capacity(n);
        for i in 0..n {
            let id = i as u32;
            let (ours, theirs) = UnixStream::pair()?;
            let plan = faults.get(i).cloned().unwrap_or_default();
            let their_reader = theirs.try_clone()?;
            let handle = std::thread::spawn(move || {
                // a crashed or shut down worker closes its end on return
                let _ = serve(BufReader::new(their_reader), BufWriter::new(theirs), id, &plan);
            });
            spawn_reader(id, ours.try_clone()?, tx.clone());
            slots.push(Slot {
                id,
                writer: Some(Box::new(ours)),
                handle: Some(Handle::Thread(handle)),
                alive: true,
                acked: None,
                busy: None,
            });
        }
        Self::start(slots, rx, ctx, gamma, cfg)
    }

    /// `n` worker processes. `command(i)` must start a program that runs the
    /// worker loop on its standard streams as worker `i`.
    pub fn processes(
        ctx: &RolloutContext,
        gamma: f64,
        n: usize,
        command: impl Fn(u32) -> Command,
        cfg: PoolConfig,
    ) -> Result<Self, WorkerError> {
        let (tx, rx) = channel();
        let mut slots = Vec::with_capacity(n);
        for i in 0..n {
            let id = i as u32;
            let mut child = command(id).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            spawn_reader(id, stdout, tx.clone());
            slots.push(Slot {
                id,
                writer: Some(Box::new(BufWriter::new(stdin))),
                handle: Some(Handle::Process(child)),
                alive: true,
                acked: None,
                busy: None,
            });
        }
        Self::start(slots, rx, ctx, gamma, cfg)
    }

    fn start(slots: Vec<Slot>, events: Receiver<(u32, Event)>, ctx: &RolloutContext, gamma: f64, cfg: PoolConfig) -> Result<Self, WorkerError> {
        let mut pool = WorkerPool { slots, events, cfg, layers: ctx.policy_layers(), current: None };
        let setup = ToWorker::Setup(Box::new(WorkerSetup::from_context(ctx, gamma)));
        let frame = setup.encode();
        for i in 0..pool.slots.len() {
            pool.send(i, &frame);
        }
        let deadline = Instant::now() + pool.cfg.handshake_timeout;
        let mut ready = vec![false; pool.slots.len()];
        while pool.slots.iter().zip(&ready).any(|(s, r)| s.alive && !r) {
            match pool.next_event(deadline) {
                Some((id, Event::Msg(FromWorker::Ready { .. }))) => ready[id as usize] = true,
                Some((id, Event::Closed)) => pool.mark_dead(id as usize),
                Some(_) => {}
                None => break,
            }
        }
        let n_ready = ready.iter().filter(|&&r| r).count();
        let required = pool.cfg.required(pool.slots.len());
        if n_ready < required.max(1) {
            return Err(WorkerError::Setup(format!("{n_ready} of {} workers came up", pool.slots.len())));
        }
        for (i, r) in ready.iter().enumerate() {
            if !r {
                pool.mark_dead(i);
            }
        }
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn live_workers(&self) -> usize {
        self.slots.iter().filter(|s| s.alive).count()
    }

    fn send(&mut self, i: usize, frame: &[u8]) -> bool {
        let slot = &mut self.slots[i];
        if !slot.alive {
            return false;
        }
        let ok = slot.writer.as_mut().is_some_and(|w| write_frame(w, frame).is_ok());
        if !ok {
            self.mark_dead(i);
        }
        ok
    }

    fn mark_dead(&mut self, i: usize) {
        let slot = &mut self.slots[i];
        slot.alive = false;
        slot.writer = None;
    }

    fn next_event(&self, deadline: Instant) -> Option<(u32, Event)> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.events.recv_timeout(left) {
            Ok(e) => Some(e),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }

    /// Sends `params` as `version` to every live worker and waits for their
    /// acknowledgements. Re-broadcasting a version is harmless.
    pub fn broadcast_params(&mut self, params: &PolicyParams, version: u64) -> Result<usize, WorkerError> {
        let policy = params.to_bytes();
        let frame = ToWorker::Params { version, policy: policy.clone() }.encode();
        self.current = Some((version, policy));
        for i in 0..self.slots.len() {
            self.slots[i].acked = None;
            self.send(i, &frame);
        }
        let deadline = Instant::now() + self.cfg.handshake_timeout;
        while self.slots.iter().any(|s| s.alive && s.acked != Some(version)) {
            match self.next_event(deadline) {
                Some((id, Event::Msg(FromWorker::Ack { version: v, .. }))) => self.slots[id as usize].acked = Some(v),
                Some((id, Event::Closed)) => self.mark_dead(id as usize),
                // late results of an earlier dispatch
                Some(_) => {}
                None => break,
            }
        }
        let acks = self.slots.iter().filter(|s| s.alive && s.acked == Some(version)).count();
        let required = self.cfg.required(self.slots.len());
        if acks < required {
            return Err(WorkerError::PartialBroadcast { acks, required });
        }
        Ok(acks)
    }

    /// Runs `tasks` on the live workers, one in flight per worker. Results are
    /// deduplicated by task id; tasks of a worker that dies are re-dispatched
    /// to the survivors. Returns the results in task order.
    pub fn dispatch_and_collect(&mut self, tasks: &[TaskMessage], timeout: Duration) -> Result<Vec<ResultMessage>, WorkerError> {
        let index: HashMap<u64, usize> = tasks.iter().enumerate().map(|(i, t)| (t.task_id, i)).collect();
        let mut results: Vec<Option<ResultMessage>> = vec![None; tasks.len()];
        let mut pending: VecDeque<usize> = (0..tasks.len()).collect();
        let mut resolved = 0;
        let deadline = Instant::now() + timeout;
        for s in &mut self.slots {
            s.busy = None;
        }
        while resolved < tasks.len() {
            for i in 0..self.slots.len() {
                if !self.slots[i].alive || self.slots[i].busy.is_some() {
                    continue;
                }
                while let Some(t) = pending.pop_front() {
                    if results[t].is_some() {
                        continue;
                    }
                    if self.send(i, &ToWorker::Task(tasks[t].clone()).encode()) {
                        self.slots[i].busy = Some(t);
                    } else {
                        pending.push_front(t);
                    }
                    break;
                }
            }
            if self.live_workers() == 0 {
                return Err(self.shortfall(tasks, results, None));
            }
            let Some((id, event)) = self.next_event(deadline) else {
                return Err(self.shortfall(tasks, results, Some(deadline)));
            };
            let w = id as usize;
            match event {
                Event::Msg(FromWorker::Result(r)) => {
                    if let Some(&t) = index.get(&r.task_id) {
                        if self.slots[w].busy == Some(t) {
                            self.slots[w].busy = None;
                        }
                        if results[t].is_none() {
                            results[t] = Some(r);
                            resolved += 1;
                        }
                    }
                }
                Event::Msg(FromWorker::Stale { task_id, .. }) => {
                    if let Some(&t) = index.get(&task_id) {
                        if self.slots[w].busy == Some(t) {
                            self.slots[w].busy = None;
                        }
                        pending.push_front(t);
                    }
                    // re-sync this worker; the task follows on the same stream
                    if let Some((version, policy)) = self.current.clone() {
                        self.send(w, &ToWorker::Params { version, policy }.encode());
                    }
                }
                Event::Msg(FromWorker::Failed { task_id, message, .. }) => {
                    return Err(WorkerError::TaskFailed { task_id, message });
                }
                Event::Msg(FromWorker::Ack { version, .. }) => self.slots[w].acked = Some(version),
                Event::Msg(FromWorker::Ready { .. }) => {}
                Event::Closed => {
                    if let Some(t) = self.slots[w].busy.take() {
                        pending.push_front(t);
                    }
                    self.mark_dead(w);
                }
            }
        }
        Ok(results.into_iter().map(|r| r.expect("all resolved")).collect())
    }

    fn shortfall(&self, tasks: &[TaskMessage], results: Vec<Option<ResultMessage>>, timed_out: Option<Instant>) -> WorkerError {
        let missing = tasks.iter().zip(&results).filter(|(_, r)| r.is_none()).map(|(t, _)| t.task_id).collect();
        let results = results.into_iter().flatten().collect();
        match timed_out {
            Some(_) => WorkerError::Timeout { results, missing },
            None => WorkerError::BelowQuorum { required: tasks.len(), results, missing },
        }
    }

    /// Stops every worker and waits for it to exit.
    pub fn shutdown(&mut self) {
        let frame = ToWorker::Shutdown.encode();
        for i in 0..self.slots.len() {
            self.send(i, &frame);
            self.mark_dead(i);
        }
        for slot in &mut self.slots {
            match slot.handle.take() {
                Some(Handle::Thread(h)) => {
                    let _ = h.join();
                }
                Some(Handle::Process(mut c)) => {
                    if !matches!(c.try_wait(), Ok(Some(_))) {
                        let deadline = Instant::now() + Duration::from_secs(5);
                        while Instant::now() < deadline && matches!(c.try_wait(), Ok(None)) {
                            std::thread::sleep(Duration::from_millis(10));
                        }
                        let _ = c.kill();
                        let _ = c.wait();
                    }
                }
                None => {}
            }
        }
    }

    pub fn worker_ids(&self) -> Vec<u32> {
        self.slots.iter().filter(|s| s.alive).map(|s| s.id).collect()
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl RolloutBackend for WorkerPool {
    fn broadcast(&mut self, theta: &[f64], version: u64) -> Result<usize, WorkerError> {
        let params = PolicyParams::from_flat(self.layers.clone(), theta.to_vec()).map_err(|e| WorkerError::Setup(e.to_string()))?;
        self.broadcast_params(&params, version)
    }

    /// Accepts a partial result set when it still meets the task quorum.
    fn execute(&mut self, tasks: &[TaskMessage]) -> Result<Vec<ResultMessage>, WorkerError> {
        let required = self.cfg.required(tasks.len());
        match self.dispatch_and_collect(tasks, self.cfg.task_timeout) {
            Ok(r) => Ok(r),
            Err(WorkerError::Timeout { results, missing } | WorkerError::BelowQuorum { results, missing, .. }) => {
                if results.len() >= required {
                    Ok(results)
                } else {
                    Err(WorkerError::BelowQuorum { results, missing, required })
                }
            }
            Err(e) => Err(e),
        }
    }
}
