//! Binary messages between the coordinator and rollout workers.
//!
//! A frame is a 4-byte big-endian payload length followed by the payload:
//! protocol version, message tag, then the fields in declaration order with
//! little-endian numerics. The byte layout is spelled out in `docs/wire-format.md`.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::env::{EnvConfig, RewardConfig};
use crate::grid::CooldownRules;

pub const PROTOCOL_VERSION: u8 = 1;
/// Frames above this size are rejected before allocating.
pub const MAX_FRAME: u32 = 1 << 30;

const TAG_SETUP: u8 = 0x01;
const TAG_PARAMS: u8 = 0x02;
const TAG_TASK: u8 = 0x03;
const TAG_SHUTDOWN: u8 = 0x04;
const TAG_READY: u8 = 0x81;
const TAG_ACK: u8 = 0x82;
const TAG_RESULT: u8 = 0x83;
const TAG_STALE: u8 = 0x84;
const TAG_FAILED: u8 = 0x85;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("stream: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(u32),
    #[error("payload truncated")]
    Truncated,
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("protocol version {0}, expected {PROTOCOL_VERSION}")]
    Version(u8),
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid field: {0}")]
    Invalid(String),
}

/// One perturbed rollout to run.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMessage {
    pub task_id: u64,
    pub params_version: u64,
    pub seed: u64,
    /// +1 or -1; 0 runs the unperturbed parameters.
    pub sign: i8,
    pub sigma: f64,
    pub scenario_id: String,
    pub k: u32,
    /// 0 runs to the end of the scenario.
    pub max_steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultMessage {
    pub task_id: u64,
    pub total_return: f64,
    pub steps_survived: u64,
    pub mean_risk: f64,
    pub worker_id: u32,
    pub wall_time_s: f64,
}

impl ResultMessage {
    /// Equality on the fields a rollout determines (worker and timing aside).
    pub fn same_outcome(&self, other: &ResultMessage) -> bool {
        self.task_id == other.task_id
            && self.total_return.to_bits() == other.total_return.to_bits()
            && self.steps_survived == other.steps_survived
            && self.mean_risk.to_bits() == other.mean_risk.to_bits()
    }
}

/// Everything a worker needs to build its rollout context.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSetup {
    pub grid_text: String,
    /// `(id, chronics csv, attacks csv)` per scenario.
    pub scenarios: Vec<(String, String, String)>,
    pub include_redispatch: bool,
    pub hidden: Vec<u32>,
    pub gamma: f64,
    pub env: EnvConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToWorker {
    Setup(Box<WorkerSetup>),
    /// Parameters in the policy checkpoint encoding.
    Params { version: u64, policy: Vec<u8> },
    Task(TaskMessage),
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FromWorker {
    Ready { worker_id: u32 },
    Ack { worker_id: u32, version: u64 },
    Result(ResultMessage),
    /// The task asked for parameters the worker does not hold.
    Stale { worker_id: u32, task_id: u64, have: Option<u64> },
    Failed { worker_id: u32, task_id: u64, message: String },
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(tag: u8) -> Self {
        Encoder { buf: vec![PROTOCOL_VERSION, tag] }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn i8(&mut self, v: i8) {
        self.buf.push(v as u8);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn i8(&mut self) -> Result<i8, WireError> {
        Ok(self.u8()? as i8)
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(WireError::Invalid(format!("flag byte {b}"))),
        }
    }
    fn str(&mut self) -> Result<String, WireError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| WireError::Invalid("string is not UTF-8".into()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.u64()?;
        if n > MAX_FRAME as u64 {
            return Err(WireError::Truncated);
        }
        Ok(self.take(n as usize)?.to_vec())
    }
    fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.buf.len()))
        }
    }
}

fn header(payload: &[u8]) -> Result<(u8, Decoder<'_>), WireError> {
    if payload.len() < 2 {
        return Err(WireError::Truncated);
    }
    if payload[0] != PROTOCOL_VERSION {
        return Err(WireError::Version(payload[0]));
    }
    Ok((payload[1], Decoder { buf: &payload[2..] }))
}

fn put_task(e: &mut Encoder, t: &TaskMessage) {
    e.u64(t.task_id);
    e.u64(t.params_version);
    e.u64(t.seed);
    e.i8(t.sign);
    e.f64(t.sigma);
    e.str(&t.scenario_id);
    e.u32(t.k);
    e.u32(t.max_steps);
}

fn get_task(d: &mut Decoder<'_>) -> Result<TaskMessage, WireError> {
    Ok(TaskMessage {
        task_id: d.u64()?,
        params_version: d.u64()?,
        seed: d.u64()?,
        sign: d.i8()?,
        sigma: d.f64()?,
        scenario_id: d.str()?,
        k: d.u32()?,
        max_steps: d.u32()?,
    })
}

fn put_setup(e: &mut Encoder, s: &WorkerSetup) {
    e.str(&s.grid_text);
    e.u32(s.scenarios.len() as u32);
    for (id, chronics, attacks) in &s.scenarios {
        e.str(id);
        e.str(chronics);
        e.str(attacks);
    }
    e.u8(s.include_redispatch as u8);
    e.u32(s.hidden.len() as u32);
    for &h in &s.hidden {
        e.u32(h);
    }
    e.f64(s.gamma);
    let env = &s.env;
    e.f64(env.reward.survival_bonus);
    e.f64(env.reward.topology_cost);
    e.f64(env.reward.redispatch_cost);
    e.u32(env.cooldowns.substation);
    e.u32(env.cooldowns.line_action);
    e.u32(env.cooldowns.line_recovery);
    e.u8(env.overload_steps);
    e.u8(env.simulation_budget.is_some() as u8);
    e.u32(env.simulation_budget.unwrap_or(0));
}

fn get_setup(d: &mut Decoder<'_>) -> Result<WorkerSetup, WireError> {
    let grid_text = d.str()?;
    let n = d.u32()? as usize;
    let mut scenarios = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        scenarios.push((d.str()?, d.str()?, d.str()?));
    }
    let include_redispatch = d.bool()?;
    let nh = d.u32()? as usize;
    let mut hidden = Vec::with_capacity(nh.min(64));
    for _ in 0..nh {
        hidden.push(d.u32()?);
    }
    let gamma = d.f64()?;
    let reward = RewardConfig { survival_bonus: d.f64()?, topology_cost: d.f64()?, redispatch_cost: d.f64()? };
    let cooldowns = CooldownRules { substation: d.u32()?, line_action: d.u32()?, line_recovery: d.u32()? };
    let overload_steps = d.u8()?;
    let has_budget = d.bool()?;
    let budget = d.u32()?;
    Ok(WorkerSetup {
        grid_text,
        scenarios,
        include_redispatch,
        hidden,
        gamma,
        env: EnvConfig { reward, cooldowns, overload_steps, simulation_budget: has_budget.then_some(budget) },
    })
}

impl ToWorker {
    pub fn encode(&self) -> Vec<u8> {
        let mut e;
        match self {
            ToWorker::Setup(s) => {
                e = Encoder::new(TAG_SETUP);
                put_setup(&mut e, s);
            }
            ToWorker::Params { version, policy } => {
                e = Encoder::new(TAG_PARAMS);
                e.u64(*version);
                e.bytes(policy);
            }
            ToWorker::Task(t) => {
                e = Encoder::new(TAG_TASK);
                put_task(&mut e, t);
            }
            ToWorker::Shutdown => e = Encoder::new(TAG_SHUTDOWN),
        }
        e.buf
    }

    pub fn decode(payload: &[u8]) -> Result<Self, WireError> {
        let (tag, mut d) = header(payload)?;
        let msg = match tag {
            TAG_SETUP => ToWorker::Setup(Box::new(get_setup(&mut d)?)),
            TAG_PARAMS => ToWorker::Params { version: d.u64()?, policy: d.bytes()? },
            TAG_TASK => ToWorker::Task(get_task(&mut d)?),
            TAG_SHUTDOWN => ToWorker::Shutdown,
            t => return Err(WireError::UnknownTag(t)),
        };
        d.finish()?;
        Ok(msg)
    }
}

impl FromWorker {
    pub fn encode(&self) -> Vec<u8> {
        let mut e;
        match self {
            FromWorker::Ready { worker_id } => {
                e = Encoder::new(TAG_READY);
                e.u32(*worker_id);
            }
            FromWorker::Ack { worker_id, version } => {
                e = Encoder::new(TAG_ACK);
                e.u32(*worker_id);
                e.u64(*version);
            }
            FromWorker::Result(r) => {
                e = Encoder::new(TAG_RESULT);
                e.u64(r.task_id);
                e.f64(r.total_return);
                e.u64(r.steps_survived);
                e.f64(r.mean_risk);
                e.u32(r.worker_id);
                e.f64(r.wall_time_s);
            }
            FromWorker::Stale { worker_id, task_id, have } => {
                e = Encoder::new(TAG_STALE);
                e.u32(*worker_id);
                e.u64(*task_id);
                e.u8(have.is_some() as u8);
                e.u64(have.unwrap_or(0));
            }
            FromWorker::Failed { worker_id, task_id, message } => {
                e = Encoder::new(TAG_FAILED);
                e.u32(*worker_id);
                e.u64(*task_id);
                e.str(message);
            }
        }
        e.buf
    }

    pub fn decode(payload: &[u8]) -> Result<Self, WireError> {
        let (tag, mut d) = header(payload)?;
        let msg = match tag {
            TAG_READY => FromWorker::Ready { worker_id: d.u32()? },
            TAG_ACK => FromWorker::Ack { worker_id: d.u32()?, version: d.u64()? },
            TAG_RESULT => FromWorker::Result(ResultMessage {
                task_id: d.u64()?,
                total_return: d.f64()?,
                steps_survived: d.u64()?,
                mean_risk: d.f64()?,
                worker_id: d.u32()?,
                wall_time_s: d.f64()?,
            }),
            TAG_STALE => {
                let worker_id = d.u32()?;
                let task_id = d.u64()?;
                let flag = d.bool()?;
                let v = d.u64()?;
                FromWorker::Stale { worker_id, task_id, have: flag.then_some(v) }
            }
            TAG_FAILED => FromWorker::Failed { worker_id: d.u32()?, task_id: d.u64()?, message: d.str()? },
            t => return Err(WireError::UnknownTag(t)),
        };
        d.finish()?;
        Ok(msg)
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<(), WireError> {
    let len = u32::try_from(payload.len()).map_err(|_| WireError::Oversized(u32::MAX))?;
    if len > MAX_FRAME {
        return Err(WireError::Oversized(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(WireError::Oversized(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    Ok(Some(payload))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn task() -> TaskMessage {
        TaskMessage {
            task_id: 7,
            params_version: 3,
            seed: 0xDEAD_BEEF,
            sign: -1,
            sigma: 0.05,
            scenario_id: "s004".into(),
            k: 64,
            max_steps: 0,
        }
    }

    #[test]
    fn task_layout_is_pinned() {
        let bytes = ToWorker::Task(task()).encode();
        let mut expected = vec![1u8, 0x03];
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.extend_from_slice(&3u64.to_le_bytes());
        expected.extend_from_slice(&0xDEAD_BEEFu64.to_le_bytes());
        expected.push(0xFF);
        expected.extend_from_slice(&0.05f64.to_le_bytes());
        expected.extend_from_slice(&4u32.to_le_bytes());
        expected.extend_from_slice(b"s004");
        expected.extend_from_slice(&64u32.to_le_bytes());
        expected.extend_from_slice(&0u32.to_le_bytes());
        assert_eq!(bytes, expected);

        let mut framed = Vec::new();
        write_frame(&mut framed, &bytes).unwrap();
        assert_eq!(&framed[..4], &(expected.len() as u32).to_be_bytes());
    }

    #[test]
    fn every_message_round_trips() {
        let setup = WorkerSetup {
            grid_text: "[grid]\nname = x\n".into(),
            scenarios: vec![("s000".into(), "step,load_0\n0,1\n".into(), "step,line_id,duration\n".into())],
            include_redispatch: true,
            hidden: vec![8, 4],
            gamma: 0.99,
            env: EnvConfig { simulation_budget: Some(5), ..EnvConfig::default() },
        };
        let to = [
            ToWorker::Setup(Box::new(setup)),
            ToWorker::Params { version: 9, policy: vec![1, 2, 3] },
            ToWorker::Task(task()),
            ToWorker::Shutdown,
        ];
        for m in &to {
            assert_eq!(&ToWorker::decode(&m.encode()).unwrap(), m);
        }
        let from = [
            FromWorker::Ready { worker_id: 2 },
            FromWorker::Ack { worker_id: 2, version: 9 },
            FromWorker::Result(ResultMessage {
                task_id: 7,
                total_return: 12.5,
                steps_survived: 13,
                mean_risk: 0.4,
                worker_id: 2,
                wall_time_s: 0.01,
            }),
            FromWorker::Stale { worker_id: 1, task_id: 4, have: None },
            FromWorker::Stale { worker_id: 1, task_id: 4, have: Some(2) },
            FromWorker::Failed { worker_id: 0, task_id: 1, message: "unknown scenario".into() },
        ];
        for m in &from {
            assert_eq!(&FromWorker::decode(&m.encode()).unwrap(), m);
        }
    }

    #[test]
    fn malformed_payloads_are_rejected() {
        let good = ToWorker::Task(task()).encode();
        assert!(matches!(ToWorker::decode(&good[..good.len() - 1]), Err(WireError::Truncated)));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(ToWorker::decode(&long), Err(WireError::Trailing(1))));
        let mut wrong = good.clone();
        wrong[0] = 2;
        assert!(matches!(ToWorker::decode(&wrong), Err(WireError::Version(2))));
        assert!(matches!(ToWorker::decode(&[1, 0x7f]), Err(WireError::UnknownTag(0x7f))));
        assert!(matches!(FromWorker::decode(&good), Err(WireError::UnknownTag(0x03))));
    }

    #[test]
    fn frames_stream_back_to_back() {
        let mut buf = Vec::new();
        for i in 0..3u8 {
            write_frame(&mut buf, &[i; 5]).unwrap();
        }
        let mut r = &buf[..];
        for i in 0..3u8 {
            assert_eq!(read_frame(&mut r).unwrap().unwrap(), vec![i; 5]);
        }
        assert!(read_frame(&mut r).unwrap().is_none());
        let cut = &buf[..7];
        assert!(matches!(read_frame(&mut &cut[..]), Err(WireError::Truncated)));
        let huge = (MAX_FRAME + 1).to_be_bytes();
        assert!(matches!(read_frame(&mut &huge[..]), Err(WireError::Oversized(_))));
    }

    proptest! {
        #[test]
        fn tasks_round_trip(id in any::<u64>(), v in any::<u64>(), seed in any::<u64>(), sign in prop_oneof![Just(-1i8), Just(0i8), Just(1i8)],
                            sigma in 1e-6f64..10.0, sc in "[a-z0-9_]{0,12}", k in any::<u32>(), steps in any::<u32>()) {
            let t = TaskMessage { task_id: id, params_version: v, seed, sign, sigma, scenario_id: sc, k, max_steps: steps };
            prop_assert_eq!(ToWorker::decode(&ToWorker::Task(t.clone()).encode()).unwrap(), ToWorker::Task(t));
        }
    }
}
