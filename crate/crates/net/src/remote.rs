//! Coordinator side: dispatches the node solves of a sweep to registered
//! workers, at most one in flight per worker, with retry and in-process
//! fallback.

use std::collections::BTreeSet;
use std::io::ErrorKind;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wsdo_core::nhatc::{solve_node, DispatchEvent, NodeExecutor, NodeInput, NodeSolution, ALL_KINDS};

use crate::wire::{read_message, write_message, MessageType, WireMessage};
use crate::{NetError, Result};

pub const WORKERS_ENV: &str = "WSDO_WORKERS";
pub const DEFAULT_SOLVE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
pub const LOCAL: &str = "local";

fn all_kinds() -> Vec<String> {
    ALL_KINDS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerEndpoint {
    pub host: String,
    pub port: u16,
    #[serde(default = "all_kinds")]
    pub capabilities: Vec<String>,
}

impl WorkerEndpoint {
    pub fn label(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerRegistry {
    pub workers: Vec<WorkerEndpoint>,
}

impl WorkerRegistry {
    pub fn from_json(text: &str) -> Result<Self> {
        let reg: Self = serde_json::from_str(text).map_err(|e| NetError::Config(format!("worker registry: {e}")))?;
        for w in &reg.workers {
            if let Some(bad) = w.capabilities.iter().find(|c| !ALL_KINDS.contains(&c.as_str())) {
                return Err(NetError::Config(format!("worker {} lists unknown capability {bad}", w.label())));
            }
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NetError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The registry named by `WSDO_WORKERS`, if set.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(WORKERS_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)).map(Some),
            _ => Ok(None),
        }
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }
}

struct Connection {
    stream: TcpStream,
    next_id: u64,
}

impl Connection {
    fn open(ep: &WorkerEndpoint, connect_timeout: Duration, timeout: Duration) -> Result<(Self, Vec<String>)> {
        let addr = (ep.host.as_str(), ep.port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| NetError::Config(format!("{} does not resolve", ep.label())))?;
        let stream = TcpStream::connect_timeout(&addr, connect_timeout)?;
        let _ = stream.set_nodelay(true);
        let mut conn = Self { stream, next_id: 0 };
        let hello = conn.request(MessageType::Hello, json!({}), timeout)?;
        if hello.kind != MessageType::Hello {
            return Err(NetError::Protocol(format!("expected HELLO, got {:?}", hello.kind)));
        }
        let caps = hello
            .payload
            .get("capabilities")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|c| c.as_str().map(String::from)).collect())
            .unwrap_or_default();
        Ok((conn, caps))
    }

    fn request(&mut self, kind: MessageType, payload: Value, timeout: Duration) -> Result<WireMessage> {
        self.next_id += 1;
        let id = self.next_id;
        write_message(&mut self.stream, &WireMessage::new(kind, id, payload))?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(NetError::Timeout(timeout));
            }
            self.stream.set_read_timeout(Some(left))?;
            let msg = match read_message(&mut self.stream) {
                Ok(Some(m)) => m,
                Ok(None) => return Err(NetError::Closed),
                Err(NetError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(NetError::Timeout(timeout))
                }
                Err(e) => return Err(e),
            };
            match msg.in_reply_to() {
                Some(r) if r == id => return Ok(msg),
                _ => log::debug!("skipping unrelated {:?} {}", msg.kind, msg.msg_id),
            }
        }
    }
}

struct Slot {
    endpoint: WorkerEndpoint,
    conn: Option<Connection>,
    caps: BTreeSet<String>,
    alive: bool,
}

impl Slot {
    fn can_solve(&self, kind: &str) -> bool {
        self.alive && self.caps.contains(kind)
    }
}

enum Outcome {
    Solved(NodeSolution),
    /// The solver itself failed; another worker would fail the same way.
    SolverError(String),
    /// Transport or worker trouble; worth trying elsewhere.
    Lost(String),
}

fn remote_solve(slot: &mut Slot, input: &NodeInput, connect_timeout: Duration, timeout: Duration) -> Outcome {
    if slot.conn.is_none() {
        match Connection::open(&slot.endpoint, connect_timeout, timeout) {
            Ok((c, caps)) => {
                slot.caps = slot.caps.intersection(&caps.into_iter().collect()).cloned().collect();
                slot.conn = Some(c);
            }
            Err(e) => {
                slot.alive = false;
                return Outcome::Lost(format!("connect failed: {e}"));
            }
        }
    }
    if !slot.caps.contains(input.problem.kind()) {
        return Outcome::Lost(format!("worker does not advertise {}", input.problem.kind()));
    }
    let payload = match serde_json::to_value(input) {
        Ok(v) => v,
        Err(e) => return Outcome::SolverError(format!("cannot encode the node input: {e}")),
    };
    let conn = slot.conn.as_mut().expect("connected above");
    match conn.request(MessageType::Solve, payload, timeout) {
        Ok(msg) if msg.kind == MessageType::Result => {
            match msg.payload.get("solution").cloned().map(serde_json::from_value::<NodeSolution>) {
                Some(Ok(sol)) => Outcome::Solved(sol),
                Some(Err(e)) => Outcome::Lost(format!("bad RESULT payload: {e}")),
                None => Outcome::Lost("RESULT without a solution".into()),
            }
        }
        Ok(msg) if msg.kind == MessageType::Error => {
            let kind = msg.payload.get("kind").and_then(Value::as_str).unwrap_or("");
            let text = msg.payload.get("message").and_then(Value::as_str).unwrap_or("").to_string();
            match kind {
                "solver" => Outcome::SolverError(text),
                "capability" => {
                    slot.caps.remove(input.problem.kind());
                    Outcome::Lost(text)
                }
                _ => Outcome::Lost(format!("{kind}: {text}")),
            }
        }
        Ok(msg) => Outcome::Lost(format!("unexpected {:?} reply", msg.kind)),
        Err(e) => {
            slot.alive = false;
            slot.conn = None;
            Outcome::Lost(e.to_string())
        }
    }
}

/// Sends node solves to the registered workers.
pub struct RemoteExecutor {
    slots: Vec<Slot>,
    timeout: Duration,
    connect_timeout: Duration,
    events: Vec<DispatchEvent>,
}

impl RemoteExecutor {
    pub fn new(registry: &WorkerRegistry) -> Self {
        Self {
            slots: registry
                .workers
                .iter()
                .map(|w| Slot { endpoint: w.clone(), conn: None, caps: w.capabilities.iter().cloned().collect(), alive: true })
                .collect(),
            timeout: DEFAULT_SOLVE_TIMEOUT,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
            events: Vec::new(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn live_workers(&self) -> usize {
        self.slots.iter().filter(|s| s.alive).count()
    }

    /// Asks every connected worker to stop.
    pub fn shutdown_workers(&mut self) {
        for s in &mut self.slots {
            if let Some(c) = s.conn.as_mut() {
                c.next_id += 1;
                let _ = write_message(&mut c.stream, &WireMessage::new(MessageType::Shutdown, c.next_id, json!({})));
            }
            s.conn = None;
        }
    }

    fn event(&mut self, node: &str, worker: &str, outcome: impl Into<String>) {
        self.events.push(DispatchEvent { outer: 0, sweep: 0, node: node.into(), worker: worker.into(), outcome: outcome.into() });
    }

    /// One dispatch round: `jobs` pairs an input with a worker slot or with
    /// the in-process solver.
    fn run_round(&mut self, inputs: &[NodeInput], jobs: &[(usize, Option<usize>)]) -> Vec<(usize, Option<usize>, Outcome)> {
        let (timeout, connect_timeout) = (self.timeout, self.connect_timeout);
        let mut taken: Vec<Option<Slot>> = self.slots.drain(..).map(Some).collect();
        let mut outcomes = Vec::with_capacity(jobs.len());
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for &(i, w) in jobs {
                let input = &inputs[i];
                let slot = w.and_then(|w| taken[w].take());
                handles.push(scope.spawn(move || match slot {
                    Some(mut s) => {
                        let out = remote_solve(&mut s, input, connect_timeout, timeout);
                        (Some(s), out)
                    }
                    None => {
                        let out = match solve_node(input) {
                            Ok(sol) => Outcome::Solved(sol),
                            Err(e) => Outcome::SolverError(e.to_string()),
                        };
                        (None, out)
                    }
                }));
            }
            for (h, &(i, w)) in handles.into_iter().zip(jobs) {
                let (slot, out) = h.join().unwrap_or_else(|_| (None, Outcome::SolverError("node solve panicked".into())));
                if let (Some(w), Some(s)) = (w, slot) {
                    taken[w] = Some(s);
                }
                outcomes.push((i, w, out));
            }
        });
        self.slots = taken.into_iter().map(|s| s.expect("every slot returned")).collect();
        outcomes
    }

    /// Idle live worker able to solve `kind`, skipping `avoid`.
    fn pick(&self, kind: &str, busy: &BTreeSet<usize>, avoid: &BTreeSet<usize>) -> Option<usize> {
        (0..self.slots.len()).find(|w| !busy.contains(w) && !avoid.contains(w) && self.slots[*w].can_solve(kind))
    }
}

impl NodeExecutor for RemoteExecutor {
    fn solve_all(&mut self, inputs: &[NodeInput]) -> Vec<std::result::Result<NodeSolution, String>> {
        let mut results: Vec<Option<std::result::Result<NodeSolution, String>>> = vec![None; inputs.len()];
        let mut tried: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); inputs.len()];
        let mut pending: Vec<usize> = (0..inputs.len()).collect();
        // first attempt, one retry on another worker, then in process
        for round in 0..3 {
            if pending.is_empty() {
                break;
            }
            let mut busy = BTreeSet::new();
            let mut jobs = Vec::new();
            for &i in &pending {
                let w = if round < 2 { self.pick(inputs[i].problem.kind(), &busy, &tried[i]) } else { None };
                if let Some(w) = w {
                    busy.insert(w);
                    tried[i].insert(w);
                }
                jobs.push((i, w));
            }
            let mut next = Vec::new();
            for (i, w, out) in self.run_round(inputs, &jobs) {
                let node = inputs[i].node.clone();
                let label = w.map_or(LOCAL.to_string(), |w| self.slots[w].endpoint.label());
                let fallback = round > 0 && w.is_none();
                match out {
                    Outcome::Solved(sol) => {
                        self.event(&node, &label, if fallback { "ok (in-process fallback)" } else { "ok" });
                        results[i] = Some(Ok(sol));
                    }
                    Outcome::SolverError(msg) => {
                        self.event(&node, &label, format!("solver error: {msg}"));
                        results[i] = Some(Err(msg));
                    }
                    Outcome::Lost(msg) => {
                        log::warn!("solve of {node} on {label} failed: {msg}");
                        self.event(&node, &label, format!("failed: {msg}"));
                        next.push(i);
                    }
                }
            }
            pending = next;
        }
        results.into_iter().map(|r| r.unwrap_or_else(|| Err("no result".into()))).collect()
    }

    fn take_events(&mut self) -> Vec<DispatchEvent> {
        std::mem::take(&mut self.events)
    }
}
