//! Worker side: serves HELLO, SOLVE, PING and SHUTDOWN on every accepted
//! connection. A SOLVE runs on its own thread so control messages on the
//! same connection are answered while it computes.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::{json, Value};
use wsdo_core::nhatc::{solve_node, NodeInput, NodeSolution, ALL_KINDS};

use crate::wire::{read_message, write_message, MessageType, WireMessage};
use crate::{NetError, Result};

pub type Solver = Arc<dyn Fn(&NodeInput) -> wsdo_core::Result<NodeSolution> + Send + Sync>;

#[derive(Clone)]
pub struct WorkerConfig {
    pub capabilities: Vec<String>,
    pub solver: Solver,
    /// Fault injection: the worker drops every connection and stops when a
    /// SOLVE arrives after this many have been accepted.
    pub fail_after: Option<usize>,
}

impl WorkerConfig {
    pub fn new(capabilities: Vec<String>) -> Self {
        Self { capabilities, solver: Arc::new(solve_node), fail_after: None }
    }

    pub fn all_kinds() -> Self {
        Self::new(ALL_KINDS.iter().map(|s| s.to_string()).collect())
    }

    pub fn with_solver(mut self, solver: Solver) -> Self {
        self.solver = solver;
        self
    }

    pub fn fail_after(mut self, n: Option<usize>) -> Self {
        self.fail_after = n;
        self
    }
}

impl std::fmt::Debug for WorkerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerConfig")
            .field("capabilities", &self.capabilities)
            .field("fail_after", &self.fail_after)
            .finish_non_exhaustive()
    }
}

#[derive(Default)]
struct Shared {
    stop: AtomicBool,
    killed: AtomicBool,
    solves: AtomicUsize,
    next_conn: AtomicUsize,
    conns: Mutex<BTreeMap<usize, TcpStream>>,
}

impl Shared {
    fn close_all(&self) {
        let conns = std::mem::take(&mut *self.conns.lock().expect("connection list lock"));
        for c in conns.values() {
            let _ = c.shutdown(Shutdown::Both);
        }
    }

    fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
        self.stop.store(true, Ordering::SeqCst);
        self.close_all();
    }
}

/// Outgoing half of a connection; ids increase with every message sent.
struct Outbox {
    stream: TcpStream,
    next_id: u64,
}

impl Outbox {
    fn send(&mut self, kind: MessageType, payload: Value) -> Result<()> {
        self.next_id += 1;
        write_message(&mut self.stream, &WireMessage::new(kind, self.next_id, payload))
    }
}

fn send(out: &Mutex<Outbox>, kind: MessageType, payload: Value) -> Result<()> {
    out.lock().map_err(|_| NetError::Protocol("writer lock poisoned".into()))?.send(kind, payload)
}

fn error_payload(reply_to: Option<u64>, kind: &str, message: impl Into<String>) -> Value {
    json!({ "in_reply_to": reply_to, "kind": kind, "message": message.into() })
}

pub struct WorkerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl WorkerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Drops every connection at once, as a crashed process would.
    pub fn kill(&mut self) {
        self.shared.kill();
        self.join_thread();
    }

    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.close_all();
        self.join_thread();
    }

    pub fn join(mut self) -> Result<()> {
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| NetError::Protocol("worker thread panicked".into()))?,
            None => Ok(()),
        }
    }

    fn join_thread(&mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `addr` and serves on a background thread.
pub fn spawn_worker(addr: impl ToSocketAddrs, config: WorkerConfig) -> Result<WorkerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let shared = Arc::new(Shared::default());
    let s = Arc::clone(&shared);
    let thread = thread::spawn(move || serve(listener, config, s));
    Ok(WorkerHandle { addr: local, shared, thread: Some(thread) })
}

/// Serves until a SHUTDOWN arrives. Returns `NetError::Killed` when the
/// fault-injection limit fired.
pub fn worker_serve(listener: TcpListener, config: WorkerConfig) -> Result<()> {
    serve(listener, config, Arc::new(Shared::default()))
}

fn serve(listener: TcpListener, config: WorkerConfig, shared: Arc<Shared>) -> Result<()> {
    listener.set_nonblocking(true)?;
    log::info!("worker listening on {}", listener.local_addr()?);
    let mut handlers = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                let _ = stream.set_nodelay(true);
                let key = shared.next_conn.fetch_add(1, Ordering::SeqCst);
                shared.conns.lock().expect("connection list lock").insert(key, stream.try_clone()?);
                let (cfg, sh) = (config.clone(), Arc::clone(&shared));
                handlers.push(thread::spawn(move || {
                    if let Err(e) = connection(stream, &cfg, &sh) {
                        log::debug!("connection from {peer} ended: {e}");
                    }
                    if let Some(c) = sh.conns.lock().expect("connection list lock").remove(&key) {
                        let _ = c.shutdown(Shutdown::Both);
                    }
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(e.into()),
        }
    }
    shared.close_all();
    for h in handlers {
        let _ = h.join();
    }
    if shared.killed.load(Ordering::SeqCst) {
        Err(NetError::Killed)
    } else {
        Ok(())
    }
}

fn connection(stream: TcpStream, config: &WorkerConfig, shared: &Arc<Shared>) -> Result<()> {
    let mut reader = stream.try_clone()?;
    let out = Arc::new(Mutex::new(Outbox { stream, next_id: 0 }));
    let busy = Arc::new(AtomicBool::new(false));
    let mut last_id = None;
    loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(e @ (NetError::Protocol(_) | NetError::Framing(_))) => {
                let _ = send(&out, MessageType::Error, error_payload(None, "protocol", e.to_string()));
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if last_id.is_some_and(|l| msg.msg_id <= l) {
            let _ = send(&out, MessageType::Error, error_payload(Some(msg.msg_id), "protocol", "message ids must increase"));
            return Err(NetError::Protocol("non-increasing message id".into()));
        }
        last_id = Some(msg.msg_id);
        let id = Some(msg.msg_id);
        match msg.kind {
            MessageType::Hello => {
                send(&out, MessageType::Hello, json!({ "in_reply_to": id, "capabilities": config.capabilities }))?;
            }
            MessageType::Ping => send(&out, MessageType::Pong, json!({ "in_reply_to": id }))?,
            MessageType::Shutdown => {
                shared.stop.store(true, Ordering::SeqCst);
                return Ok(());
            }
            MessageType::Solve => {
                let input: NodeInput = match serde_json::from_value(msg.payload) {
                    Ok(i) => i,
                    Err(e) => {
                        send(&out, MessageType::Error, error_payload(id, "protocol", format!("bad SOLVE payload: {e}")))?;
                        continue;
                    }
                };
                let kind = input.problem.kind();
                if !config.capabilities.iter().any(|c| c == kind) {
                    send(&out, MessageType::Error, error_payload(id, "capability", format!("this worker cannot solve {kind} nodes")))?;
                    continue;
                }
                if busy.swap(true, Ordering::SeqCst) {
                    send(&out, MessageType::Error, error_payload(id, "busy", "a SOLVE is already running on this connection"))?;
                    continue;
                }
                let accepted = shared.solves.fetch_add(1, Ordering::SeqCst);
                if config.fail_after.is_some_and(|n| accepted >= n) {
                    log::warn!("fault injection: dropping all connections");
                    shared.kill();
                    return Err(NetError::Killed);
                }
                let (out, busy, solver) = (Arc::clone(&out), Arc::clone(&busy), Arc::clone(&config.solver));
                thread::spawn(move || {
                    let reply = match catch_unwind(AssertUnwindSafe(|| solver(&input))) {
                        Ok(Ok(sol)) => match serde_json::to_value(&sol) {
                            Ok(v) => (MessageType::Result, json!({ "in_reply_to": id, "solution": v })),
                            Err(e) => (MessageType::Error, error_payload(id, "solver", e.to_string())),
                        },
                        Ok(Err(e)) => (MessageType::Error, error_payload(id, "solver", e.to_string())),
                        Err(_) => (MessageType::Error, error_payload(id, "solver", "solver panicked")),
                    };
                    busy.store(false, Ordering::SeqCst);
                    if let Err(e) = send(&out, reply.0, reply.1) {
                        log::debug!("could not deliver a solve reply: {e}");
                    }
                });
            }
            other => {
                send(&out, MessageType::Error, error_payload(id, "protocol", format!("unexpected {other:?} from a coordinator")))?;
            }
        }
    }
}
