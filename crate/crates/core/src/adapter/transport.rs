//! Request/response transports.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{Request, Response};
use super::AdapterError;

pub trait Transport: Send + Sync {
    /// Sends one request and waits for the reply carrying the same id.
    fn call(&self, request: &Request, timeout: Duration) -> Result<Response, AdapterError>;
}

/// Counting semaphore bounding requests in flight.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self, deadline: Instant) -> Option<SlotGuard<'_>> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            free = self.cv.wait_timeout(free, deadline - now).unwrap().0;
        }
        *free -= 1;
        Some(SlotGuard(self))
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

type Reply = Result<Response, AdapterError>;

#[derive(Default)]
struct Pending {
    waiting: HashMap<u64, Sender<Reply>>,
    closed: Option<String>,
}

impl Pending {
    fn fail_all(&mut self, err: impl Fn() -> AdapterError) {
        for (_, tx) in self.waiting.drain() {
            let _ = tx.send(Err(err()));
        }
    }
}

/// Newline-delimited JSON over a byte stream pair. A reader thread routes
/// replies to callers by id, so several requests may be pipelined.
pub struct StreamTransport {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Arc<Mutex<Pending>>,
    slots: Slots,
}

impl StreamTransport {
    pub fn new<R, W>(reader: R, writer: W, max_in_flight: usize) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let pending = Arc::new(Mutex::new(Pending::default()));
        let shared = Arc::clone(&pending);
        thread::spawn(move || read_loop(reader, &shared));
        Self { writer: Mutex::new(Box::new(writer)), pending, slots: Slots::new(max_in_flight) }
    }
}

fn read_loop<R: BufRead>(mut reader: R, pending: &Mutex<Pending>) {
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => {
                let mut p = pending.lock().unwrap();
                p.closed = Some("adapter closed its output".into());
                p.fail_all(|| AdapterError::Transport("adapter closed its output".into()));
                return;
            }
            Ok(_) => {}
            Err(e) => {
                let msg = format!("read failed: {e}");
                let mut p = pending.lock().unwrap();
                p.closed = Some(msg.clone());
                p.fail_all(|| AdapterError::Transport(msg.clone()));
                return;
            }
        }
        if line.trim().is_empty() {
            continue;
        }
        route(line.trim_end(), pending);
    }
}

fn route(line: &str, pending: &Mutex<Pending>) {
    let mut p = pending.lock().unwrap();
    let response: Response = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("malformed reply: {e}");
            log::warn!("{msg}");
            p.fail_all(|| AdapterError::Protocol(msg.clone()));
            return;
        }
    };
    let Some(id) = response.id else {
        // Cannot be attributed; every outstanding request is suspect.
        log::warn!("reply without id");
        p.fail_all(|| AdapterError::Protocol("reply without id".into()));
        return;
    };
    match p.waiting.remove(&id) {
        Some(tx) => {
            let _ = tx.send(Ok(response));
        }
        None => log::warn!("discarding reply for unknown or expired request {id}"),
    }
}

impl Transport for StreamTransport {
    fn call(&self, request: &Request, timeout: Duration) -> Result<Response, AdapterError> {
        let deadline = Instant::now() + timeout;
        let _slot = self.slots.acquire(deadline).ok_or(AdapterError::Timeout(timeout))?;
        let (tx, rx) = mpsc::channel();
        {
            let mut p = self.pending.lock().unwrap();
            if let Some(reason) = &p.closed {
                return Err(AdapterError::Transport(reason.clone()));
            }
            if p.waiting.insert(request.id, tx).is_some() {
                return Err(AdapterError::Protocol(format!("duplicate request id {}", request.id)));
            }
        }
        let mut line = serde_json::to_vec(request).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        line.push(b'\n');
        let written = {
            let mut w = self.writer.lock().unwrap();
            w.write_all(&line).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            self.pending.lock().unwrap().waiting.remove(&request.id);
            return Err(AdapterError::Transport(format!("write failed: {e}")));
        }
        let wait = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().waiting.remove(&request.id);
                // The reply may have raced in between.
                rx.try_recv().unwrap_or(Err(AdapterError::Timeout(timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(AdapterError::Transport("reader stopped".into())),
        }
    }
}

/// A sidecar process speaking the protocol on stdin/stdout.
/// The child is killed when the transport is dropped.
pub struct SubprocessTransport {
    child: Mutex<Child>,
    stream: StreamTransport,
}

impl SubprocessTransport {
    pub fn spawn(command: &[String], max_in_flight: usize) -> Result<Self, AdapterError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| AdapterError::InvalidEndpoint("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::Transport(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stream = StreamTransport::new(BufReader::new(stdout), stdin, max_in_flight);
        Ok(Self { child: Mutex::new(child), stream })
    }
}

impl Transport for SubprocessTransport {
    fn call(&self, request: &Request, timeout: Duration) -> Result<Response, AdapterError> {
        self.stream.call(request, timeout)
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        let mut child = self.child.lock().unwrap();
        let _ = child.kill();
        let _ = child.wait();
    }
}

/// One JSON request per POST; the reply is the response body.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
    slots: Slots,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.into(), agent, slots: Slots::new(max_in_flight) }
    }
}

impl Transport for HttpTransport {
    fn call(&self, request: &Request, timeout: Duration) -> Result<Response, AdapterError> {
        let _slot = self.slots.acquire(Instant::now() + timeout).ok_or(AdapterError::Timeout(timeout))?;
        let body = serde_json::to_string(request).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        let text = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => AdapterError::Timeout(timeout),
                other => AdapterError::Transport(other.to_string()),
            })?;
        let response: Response =
            serde_json::from_str(&text).map_err(|e| AdapterError::Protocol(format!("malformed reply: {e}")))?;
        match response.id {
            None => Err(AdapterError::Protocol("reply without id".into())),
            Some(id) if id != request.id => {
                Err(AdapterError::Protocol(format!("reply id {id} does not match request {}", request.id)))
            }
            Some(_) => Ok(response),
        }
    }
}
