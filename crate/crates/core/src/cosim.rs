//! TCP co-simulation bridge. A client exchanges 32-bit words with a design
//! that has one `pipeline_in` and one `pipeline_out` stream port.
//!
//! Wire format, all little-endian: a batch is a `u32` word count followed by
//! that many `u32` words. Every request batch is answered by exactly one reply
//! batch holding the words the design emitted while consuming it. A count of
//! zero is a keep-alive and gets an empty reply without advancing time.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::corpus::{StreamHarness, WordLog, WordQueue, WordSink, WordSource};
use crate::design::{BundleKind, Design, Entity, Port, Scope};
use crate::error::{Error, Result};
use crate::signals::{StreamRole, TypeDesc};
use crate::sim::{SimConfig, Simulator};

pub const DEFAULT_PORT: u16 = 7777;

/// Cycles without new output after the input queue ran dry before a batch
/// is considered complete.
pub const DRAIN_WINDOW: u64 = 64;

struct Shared<E>(Arc<E>);

impl<E: Entity + Sync> Entity for Shared<E> {
    fn type_name(&self) -> String {
        self.0.type_name()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        self.0.ports(p)
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        self.0.architecture(a)
    }
}

fn setup(msg: impl Into<String>) -> Error {
    Error::Setup(msg.into())
}

/// Checks that the top of `d` has exactly one 32-bit pipeline input and output.
fn check_ports(d: &Design) -> Result<()> {
    let top = d.top()?;
    let path = d.entity_path(top);
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for port in &d.entity(top).ports {
        let Port::Interface { bundle, name } = port else {
            continue;
        };
        let b = d.bundle(*bundle);
        let BundleKind::Port { stream, .. } = b.kind else {
            continue;
        };
        match stream {
            StreamRole::PipelineIn => ins.push((name.clone(), b.iface)),
            StreamRole::PipelineOut => outs.push((name.clone(), b.iface)),
            StreamRole::None => {}
        }
    }
    if ins.len() != 1 || outs.len() != 1 {
        return Err(setup(format!(
            "{path}: expected one pipeline_in and one pipeline_out, found {} and {}",
            ins.len(),
            outs.len()
        )));
    }
    for (name, iface) in ins.iter().chain(&outs) {
        let class = d.classes.interface(*iface);
        let data = class
            .members
            .iter()
            .find(|m| m.name == "data")
            .ok_or_else(|| setup(format!("{path}.{name}: interface {} has no data member", class.name)))?;
        if data.ty != TypeDesc::Vector(32) {
            return Err(setup(format!(
                "{path}.{name}: stream data is {} bits wide, the bridge carries 32",
                data.ty.width()
            )));
        }
    }
    Ok(())
}

/// A simulated design wired between a host word queue and a host word log.
/// Time only moves inside [`Session::exchange`].
pub struct Session {
    sim: Simulator,
    queue: WordQueue,
    log: WordLog,
    taken: usize,
    sent: u64,
}

impl Session {
    pub fn new<E: Entity + Sync>(dut: E) -> Result<Session> {
        let dut = Arc::new(dut);
        check_ports(&Design::declare(Shared(dut.clone()))?)?;
        let queue: WordQueue = Arc::new(Mutex::new(VecDeque::new()));
        let log: WordLog = Arc::new(Mutex::new(Vec::new()));
        let harness = StreamHarness::new(
            Shared(dut),
            WordSource {
                words: queue.clone(),
                valid_prob: 1.0,
                seed: 0,
            },
            WordSink {
                log: log.clone(),
                ready_prob: 1.0,
                seed: 0,
            },
        );
        let d = Design::elaborate(harness)?;
        let sim = Simulator::new(d, SimConfig::default())?;
        Ok(Session {
            sim,
            queue,
            log,
            taken: 0,
            sent: 0,
        })
    }

    fn queued(&self) -> usize {
        self.queue.lock().expect("word queue").len()
    }

    fn logged(&self) -> usize {
        self.log.lock().expect("word log").len()
    }

    /// Feeds `words` to the design and returns what it emitted meanwhile.
    pub fn exchange(&mut self, words: &[u32]) -> Result<Vec<u32>> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        self.queue.lock().expect("word queue").extend(words.iter().copied());
        self.sent += words.len() as u64;
        let mut idle = 0;
        loop {
            let before = self.logged();
            self.sim.run_cycles(1)?;
            let after = self.logged();
            if self.queued() > 0 {
                continue;
            }
            if after as u64 >= self.sent {
                break;
            }
            idle = if after > before { 0 } else { idle + 1 };
            if idle >= DRAIN_WINDOW {
                break;
            }
        }
        let log = self.log.lock().expect("word log");
        let out = log[self.taken..].to_vec();
        self.taken = log.len();
        Ok(out)
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }
}

enum Command {
    Exchange(Vec<u32>, mpsc::Sender<Result<Vec<u32>>>),
}

/// A running bridge: a simulation thread fed through a command channel and
/// a listener thread serving one TCP client at a time.
pub struct Bridge {
    tx: Option<mpsc::Sender<Command>>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim_thread: Option<JoinHandle<()>>,
    accept_thread: Option<JoinHandle<()>>,
}

/// Starts a bridge around `dut`, listening on `addr` (port 0 picks a free port).
pub fn serve<E: Entity + Sync>(dut: E, addr: impl ToSocketAddrs) -> Result<Bridge> {
    let session = Session::new(dut)?;
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = mpsc::channel::<Command>();
    let sim_thread = thread::spawn(move || {
        let mut session = session;
        for cmd in rx {
            match cmd {
                Command::Exchange(words, reply) => {
                    let _ = reply.send(session.exchange(&words));
                }
            }
        }
    });
    let stop = Arc::new(AtomicBool::new(false));
    let accept_tx = tx.clone();
    let accept_stop = stop.clone();
    let accept_thread = thread::spawn(move || accept_loop(listener, accept_tx, accept_stop));
    Ok(Bridge {
        tx: Some(tx),
        addr: local,
        stop,
        sim_thread: Some(sim_thread),
        accept_thread: Some(accept_thread),
    })
}

fn accept_loop(listener: TcpListener, tx: mpsc::Sender<Command>, stop: Arc<AtomicBool>) {
    let busy = Arc::new(AtomicBool::new(false));
    let mut clients = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if busy.swap(true, Ordering::SeqCst) {
                    let _ = stream.shutdown(Shutdown::Both);
                    continue;
                }
                let (tx, busy, stop) = (tx.clone(), busy.clone(), stop.clone());
                clients.push(thread::spawn(move || {
                    let _ = client_loop(stream, &tx, &stop);
                    busy.store(false, Ordering::SeqCst);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(Duration::from_millis(2)),
        }
    }
    for c in clients {
        let _ = c.join();
    }
}

/// Splits complete batches off the front of `buf`.
pub fn take_batches(buf: &mut Vec<u8>) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while buf.len() - pos >= 4 {
        let count = u32::from_le_bytes(buf[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let end = pos + 4 + count * 4;
        if buf.len() < end {
            break;
        }
        let words = buf[pos + 4..end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(words);
        pos = end;
    }
    buf.drain(..pos);
    out
}

/// Encodes one batch.
pub fn encode_batch(words: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * words.len());
    out.extend_from_slice(&(words.len() as u32).to_le_bytes());
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

fn client_loop(mut stream: TcpStream, tx: &mpsc::Sender<Command>, stop: &AtomicBool) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    while !stop.load(Ordering::SeqCst) {
        let n = match stream.read(&mut chunk) {
            Ok(0) => return Ok(()),
            Ok(n) => n,
            Err(e)
                if matches!(
                    e.kind(),
                    ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                ) =>
            {
                continue
            }
            Err(e) => return Err(e.into()),
        };
        buf.extend_from_slice(&chunk[..n]);
        for batch in take_batches(&mut buf) {
            let reply = exchange(tx, batch)?;
            stream.write_all(&encode_batch(&reply))?;
        }
    }
    Ok(())
}

fn exchange(tx: &mpsc::Sender<Command>, words: Vec<u32>) -> Result<Vec<u32>> {
    let (reply_tx, reply_rx) = mpsc::channel();
    tx.send(Command::Exchange(words, reply_tx))
        .map_err(|_| Error::State("bridge simulation thread has stopped".into()))?;
    reply_rx
        .recv()
        .map_err(|_| Error::State("bridge simulation thread has stopped".into()))?
}

impl Bridge {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_running(&self) -> bool {
        self.tx.is_some()
    }

    /// Same path as a socket batch, minus the socket.
    pub fn drive_words(&self, words: &[u32]) -> Result<Vec<u32>> {
        let tx = self
            .tx
            .as_ref()
            .ok_or_else(|| Error::State("bridge is stopped".into()))?;
        exchange(tx, words.to_vec())
    }

    /// Stops accepting, ends the client session and joins all threads.
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        self.tx = None;
        if let Some(t) = self.sim_thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the listener thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn drive_words(bridge: &Bridge, words: &[u32]) -> Result<Vec<u32>> {
    bridge.drive_words(words)
}

/// Minimal blocking client for the wire format.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client { stream })
    }

    pub fn send(&mut self, words: &[u32]) -> Result<()> {
        self.stream.write_all(&encode_batch(words))?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Vec<u32>> {
        let mut head = [0u8; 4];
        self.stream.read_exact(&mut head)?;
        let count = u32::from_le_bytes(head) as usize;
        let mut body = vec![0u8; count * 4];
        self.stream.read_exact(&mut body)?;
        Ok(body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn exchange(&mut self, words: &[u32]) -> Result<Vec<u32>> {
        self.send(words)?;
        self.recv()
    }

    pub fn stream(&mut self) -> &mut TcpStream {
        &mut self.stream
    }
}
