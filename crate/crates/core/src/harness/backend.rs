//! Backends that fan ranked-list construction out to workers and merge
//! nothing themselves: results always come back in worker-index order.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::acquisition::RankedList;
use crate::engine::snapshot::{PosteriorPayload, PreparedSnapshot};
use crate::error::{Error, Result};
use crate::pool::{Library, PoolView};

use super::wire::{
    read_frame, write_frame, EvalResultPayload, EvaluatePayload, MessageKind, PoolPayload, ProposePayload,
    RankedListPayload, SnapshotPayload, WireMessage, ErrorPayload,
};

/// Everything a Thompson worker needs for one round.
pub struct ProposeRequest<'a> {
    pub t: usize,
    pub snapshot: &'a PreparedSnapshot,
    pub view: &'a PoolView,
    pub batch_size: usize,
    /// One seed per worker; worker `s` uses `seeds[s]`.
    pub seeds: &'a [u64],
}

pub trait ProposalBackend: Send {
    fn name(&self) -> String;

    /// One ranked list per seed, in worker order.
    fn propose(&mut self, req: &ProposeRequest<'_>) -> Result<Vec<RankedList>>;

    /// Raw target values for `(worker, index)` jobs, in job order.
    fn evaluate(&mut self, t: usize, jobs: &[(usize, usize)], library: &Library) -> Result<Vec<f64>>;

    /// Called before each campaign; remote workers are re-sent the pool.
    fn reset(&mut self) {}

    fn shutdown(&mut self) -> Result<()> {
        Ok(())
    }
}

fn local_evaluate(jobs: &[(usize, usize)], library: &Library) -> Result<Vec<f64>> {
    jobs.iter()
        .map(|&(s, i)| {
            library.targets().get(i).copied().ok_or_else(|| Error::Worker {
                worker: s,
                message: format!("candidate {i} outside pool"),
            })
        })
        .collect()
}

fn rank_one(req: &ProposeRequest<'_>, s: usize) -> Result<RankedList> {
    req.snapshot
        .ranked_list(req.view, req.batch_size, req.seeds[s])
        .map_err(|e| match e {
            Error::PoolExhausted => e,
            other => Error::Worker { worker: s, message: other.to_string() },
        })
}

/// All workers run one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct SerialBackend;

impl ProposalBackend for SerialBackend {
    fn name(&self) -> String {
        "serial".into()
    }

    fn propose(&mut self, req: &ProposeRequest<'_>) -> Result<Vec<RankedList>> {
        (0..req.seeds.len()).map(|s| rank_one(req, s)).collect()
    }

    fn evaluate(&mut self, _t: usize, jobs: &[(usize, usize)], library: &Library) -> Result<Vec<f64>> {
        local_evaluate(jobs, library)
    }
}

/// Worker `s` runs on thread `s % threads`.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedBackend {
    threads: usize,
}

impl ThreadedBackend {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::InvalidConfig("thread count must be >= 1".into()));
        }
        Ok(Self { threads })
    }
}

impl ProposalBackend for ThreadedBackend {
    fn name(&self) -> String {
        format!("threaded({})", self.threads)
    }

    fn propose(&mut self, req: &ProposeRequest<'_>) -> Result<Vec<RankedList>> {
        let workers = req.seeds.len();
        let threads = self.threads.min(workers).max(1);
        let per_thread: Vec<Vec<(usize, Result<RankedList>)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|th| {
                    scope.spawn(move || {
                        (th..workers).step_by(threads).map(|s| (s, rank_one(req, s))).collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("proposal thread panicked"))
                .collect()
        });
        let mut slots: Vec<Option<Result<RankedList>>> = (0..workers).map(|_| None).collect();
        for (s, r) in per_thread.into_iter().flatten() {
            slots[s] = Some(r);
        }
        slots.into_iter().map(|r| r.expect("every worker ran")).collect()
    }

    fn evaluate(&mut self, _t: usize, jobs: &[(usize, usize)], library: &Library) -> Result<Vec<f64>> {
        local_evaluate(jobs, library)
    }
}

struct Connection {
    addr: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    pool_sent: bool,
}

impl Connection {
    fn send(&mut self, msg: &WireMessage) -> std::result::Result<(), String> {
        write_frame(&mut self.writer, msg).map_err(|e| format!("{}: {e}", self.addr))
    }

    fn flush(&mut self) -> std::result::Result<(), String> {
        self.writer.flush().map_err(|e| format!("{}: {e}", self.addr))
    }

    fn recv(&mut self, kind: MessageKind, t: usize, s: usize) -> std::result::Result<WireMessage, String> {
        let msg = match read_frame(&mut self.reader) {
            Ok(Some(m)) => m,
            Ok(None) => return Err(format!("{}: connection closed", self.addr)),
            Err(e) => return Err(format!("{}: {e}", self.addr)),
        };
        if msg.kind == MessageKind::Error {
            let detail = msg.payload::<ErrorPayload>().map(|p| p.message).unwrap_or_default();
            return Err(format!("{} reported: {detail}", self.addr));
        }
        if msg.kind != kind || msg.t != t as u64 || msg.s != s as u64 {
            return Err(format!(
                "{}: expected {kind:?} for (t={t}, s={s}), got {:?} for (t={}, s={})",
                self.addr, msg.kind, msg.t, msg.s
            ));
        }
        Ok(msg)
    }
}

/// Remote workers over TCP; worker `s` is served by connection `s % n`.
pub struct SocketBackend {
    conns: Vec<Connection>,
}

impl SocketBackend {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    pub fn connect(addrs: &[String], timeout: Duration) -> Result<Self> {
        if addrs.is_empty() {
            return Err(Error::InvalidConfig("socket backend needs at least one worker address".into()));
        }
        let mut conns = Vec::with_capacity(addrs.len());
        for (k, addr) in addrs.iter().enumerate() {
            let fail = |e: std::io::Error| Error::Worker { worker: k, message: format!("{addr}: {e}") };
            let sock = addr
                .to_socket_addrs()
                .map_err(fail)?
                .next()
                .ok_or_else(|| Error::Worker { worker: k, message: format!("{addr}: no address") })?;
            let stream = TcpStream::connect_timeout(&sock, timeout).map_err(fail)?;
            stream.set_read_timeout(Some(timeout)).map_err(fail)?;
            stream.set_write_timeout(Some(timeout)).map_err(fail)?;
            stream.set_nodelay(true).map_err(fail)?;
            conns.push(Connection {
                addr: addr.clone(),
                reader: BufReader::new(stream.try_clone().map_err(fail)?),
                writer: BufWriter::new(stream),
                pool_sent: false,
            });
        }
        Ok(Self { conns })
    }

    fn conn_for(&self, s: usize) -> usize {
        s % self.conns.len()
    }

    fn send_snapshot(
        &mut self,
        c: usize,
        t: usize,
        posterior: Option<&PosteriorPayload>,
        evaluated: &[usize],
        library: &Library,
    ) -> Result<()> {
        let conn = &mut self.conns[c];
        let pool = (!conn.pool_sent).then(|| PoolPayload::from_library(library));
        let payload = SnapshotPayload { posterior: posterior.cloned(), evaluated: evaluated.to_vec(), pool };
        let msg = WireMessage::new(MessageKind::Snapshot, t as u64, c as u64, &payload)?;
        conn.send(&msg).map_err(|message| Error::Worker { worker: c, message })?;
        conn.pool_sent = true;
        Ok(())
    }
}

impl ProposalBackend for SocketBackend {
    fn name(&self) -> String {
        format!("socket({})", self.conns.len())
    }

    fn propose(&mut self, req: &ProposeRequest<'_>) -> Result<Vec<RankedList>> {
        let posterior = PosteriorPayload::from(req.snapshot.posterior());
        let evaluated: Vec<usize> = (0..req.view.len()).filter(|&i| req.view.is_evaluated(i)).collect();
        let library = req.view.library();
        let workers = req.seeds.len();
        let used = self.conns.len().min(workers);
        for c in 0..used {
            self.send_snapshot(c, req.t, Some(&posterior), &evaluated, library)?;
        }
        for (s, &seed) in req.seeds.iter().enumerate() {
            let c = self.conn_for(s);
            let msg = WireMessage::new(
                MessageKind::Propose,
                req.t as u64,
                s as u64,
                &ProposePayload { seed, batch_size: req.batch_size },
            )?;
            self.conns[c].send(&msg).map_err(|message| Error::Worker { worker: s, message })?;
        }
        for c in 0..used {
            self.conns[c].flush().map_err(|message| Error::Worker { worker: c, message })?;
        }
        let mut out = Vec::with_capacity(workers);
        for s in 0..workers {
            let c = self.conn_for(s);
            let reply = self.conns[c]
                .recv(MessageKind::RankedList, req.t, s)
                .map_err(|message| Error::Worker { worker: s, message })?;
            let p: RankedListPayload = reply.payload()?;
            out.push(RankedList { indices: p.indices, short: p.short });
        }
        Ok(out)
    }

    fn evaluate(&mut self, t: usize, jobs: &[(usize, usize)], library: &Library) -> Result<Vec<f64>> {
        for c in 0..self.conns.len() {
            let needed = jobs.iter().any(|&(s, _)| self.conn_for(s) == c);
            if needed && !self.conns[c].pool_sent {
                self.send_snapshot(c, t, None, &[], library)?;
            }
        }
        for &(s, index) in jobs {
            let c = self.conn_for(s);
            let msg = WireMessage::new(MessageKind::Evaluate, t as u64, s as u64, &EvaluatePayload { index })?;
            self.conns[c].send(&msg).map_err(|message| Error::Worker { worker: s, message })?;
        }
        for c in 0..self.conns.len() {
            self.conns[c].flush().map_err(|message| Error::Worker { worker: c, message })?;
        }
        let mut values = Vec::with_capacity(jobs.len());
        for &(s, index) in jobs {
            let c = self.conn_for(s);
            let reply = self.conns[c]
                .recv(MessageKind::EvalResult, t, s)
                .map_err(|message| Error::Worker { worker: s, message })?;
            let p: EvalResultPayload = reply.payload()?;
            if p.index != index {
                return Err(Error::Worker { worker: s, message: format!("evaluated {} instead of {index}", p.index) });
            }
            values.push(p.value);
        }
        Ok(values)
    }

    fn reset(&mut self) {
        self.conns.iter_mut().for_each(|c| c.pool_sent = false);
    }

    fn shutdown(&mut self) -> Result<()> {
        for (c, conn) in self.conns.iter_mut().enumerate() {
            let fail = |message| Error::Worker { worker: c, message };
            conn.send(&WireMessage::bare(MessageKind::Shutdown, 0, c as u64)).map_err(fail)?;
            conn.flush().map_err(fail)?;
        }
        Ok(())
    }
}

/// Backend selection as written in experiment specs.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BackendKind {
    #[default]
    Serial,
    Threaded { threads: usize },
    Socket { addresses: Vec<String>, #[serde(default = "default_timeout_secs")] timeout_secs: u64 },
}

fn default_timeout_secs() -> u64 {
    SocketBackend::DEFAULT_TIMEOUT.as_secs()
}

impl BackendKind {
    pub fn build(&self) -> Result<Box<dyn ProposalBackend>> {
        Ok(match self {
            BackendKind::Serial => Box::new(SerialBackend),
            BackendKind::Threaded { threads } => Box::new(ThreadedBackend::new(*threads)?),
            BackendKind::Socket { addresses, timeout_secs } => {
                Box::new(SocketBackend::connect(addresses, Duration::from_secs(*timeout_secs))?)
            }
        })
    }
}
