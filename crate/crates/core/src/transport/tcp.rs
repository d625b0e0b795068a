//! TCP transport for cluster mode.
//!
//! Each worker holds one connection to the master and a lazily grown cache
//! of peer endpoints, one per remote worker. In MASTER_RELAY mode every
//! user message goes to the master for forwarding; in P2P mode the first
//! send toward an uncontacted worker performs exactly one ADDR_REQ lookup,
//! dials the worker, and caches the endpoint so later sends to any rank on
//! that worker reuse it. The cache only grows; connections are never torn
//! down mid-job.

use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex, Weak};
use std::thread;
use std::time::Duration;

use crate::mailbox::Mailbox;
use crate::transport::{FrameCounters, Transport, TransportError};
use crate::wire::{
    self, Envelope, FrameKind, Hello, JobSpec, RankMapEntry, RoutingMode, WireError,
};

/// How long control exchanges (address lookup, context allocation) wait for
/// the master before failing.
const CONTROL_TIMEOUT: Duration = Duration::from_secs(30);
/// Dial attempts per connection before surfacing a transport failure.
const CONNECT_ATTEMPTS: u32 = 3;
const CONNECT_RETRY_DELAY: Duration = Duration::from_millis(100);

/// Control traffic the worker's event loop must act on.
#[derive(Debug)]
pub enum WorkerEvent {
    Task(JobSpec),
    JobDone(u64),
    Shutdown,
    MasterLost(String),
}

enum ControlReply {
    Addr(RankMapEntry),
    Ctx { first_id: u64, count: u32 },
}

/// Per-job routing state installed by the worker when a task arrives.
pub(crate) struct JobRouting {
    pub world_size: u32,
    pub routing: RoutingMode,
    /// World rank -> hosting worker id, from the job's rank map.
    pub rank_worker: Vec<u64>,
    /// Mailboxes for the ranks this worker hosts.
    pub mailboxes: HashMap<u32, Arc<Mailbox>>,
}

struct RouterState {
    job: Option<JobRouting>,
    /// Envelopes that arrived before the local task assignment; drained
    /// in arrival order when the job is installed.
    early: Vec<Envelope>,
}

struct PeerEndpoint {
    write: Mutex<TcpStream>,
}

/// One slot per remote worker; the slot's own lock serializes resolution so
/// concurrent senders trigger a single ADDR_REQ.
#[derive(Default)]
struct PeerSlot(Mutex<Option<Arc<PeerEndpoint>>>);

struct MasterLink {
    write: Mutex<TcpStream>,
    /// Holding the receiver is holding the control channel: one
    /// request/reply exchange at a time.
    control: Mutex<mpsc::Receiver<ControlReply>>,
}

/// Worker-side TCP transport.
pub struct TcpTransport {
    worker_id: u64,
    announced: (String, u16),
    master: MasterLink,
    peers: Mutex<HashMap<u64, Arc<PeerSlot>>>,
    router: Mutex<RouterState>,
    counters: FrameCounters,
    events: mpsc::Sender<WorkerEvent>,
    stop: AtomicBool,
    weak: Weak<TcpTransport>,
}

fn failure(err: impl ToString) -> TransportError {
    TransportError::Failure(err.to_string())
}

fn connect_retry(addr: &str) -> Result<TcpStream, TransportError> {
    let mut last: Option<io::Error> = None;
    for attempt in 0..CONNECT_ATTEMPTS {
        if attempt > 0 {
            thread::sleep(CONNECT_RETRY_DELAY);
        }
        match TcpStream::connect(addr) {
            Ok(stream) => {
                stream.set_nodelay(true).ok();
                return Ok(stream);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(TransportError::Failure(format!(
        "failed to connect to {addr} after {CONNECT_ATTEMPTS} attempts: {}",
        last.expect("at least one attempt")
    )))
}

fn announced_host(addr: SocketAddr) -> String {
    if addr.ip().is_unspecified() {
        "127.0.0.1".to_string()
    } else {
        addr.ip().to_string()
    }
}

impl TcpTransport {
    /// Bind a peer listener, perform the HELLO handshake with the master,
    /// and start the reader threads.
    pub fn connect(
        master_addr: &str,
        listen_addr: &str,
        events: mpsc::Sender<WorkerEvent>,
    ) -> Result<Arc<TcpTransport>, TransportError> {
        let listener = TcpListener::bind(listen_addr).map_err(failure)?;
        let local = listener.local_addr().map_err(failure)?;
        let announced = (announced_host(local), local.port());

        let counters = FrameCounters::new();
        let mut stream = connect_retry(master_addr)?;
        let hello = Hello {
            worker_id: 0,
            host: announced.0.clone(),
            port: announced.1,
        };
        counters.record_sent(FrameKind::Hello);
        wire::write_frame_to(&mut stream, FrameKind::Hello, &hello.encode()).map_err(failure)?;
        let (kind, body) = wire::read_frame(&mut stream).map_err(failure)?;
        if kind != FrameKind::Hello {
            return Err(TransportError::Failure(format!(
                "expected HELLO reply from master, got {kind}"
            )));
        }
        let reply = Hello::decode(&body).map_err(failure)?;

        let (ctl_tx, ctl_rx) = mpsc::channel();
        let read_half = stream.try_clone().map_err(failure)?;
        let transport = Arc::new_cyclic(|weak| TcpTransport {
            worker_id: reply.worker_id,
            announced,
            master: MasterLink {
                write: Mutex::new(stream),
                control: Mutex::new(ctl_rx),
            },
            peers: Mutex::new(HashMap::new()),
            router: Mutex::new(RouterState {
                job: None,
                early: Vec::new(),
            }),
            counters,
            events,
            stop: AtomicBool::new(false),
            weak: weak.clone(),
        });

        let t = transport.clone();
        thread::Builder::new()
            .name(format!("w{}-master-reader", transport.worker_id))
            .spawn(move || t.master_reader(read_half, ctl_tx))
            .map_err(failure)?;

        let t = transport.clone();
        thread::Builder::new()
            .name(format!("w{}-acceptor", transport.worker_id))
            .spawn(move || t.accept_loop(listener))
            .map_err(failure)?;

        Ok(transport)
    }

    pub fn worker_id(&self) -> u64 {
        self.worker_id
    }

    /// The address peers dial, as announced to the master.
    pub fn announced_addr(&self) -> (String, u16) {
        self.announced.clone()
    }

    /// Install routing for a new job and drain envelopes that raced ahead
    /// of the task assignment.
    pub(crate) fn set_job(&self, routing: JobRouting) {
        let mut router = self.router.lock().unwrap();
        let early = std::mem::take(&mut router.early);
        router.job = Some(routing);
        let job = router.job.as_ref().expect("just installed");
        for env in early {
            match job.mailboxes.get(&env.dst) {
                Some(mb) => mb.enqueue(env),
                None => log::warn!(
                    "worker={} dropping early envelope for unhosted rank {}",
                    self.worker_id,
                    env.dst
                ),
            }
        }
    }

    /// Tear down the current job: abort its mailboxes and drop its routing.
    pub(crate) fn clear_job(&self, reason: &str) {
        let mut router = self.router.lock().unwrap();
        if let Some(job) = router.job.take() {
            for mb in job.mailboxes.values() {
                mb.abort(reason);
            }
        }
        router.early.clear();
    }

    /// Report one rank's outcome to the master.
    pub(crate) fn send_result(
        &self,
        result: &crate::wire::TaskResult,
    ) -> Result<(), TransportError> {
        self.master_send(FrameKind::Result, &result.encode())
    }

    fn master_send(&self, kind: FrameKind, body: &[u8]) -> Result<(), TransportError> {
        let mut stream = self.master.write.lock().unwrap();
        self.counters.record_sent(kind);
        wire::write_frame_to(&mut *stream, kind, body).map_err(failure)
    }

    /// One serialized request/reply exchange with the master.
    fn control_exchange(
        &self,
        kind: FrameKind,
        body: &[u8],
    ) -> Result<ControlReply, TransportError> {
        let control = self.master.control.lock().unwrap();
        self.master_send(kind, body)?;
        control
            .recv_timeout(CONTROL_TIMEOUT)
            .map_err(|_| TransportError::Failure("master unreachable".to_string()))
    }

    fn request_addr(&self, world_rank: u32) -> Result<RankMapEntry, TransportError> {
        match self.control_exchange(FrameKind::AddrReq, &wire::encode_addr_req(world_rank))? {
            ControlReply::Addr(entry) => Ok(entry),
            ControlReply::Ctx { .. } => Err(TransportError::Failure(
                "mismatched control reply".to_string(),
            )),
        }
    }

    /// Find or establish the endpoint for `worker`; `probe_rank` is the rank
    /// whose delivery triggered resolution.
    fn peer_endpoint(
        &self,
        worker: u64,
        probe_rank: u32,
    ) -> Result<Arc<PeerEndpoint>, TransportError> {
        let slot = {
            let mut peers = self.peers.lock().unwrap();
            peers.entry(worker).or_default().clone()
        };
        let mut guard = slot.0.lock().unwrap();
        if let Some(ep) = &*guard {
            return Ok(ep.clone());
        }
        let entry = self.request_addr(probe_rank)?;
        debug_assert_eq!(entry.worker_id, worker, "directory and rank map disagree");
        let mut stream = connect_retry(&format!("{}:{}", entry.host, entry.port))?;
        let hello = Hello {
            worker_id: self.worker_id,
            host: self.announced.0.clone(),
            port: self.announced.1,
        };
        self.counters.record_sent(FrameKind::Hello);
        wire::write_frame_to(&mut stream, FrameKind::Hello, &hello.encode()).map_err(failure)?;
        let read_half = stream.try_clone().map_err(failure)?;
        let ep = Arc::new(PeerEndpoint {
            write: Mutex::new(stream),
        });
        *guard = Some(ep.clone());
        log::debug!(
            "worker={} established endpoint to worker={} at {}:{}",
            self.worker_id,
            worker,
            entry.host,
            entry.port
        );
        drop(guard);

        let t = self.self_arc();
        thread::Builder::new()
            .name(format!("w{}-peer-reader", self.worker_id))
            .spawn(move || t.peer_reader(read_half, false))
            .map_err(failure)?;
        Ok(ep)
    }

    // Readers need an owning handle back to the transport.
    fn self_arc(&self) -> Arc<TcpTransport> {
        self.weak.upgrade().expect("transport is alive")
    }

    fn endpoint_send(&self, ep: &PeerEndpoint, env: &Envelope) -> Result<(), TransportError> {
        let mut stream = ep.write.lock().unwrap();
        self.counters.record_sent(FrameKind::UserMsg);
        wire::write_frame_to(&mut *stream, FrameKind::UserMsg, &env.encode()).map_err(failure)
    }

    /// Route an inbound envelope into a hosted mailbox, or stash it if the
    /// job is not installed yet.
    fn route_inbound(&self, env: Envelope) {
        let mut router = self.router.lock().unwrap();
        match &router.job {
            Some(job) => match job.mailboxes.get(&env.dst) {
                Some(mb) => {
                    let mb = mb.clone();
                    drop(router);
                    mb.enqueue(env);
                }
                None => log::warn!(
                    "worker={} dropping misrouted envelope for rank {}",
                    self.worker_id,
                    env.dst
                ),
            },
            None => router.early.push(env),
        }
    }

    fn master_reader(&self, mut stream: TcpStream, ctl_tx: mpsc::Sender<ControlReply>) {
        loop {
            match wire::read_frame(&mut stream) {
                Ok((FrameKind::UserMsg, body)) => match Envelope::decode(&body) {
                    Ok(env) => self.route_inbound(env),
                    Err(e) => log::error!("worker={} bad relayed envelope: {e}", self.worker_id),
                },
                Ok((FrameKind::AddrReply, body)) => match RankMapEntry::decode(&body) {
                    Ok(entry) => {
                        let _ = ctl_tx.send(ControlReply::Addr(entry));
                    }
                    Err(e) => log::error!("worker={} bad ADDR_REPLY: {e}", self.worker_id),
                },
                Ok((FrameKind::CtxAllocReply, body)) => match wire::decode_ctx_alloc_reply(&body) {
                    Ok((first_id, count)) => {
                        let _ = ctl_tx.send(ControlReply::Ctx { first_id, count });
                    }
                    Err(e) => log::error!("worker={} bad CTX_ALLOC_REPLY: {e}", self.worker_id),
                },
                Ok((FrameKind::TaskAssign, body)) => match JobSpec::decode(&body) {
                    Ok(spec) => {
                        let _ = self.events.send(WorkerEvent::Task(spec));
                    }
                    Err(e) => log::error!("worker={} bad TASK_ASSIGN: {e}", self.worker_id),
                },
                Ok((FrameKind::JobDone, body)) => match wire::decode_job_done(&body) {
                    Ok(id) => {
                        let _ = self.events.send(WorkerEvent::JobDone(id));
                    }
                    Err(e) => log::error!("worker={} bad JOB_DONE: {e}", self.worker_id),
                },
                Ok((FrameKind::Shutdown, _)) => {
                    let _ = self.events.send(WorkerEvent::Shutdown);
                    return;
                }
                Ok((kind, _)) => {
                    log::warn!("worker={} unexpected {kind} on master link", self.worker_id)
                }
                Err(e) => {
                    if !self.stop.load(Ordering::SeqCst) {
                        let _ = self.events.send(WorkerEvent::MasterLost(e.to_string()));
                    }
                    return;
                }
            }
        }
    }

    fn accept_loop(&self, listener: TcpListener) {
        loop {
            match listener.accept() {
                Ok((stream, _)) => {
                    if self.stop.load(Ordering::SeqCst) {
                        return;
                    }
                    stream.set_nodelay(true).ok();
                    let t = self.self_arc();
                    if thread::Builder::new()
                        .name(format!("w{}-peer-reader", self.worker_id))
                        .spawn(move || t.peer_reader(stream, true))
                        .is_err()
                    {
                        log::error!("worker={} failed to spawn peer reader", self.worker_id);
                    }
                }
                Err(e) => {
                    if self.stop.load(Ordering::SeqCst) {
                        return;
                    }
                    log::error!("worker={} accept failed: {e}", self.worker_id);
                }
            }
        }
    }

    /// Serve one inbound peer connection. When `expect_hello` is set the
    /// first frame identifies the dialing worker and the connection doubles
    /// as our outbound endpoint to it, keeping one connection per pair.
    fn peer_reader(&self, mut stream: TcpStream, expect_hello: bool) {
        if expect_hello {
            let peer = match wire::read_frame(&mut stream) {
                Ok((FrameKind::Hello, body)) => match Hello::decode(&body) {
                    Ok(h) => h,
                    Err(e) => {
                        log::error!("worker={} bad peer HELLO: {e}", self.worker_id);
                        return;
                    }
                },
                Ok((kind, _)) => {
                    log::error!(
                        "worker={} peer connection opened with {kind}, closing",
                        self.worker_id
                    );
                    return;
                }
                Err(_) => return,
            };
            // Adopt the inbound connection as our endpoint to that worker
            // unless we already dialed one.
            if let Ok(write_half) = stream.try_clone() {
                let slot = {
                    let mut peers = self.peers.lock().unwrap();
                    peers.entry(peer.worker_id).or_default().clone()
                };
                let mut guard = slot.0.lock().unwrap();
                if guard.is_none() {
                    *guard = Some(Arc::new(PeerEndpoint {
                        write: Mutex::new(write_half),
                    }));
                    log::debug!(
                        "worker={} adopted inbound endpoint from worker={}",
                        self.worker_id,
                        peer.worker_id
                    );
                }
            }
        }
        loop {
            match wire::read_frame(&mut stream) {
                Ok((FrameKind::UserMsg, body)) => match Envelope::decode(&body) {
                    Ok(env) => self.route_inbound(env),
                    Err(e) => log::error!("worker={} bad peer envelope: {e}", self.worker_id),
                },
                Ok((kind, _)) => {
                    log::warn!("worker={} unexpected {kind} on peer link", self.worker_id)
                }
                Err(WireError::Closed) => return,
                Err(e) => {
                    if !self.stop.load(Ordering::SeqCst) {
                        log::debug!("worker={} peer connection ended: {e}", self.worker_id);
                    }
                    return;
                }
            }
        }
    }

    /// Stop serving: cut every socket so reader threads drain, and wake the
    /// acceptor.
    pub(crate) fn shutdown(&self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        if let Ok(stream) = self.master.write.lock() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        let peers: Vec<Arc<PeerSlot>> = self.peers.lock().unwrap().values().cloned().collect();
        for slot in peers {
            if let Some(ep) = &*slot.0.lock().unwrap() {
                let _ = ep.write.lock().unwrap().shutdown(Shutdown::Both);
            }
        }
        // Unblock the acceptor.
        let addr = format!("{}:{}", self.announced.0, self.announced.1);
        if let Ok(addrs) = addr.to_socket_addrs() {
            for a in addrs {
                if TcpStream::connect_timeout(&a, Duration::from_millis(200)).is_ok() {
                    break;
                }
            }
        }
    }
}

impl Transport for TcpTransport {
    fn deliver(&self, env: Envelope) -> Result<(), TransportError> {
        enum Route {
            Local(Arc<Mailbox>),
            Relay,
            Peer(u64),
        }
        let route = {
            let router = self.router.lock().unwrap();
            let job = router
                .job
                .as_ref()
                .ok_or_else(|| TransportError::Failure("no active job".to_string()))?;
            if env.dst >= job.world_size {
                return Err(TransportError::UnknownRank {
                    rank: env.dst,
                    world_size: job.world_size,
                });
            }
            let worker = job.rank_worker[env.dst as usize];
            if worker == self.worker_id {
                let mb = job.mailboxes.get(&env.dst).ok_or_else(|| {
                    TransportError::Failure(format!(
                        "rank {} mapped to this worker but not hosted",
                        env.dst
                    ))
                })?;
                Route::Local(mb.clone())
            } else if job.routing == RoutingMode::MasterRelay {
                Route::Relay
            } else {
                Route::Peer(worker)
            }
        };
        match route {
            Route::Local(mb) => {
                mb.enqueue(env);
                Ok(())
            }
            Route::Relay => self.master_send(FrameKind::UserMsg, &env.encode()),
            Route::Peer(worker) => {
                let ep = self.peer_endpoint(worker, env.dst)?;
                self.endpoint_send(&ep, &env)
            }
        }
    }

    fn allocate_context_ids(&self, count: u32) -> Result<u64, TransportError> {
        match self.control_exchange(FrameKind::CtxAllocReq, &wire::encode_ctx_alloc_req(count))? {
            ControlReply::Ctx {
                first_id,
                count: granted,
            } if granted == count => Ok(first_id),
            ControlReply::Ctx { .. } => Err(TransportError::Failure(
                "context allocation short-changed".to_string(),
            )),
            ControlReply::Addr(_) => Err(TransportError::Failure(
                "mismatched control reply".to_string(),
            )),
        }
    }

    fn counters(&self) -> &FrameCounters {
        &self.counters
    }
}
