//! Aggregation server.
//!
//! One thread accepts connections and hands each to its own handler thread.
//! Intake for the open epoch sits behind a mutex, so accumulation is an
//! exclusive section and the epoch switch is a barrier: a share either
//! lands before the switch or is told which epoch is open now.
//!
//! Epoch ids are aligned to wall-clock time (`unix_ms / epoch_ms`), so
//! servers agree on them without talking. When an epoch ends a dedicated
//! thread runs the close protocol with the peers:
//!
//! 1. every server broadcasts its contributor list and keeps only owners
//!    that reached all servers; shares that arrived at a subset are dropped
//!    (excised if already accumulated);
//! 2. unless auditing is off, the servers audit all remaining key sets in one
//!    batched round and drop the rejected ones;
//! 3. each server broadcasts its accumulator snapshot and XORs in everyone
//!    else's.
//!
//! Any missing peer message within the timeout aborts the epoch.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rrstream_core::audit::{
    aggregate_masked, digest_salt, draw_pair_seeds, referee_verdict, row_digests, AuditParty,
    AuditRoles, RowDigest,
};
use rrstream_core::epoch::{EpochError, PeerIntermediate};
use rrstream_core::prg::Seed;
use rrstream_core::{
    AuditMode, Dpf, DpfKey, DummyPolicy, EpochState, OwnerId, ServerConfig, Verdict, WriteTable,
};

use crate::frame::{Frame, MsgType};
use crate::messages::{
    decode_digests, decode_intermediate, decode_write_share, encode_digests, encode_intermediate,
    AuditBatch, CloseNotice, ErrorCode, ErrorPayload, QueryAnnounce, VerdictBatch,
    MASKED_KIND_ROWS, MASKED_KIND_SEEDS,
};
use crate::{NetError, ANY_EPOCH};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub config: ServerConfig,
    pub audit: AuditMode,
    pub dummy_policy: DummyPolicy,
    /// Seeds the audit mask generator; fresh entropy when `None`.
    pub seed: Option<u64>,
    /// Served to clients that ask for the query.
    pub query: Option<QueryAnnounce>,
    /// Finalized tables are written here as `epoch-<id>.table`.
    pub persist_dir: Option<PathBuf>,
}

impl ServerOptions {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            config,
            audit: AuditMode::Eager,
            dummy_policy: DummyPolicy::default(),
            seed: None,
            query: None,
            persist_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EpochOutcome {
    Finalized(WriteTable),
    Aborted(String),
}

struct Intake {
    state: EpochState,
    /// Every owner that ever submitted in this epoch, withdrawn or not.
    seen: HashSet<OwnerId>,
    /// Shares still in play, with whether they were XORed into the
    /// accumulator already.
    active: BTreeMap<OwnerId, (DpfKey, bool)>,
}

impl Intake {
    fn new(epoch_id: u64, config: &ServerConfig) -> Self {
        Self {
            state: EpochState::new(
                epoch_id,
                config.geometry,
                config.server_id,
                config.parties(),
            ),
            seen: HashSet::new(),
            active: BTreeMap::new(),
        }
    }
}

type MailKey = (u64, MsgType, u8, u8);

#[derive(Default)]
struct Mailbox {
    slots: Mutex<HashMap<MailKey, Vec<u8>>>,
    arrived: Condvar,
}

impl Mailbox {
    fn put(&self, key: MailKey, payload: Vec<u8>) {
        self.slots.lock().unwrap().insert(key, payload);
        self.arrived.notify_all();
    }

    fn wait(&self, key: MailKey, deadline: Instant) -> Option<Vec<u8>> {
        let mut slots = self.slots.lock().unwrap();
        loop {
            if let Some(v) = slots.remove(&key) {
                return Some(v);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            slots = self.arrived.wait_timeout(slots, deadline - now).unwrap().0;
        }
    }

    fn purge_through(&self, epoch: u64) {
        self.slots.lock().unwrap().retain(|k, _| k.0 > epoch);
    }
}

struct Shared {
    opts: ServerOptions,
    dpf: Dpf,
    intake: Mutex<Intake>,
    mailbox: Mailbox,
    outcomes: Mutex<BTreeMap<u64, EpochOutcome>>,
    outcome_ready: Condvar,
    rng: Mutex<ChaCha20Rng>,
    shutdown: AtomicBool,
}

impl Shared {
    fn config(&self) -> &ServerConfig {
        &self.opts.config
    }

    fn epoch_ms(&self) -> u64 {
        (self.config().epoch_duration.as_millis() as u64).max(1)
    }

    fn accumulates_on_receipt(&self) -> bool {
        self.opts.audit != AuditMode::Eager
    }
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// A running server. Dropping it without [`Server::shutdown`] leaves the
/// threads running.
pub struct Server {
    shared: Arc<Shared>,
    addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl Server {
    /// Binds the address listed for this server in the config.
    pub fn bind(opts: ServerOptions) -> Result<Self, NetError> {
        let own = opts
            .config
            .servers
            .get(opts.config.server_id as usize)
            .cloned()
            .unwrap_or_default();
        let listener = TcpListener::bind(&own)?;
        Self::start(listener, opts)
    }

    pub fn start(listener: TcpListener, opts: ServerOptions) -> Result<Self, NetError> {
        opts.config.validate()?;
        if let Some(q) = &opts.query {
            q.validate()?;
        }
        if let Some(dir) = &opts.persist_dir {
            fs::create_dir_all(dir)?;
        }
        let rng = match opts.seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s ^ ((opts.config.server_id as u64) << 56)),
            None => ChaCha20Rng::from_entropy(),
        };
        let epoch_ms = (opts.config.epoch_duration.as_millis() as u64).max(1);
        let first = unix_ms() / epoch_ms;
        let shared = Arc::new(Shared {
            intake: Mutex::new(Intake::new(first, &opts.config)),
            opts,
            dpf: Dpf::default(),
            mailbox: Mailbox::default(),
            outcomes: Mutex::new(BTreeMap::new()),
            outcome_ready: Condvar::new(),
            rng: Mutex::new(rng),
            shutdown: AtomicBool::new(false),
        });
        let addr = listener.local_addr()?;
        info!(
            "server {} listening on {addr}, first epoch {first}",
            shared.config().server_id
        );

        let accept = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("accept".into())
                .spawn(move || accept_loop(listener, shared))?
        };
        let timer = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("epoch-timer".into())
                .spawn(move || epoch_timer(shared))?
        };
        Ok(Self {
            shared,
            addr,
            threads: vec![accept, timer],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn current_epoch(&self) -> u64 {
        self.shared.intake.lock().unwrap().state.epoch_id()
    }

    pub fn outcome(&self, epoch: u64) -> Option<EpochOutcome> {
        self.shared.outcomes.lock().unwrap().get(&epoch).cloned()
    }

    pub fn outcomes(&self) -> BTreeMap<u64, EpochOutcome> {
        self.shared.outcomes.lock().unwrap().clone()
    }

    pub fn wait_outcome(&self, epoch: u64, timeout: Duration) -> Option<EpochOutcome> {
        let deadline = Instant::now() + timeout;
        let mut outcomes = self.shared.outcomes.lock().unwrap();
        loop {
            if let Some(o) = outcomes.get(&epoch) {
                return Some(o.clone());
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            outcomes = self
                .shared
                .outcome_ready
                .wait_timeout(outcomes, deadline - now)
                .unwrap()
                .0;
        }
    }

    pub fn shutdown(mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the process is killed.
    pub fn run_forever(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        match stream {
            Ok(stream) => {
                let shared = Arc::clone(&shared);
                let _ = thread::Builder::new().name("conn".into()).spawn(move || {
                    if let Err(e) = serve_connection(stream, &shared) {
                        debug!("connection ended: {e}");
                    }
                });
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> Result<(), NetError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = Frame::read_from(&mut reader)? {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let reply = handle_frame(shared, frame);
        reply.write_to(&mut writer)?;
    }
    Ok(())
}

fn error_frame(epoch: u64, code: ErrorCode, message: impl AsRef<str>) -> Frame {
    Frame::new(
        MsgType::Error,
        epoch,
        ErrorPayload::text(code, message).encode(),
    )
}

fn handle_frame(shared: &Shared, frame: Frame) -> Frame {
    let epoch = frame.epoch_id;
    match frame.msg_type {
        MsgType::WriteShare => handle_write(shared, frame),
        MsgType::Result => handle_result(shared, epoch),
        MsgType::QueryAnnounce => match &shared.opts.query {
            Some(q) => Frame::new(MsgType::QueryAnnounce, q.query_id, q.encode()),
            None => error_frame(epoch, ErrorCode::NoQuery, "no query configured"),
        },
        MsgType::Error => match ErrorPayload::decode(&frame.payload) {
            Ok(p) if p.code == ErrorCode::ClientAbort => handle_abort(shared, epoch, &p.detail),
            Ok(p) => error_frame(
                epoch,
                ErrorCode::Malformed,
                format!("unexpected {:?}", p.code),
            ),
            Err(e) => error_frame(epoch, ErrorCode::Malformed, e.to_string()),
        },
        t if t.is_peer() => {
            let from = frame.payload.first().copied();
            let kind = if t == MsgType::AuditMaskedRows {
                frame.payload.get(1).copied()
            } else {
                Some(0)
            };
            match (from, kind) {
                (Some(from), Some(kind)) => {
                    shared.mailbox.put((epoch, t, from, kind), frame.payload);
                    Frame::new(t, epoch, Vec::new())
                }
                _ => error_frame(epoch, ErrorCode::Malformed, "peer payload too short"),
            }
        }
        other => error_frame(epoch, ErrorCode::Malformed, format!("unexpected {other:?}")),
    }
}

fn handle_write(shared: &Shared, frame: Frame) -> Frame {
    let (owner, key_bytes) = match decode_write_share(&frame.payload) {
        Ok(v) => v,
        Err(e) => return error_frame(frame.epoch_id, ErrorCode::Malformed, e.to_string()),
    };
    let key = match DpfKey::decode(key_bytes) {
        Ok(k) => k,
        Err(e) => return error_frame(frame.epoch_id, ErrorCode::Malformed, e.to_string()),
    };

    let mut intake = shared.intake.lock().unwrap();
    let open = intake.state.epoch_id();
    if frame.epoch_id != ANY_EPOCH && frame.epoch_id != open {
        return error_frame(
            open,
            ErrorCode::EpochMismatch,
            format!("epoch {} is not open, epoch {open} is", frame.epoch_id),
        );
    }
    if intake.seen.contains(&owner) {
        return error_frame(
            open,
            ErrorCode::Duplicate,
            format!("{owner} already responded in epoch {open}"),
        );
    }
    if let Err(e) = intake.state.check_share(&owner, &key) {
        let code = match e {
            EpochError::DuplicateResponse(..) => ErrorCode::Duplicate,
            EpochError::GeometryMismatch { .. } | EpochError::WrongParty { .. } => {
                ErrorCode::Geometry
            }
            _ => ErrorCode::Internal,
        };
        return error_frame(open, code, e.to_string());
    }
    let accumulated = shared.accumulates_on_receipt();
    if accumulated {
        if let Err(e) = intake.state.submit_share(owner, &key, &shared.dpf) {
            return error_frame(open, ErrorCode::Internal, e.to_string());
        }
    }
    intake.seen.insert(owner);
    intake.active.insert(owner, (key, accumulated));
    Frame::new(MsgType::WriteShare, open, owner.as_bytes().to_vec())
}

fn handle_abort(shared: &Shared, epoch: u64, detail: &[u8]) -> Frame {
    let owner = match <[u8; 32]>::try_from(detail) {
        Ok(b) => OwnerId(b),
        Err(_) => {
            return error_frame(
                epoch,
                ErrorCode::Malformed,
                "abort payload needs a 32-byte owner",
            )
        }
    };
    let mut intake = shared.intake.lock().unwrap();
    if intake.state.epoch_id() != epoch {
        // Already closing; the contributor intersection drops partial sets.
        return error_frame(epoch, ErrorCode::Ok, "epoch no longer open");
    }
    let Some((key, accumulated)) = intake.active.remove(&owner) else {
        return error_frame(epoch, ErrorCode::Ok, "nothing to withdraw");
    };
    if accumulated {
        if let Err(e) = intake.state.excise(&owner, &key, &shared.dpf) {
            return error_frame(epoch, ErrorCode::Internal, e.to_string());
        }
    }
    error_frame(epoch, ErrorCode::Ok, "withdrawn")
}

fn handle_result(shared: &Shared, epoch: u64) -> Frame {
    match shared.outcomes.lock().unwrap().get(&epoch) {
        Some(EpochOutcome::Finalized(t)) => Frame::new(MsgType::Result, epoch, t.cells.clone()),
        Some(EpochOutcome::Aborted(reason)) => error_frame(epoch, ErrorCode::Aborted, reason),
        None => error_frame(epoch, ErrorCode::NotReady, "epoch not finalized"),
    }
}

/// Empty epochs skipped while the process was descheduled are still closed
/// with peers, up to this many.
const MAX_CATCH_UP: u64 = 16;

fn epoch_timer(shared: Arc<Shared>) {
    let epoch_ms = shared.epoch_ms();
    while !shared.shutdown.load(Ordering::SeqCst) {
        let now = unix_ms();
        let current = now / epoch_ms;
        let mut closing = Vec::new();
        {
            let mut intake = shared.intake.lock().unwrap();
            let open = intake.state.epoch_id();
            if current > open {
                let old = std::mem::replace(&mut *intake, Intake::new(current, shared.config()));
                closing.push(old);
                for skipped in (open + 1).max(current.saturating_sub(MAX_CATCH_UP))..current {
                    closing.push(Intake::new(skipped, shared.config()));
                }
            }
        }
        for intake in closing {
            let shared = Arc::clone(&shared);
            let _ = thread::Builder::new()
                .name(format!("close-{}", intake.state.epoch_id()))
                .spawn(move || run_close(&shared, intake));
        }
        let until_next = (current + 1) * epoch_ms - unix_ms().min((current + 1) * epoch_ms);
        thread::sleep(Duration::from_millis(until_next.clamp(1, 50)));
    }
}

fn run_close(shared: &Shared, intake: Intake) {
    let epoch = intake.state.epoch_id();
    let outcome = match close_epoch(shared, intake) {
        Ok(table) => {
            info!(
                "server {} finalized epoch {epoch}: {} nonzero rows",
                shared.config().server_id,
                table.nonzero_rows().len()
            );
            if let Some(dir) = &shared.opts.persist_dir {
                let path = dir.join(format!("epoch-{epoch}.table"));
                if let Err(e) = fs::write(&path, &table.cells) {
                    warn!("could not persist {}: {e}", path.display());
                }
            }
            EpochOutcome::Finalized(table)
        }
        Err(e) => {
            warn!(
                "server {} aborted epoch {epoch}: {e}",
                shared.config().server_id
            );
            EpochOutcome::Aborted(e.to_string())
        }
    };
    shared.outcomes.lock().unwrap().insert(epoch, outcome);
    shared.outcome_ready.notify_all();
    shared.mailbox.purge_through(epoch);
}

struct PeerLink<'a> {
    shared: &'a Shared,
    epoch: u64,
    deadline: Instant,
}

impl PeerLink<'_> {
    fn me(&self) -> u8 {
        self.shared.config().server_id
    }

    fn peers(&self) -> impl Iterator<Item = u8> + '_ {
        let me = self.me();
        (0..self.shared.config().parties() as u8).filter(move |j| *j != me)
    }

    /// Delivers to peer `to`, or to the own mailbox when `to` is this server.
    fn send(&self, to: u8, msg_type: MsgType, payload: Vec<u8>) -> Result<(), NetError> {
        if to == self.me() {
            let kind = if msg_type == MsgType::AuditMaskedRows {
                payload[1]
            } else {
                0
            };
            self.shared
                .mailbox
                .put((self.epoch, msg_type, to, kind), payload);
            return Ok(());
        }
        let addr = &self.shared.config().servers[to as usize];
        let frame = Frame::new(msg_type, self.epoch, payload);
        let mut last_err = None;
        while Instant::now() < self.deadline {
            match deliver(addr, &frame, self.deadline) {
                Ok(()) => return Ok(()),
                Err(e) => {
                    last_err = Some(e);
                    thread::sleep(Duration::from_millis(25));
                }
            }
        }
        Err(NetError::Timeout(format!(
            "sending {msg_type:?} for epoch {} to server {to}: {}",
            self.epoch,
            last_err.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    fn broadcast(&self, msg_type: MsgType, payload: &[u8]) -> Result<(), NetError> {
        for j in self.peers() {
            self.send(j, msg_type, payload.to_vec())?;
        }
        Ok(())
    }

    fn recv(&self, msg_type: MsgType, from: u8, kind: u8) -> Result<Vec<u8>, NetError> {
        self.shared
            .mailbox
            .wait((self.epoch, msg_type, from, kind), self.deadline)
            .ok_or_else(|| {
                NetError::Timeout(format!(
                    "no {msg_type:?} from server {from} for epoch {}",
                    self.epoch
                ))
            })
    }
}

fn deliver(addr: &str, frame: &Frame, deadline: Instant) -> Result<(), NetError> {
    let remaining = deadline
        .saturating_duration_since(Instant::now())
        .max(Duration::from_millis(10));
    let sock = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| NetError::Unexpected(format!("cannot resolve {addr}")))?;
    let mut stream = TcpStream::connect_timeout(&sock, remaining)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(remaining))?;
    frame.write_to(&mut stream)?;
    let receipt = Frame::read_from(&mut stream)?
        .ok_or_else(|| NetError::Unexpected("peer closed without receipt".into()))?;
    let _ = stream.shutdown(Shutdown::Both);
    if receipt.msg_type != frame.msg_type {
        return Err(NetError::Unexpected(format!(
            "peer answered {:?}",
            receipt.msg_type
        )));
    }
    Ok(())
}

fn protocol(epoch: u64, reason: impl Into<String>) -> NetError {
    NetError::Epoch(EpochError::Protocol {
        epoch,
        reason: reason.into(),
    })
}

fn close_epoch(shared: &Shared, intake: Intake) -> Result<WriteTable, NetError> {
    let Intake {
        mut state, active, ..
    } = intake;
    let epoch = state.epoch_id();
    let link = PeerLink {
        shared,
        epoch,
        deadline: Instant::now() + shared.config().peer_timeout,
    };
    let result = close_with_peers(&link, &mut state, active);
    if let Err(e) = &result {
        state.abort(e.to_string());
    }
    result
}

fn close_with_peers(
    link: &PeerLink<'_>,
    state: &mut EpochState,
    mut active: BTreeMap<OwnerId, (DpfKey, bool)>,
) -> Result<WriteTable, NetError> {
    let shared = link.shared;
    let epoch = link.epoch;
    let me = link.me();

    // Contributor reconciliation.
    let notice = CloseNotice {
        from: me,
        owners: active.keys().copied().collect(),
    };
    link.broadcast(MsgType::EpochClose, &notice.encode())?;
    let mut common: BTreeSet<OwnerId> = active.keys().copied().collect();
    for j in link.peers() {
        let theirs = CloseNotice::decode(&link.recv(MsgType::EpochClose, j, 0)?)?;
        let theirs: BTreeSet<OwnerId> = theirs.owners.into_iter().collect();
        common.retain(|o| theirs.contains(o));
    }
    let partial: Vec<OwnerId> = active
        .keys()
        .filter(|o| !common.contains(o))
        .copied()
        .collect();
    for owner in partial {
        let (key, accumulated) = active.remove(&owner).unwrap();
        if accumulated {
            state.excise(&owner, &key, &shared.dpf)?;
        }
        debug!("epoch {epoch}: dropping partial submission from {owner}");
    }

    // Audit.
    if shared.opts.audit != AuditMode::Off && !active.is_empty() {
        let verdicts = audit_round(link, &active)?;
        for (owner, verdict) in verdicts {
            if !verdict.is_accept() {
                let (key, accumulated) = active.remove(&owner).unwrap();
                if accumulated {
                    state.excise(&owner, &key, &shared.dpf)?;
                }
                info!("epoch {epoch}: rejected {owner}: {verdict:?}");
            }
        }
    }
    for (owner, (key, accumulated)) in &active {
        if !accumulated {
            state.submit_share(*owner, key, &shared.dpf)?;
        }
    }

    // Intermediate exchange.
    let snapshot = state.close()?;
    link.broadcast(MsgType::Intermediate, &encode_intermediate(me, &snapshot))?;
    let mut peers = Vec::new();
    for j in link.peers() {
        let payload = link.recv(MsgType::Intermediate, j, 0)?;
        let (from, table) = decode_intermediate(&payload)?;
        peers.push(PeerIntermediate {
            server_id: from,
            table: table.to_vec(),
        });
    }
    Ok(state.finalize(&peers)?)
}

fn owners_match(
    epoch: u64,
    expected: &[OwnerId],
    got: impl Iterator<Item = OwnerId>,
) -> Result<(), NetError> {
    if !got.eq(expected.iter().copied()) {
        return Err(protocol(epoch, "audit batch covers a different owner list"));
    }
    Ok(())
}

/// One batched audit over every owner in `active`, in key order.
fn audit_round(
    link: &PeerLink<'_>,
    active: &BTreeMap<OwnerId, (DpfKey, bool)>,
) -> Result<Vec<(OwnerId, Verdict)>, NetError> {
    let shared = link.shared;
    let epoch = link.epoch;
    let me = link.me();
    let parties = shared.config().parties();
    let geometry = shared.config().geometry;
    let roles = AuditRoles::for_parties(parties);
    let owners: Vec<OwnerId> = active.keys().copied().collect();

    let audit_parties = active
        .values()
        .map(|(key, _)| AuditParty::new(me, parties, &geometry, key, &shared.dpf))
        .collect::<Result<Vec<_>, _>>()?;

    // Pairwise seeds: this server draws one per higher peer and owner.
    let mut seeds: Vec<BTreeMap<u8, Seed>> = vec![BTreeMap::new(); owners.len()];
    {
        let mut rng = shared.rng.lock().unwrap();
        let mut outgoing: BTreeMap<u8, Vec<(OwnerId, Seed)>> = BTreeMap::new();
        for (i, owner) in owners.iter().enumerate() {
            for pair in draw_pair_seeds(me, parties, &mut *rng) {
                seeds[i].insert(pair.high, pair.seed);
                outgoing
                    .entry(pair.high)
                    .or_default()
                    .push((*owner, pair.seed));
            }
        }
        drop(rng);
        for (to, entries) in outgoing {
            link.send(
                to,
                MsgType::AuditMaskedRows,
                AuditBatch::seeds(me, entries).encode(),
            )?;
        }
    }
    let record_len = AuditBatch::record_len(&geometry);
    for from in 0..me {
        let batch = AuditBatch::decode(
            &link.recv(MsgType::AuditMaskedRows, from, MASKED_KIND_SEEDS)?,
            &record_len,
        )?;
        owners_match(epoch, &owners, batch.entries.iter().map(|e| e.0))?;
        for (i, (_, seed)) in batch.entries.into_iter().enumerate() {
            seeds[i].insert(from, seed.try_into().unwrap());
        }
    }

    let masked = audit_parties
        .iter()
        .zip(&seeds)
        .map(|(party, s)| party.masked_rows(s, shared.dpf.prg()))
        .collect::<Result<Vec<_>, _>>()?;

    let salt_seed = |i: usize| -> Seed {
        let peer = if me == roles.left {
            roles.right_aggregator
        } else {
            roles.left
        };
        seeds[i][&peer]
    };

    if me == roles.left || me == roles.right_aggregator {
        let partials: Vec<Vec<u8>> = if me == roles.left {
            masked
        } else {
            let mut incoming = Vec::new();
            for from in (0..parties as u8).filter(|j| *j != roles.left && *j != me) {
                let batch = AuditBatch::decode(
                    &link.recv(MsgType::AuditMaskedRows, from, MASKED_KIND_ROWS)?,
                    &record_len,
                )?;
                owners_match(epoch, &owners, batch.entries.iter().map(|e| e.0))?;
                incoming.push(batch.entries);
            }
            masked
                .iter()
                .enumerate()
                .map(|(i, own)| {
                    aggregate_masked(
                        &geometry,
                        std::iter::once(own.as_slice())
                            .chain(incoming.iter().map(|b| b[i].1.as_slice())),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        let digests: Vec<(OwnerId, Vec<RowDigest>)> = partials
            .iter()
            .enumerate()
            .map(|(i, partial)| {
                (
                    owners[i],
                    row_digests(&geometry, &digest_salt(&salt_seed(i)), partial),
                )
            })
            .collect();
        link.send(
            roles.referee,
            MsgType::AuditZeroCheck,
            encode_digests(me, &digests),
        )?;
    } else {
        let batch = AuditBatch {
            from: me,
            kind: MASKED_KIND_ROWS,
            entries: owners.iter().copied().zip(masked).collect(),
        };
        link.send(
            roles.right_aggregator,
            MsgType::AuditMaskedRows,
            batch.encode(),
        )?;
    }

    let rows = geometry.rows();
    if me == roles.referee {
        let (_, left) = decode_digests(&link.recv(MsgType::AuditZeroCheck, roles.left, 0)?, rows)?;
        let (_, right) = decode_digests(
            &link.recv(MsgType::AuditZeroCheck, roles.right_aggregator, 0)?,
            rows,
        )?;
        owners_match(epoch, &owners, left.iter().map(|e| e.0))?;
        owners_match(epoch, &owners, right.iter().map(|e| e.0))?;
        let mut verdicts = Vec::with_capacity(owners.len());
        for ((owner, l), (_, r)) in left.iter().zip(&right) {
            let t = referee_verdict(&geometry, *owner, l, r, shared.opts.dummy_policy)?;
            verdicts.push((*owner, t.verdict, t.zero_rows));
        }
        let batch = VerdictBatch { from: me, verdicts };
        link.broadcast(MsgType::AuditVerdict, &batch.encode())?;
        Ok(batch.verdicts.into_iter().map(|(o, v, _)| (o, v)).collect())
    } else {
        let batch =
            VerdictBatch::decode(&link.recv(MsgType::AuditVerdict, roles.referee, 0)?, rows)?;
        owners_match(epoch, &owners, batch.verdicts.iter().map(|e| e.0))?;
        Ok(batch.verdicts.into_iter().map(|(o, v, _)| (o, v)).collect())
    }
}
