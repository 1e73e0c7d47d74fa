//! Data-owner and analyst side of the wire protocol.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use rand::{CryptoRng, Rng};
use rrstream_core::epoch::pick_slot;
use rrstream_core::rr::{randomize_vector, PrivatizedVector};
use rrstream_core::{AesCtrPrg, Dpf, DpfKey, DpfKeySet, OwnerId, TableGeometry, WriteTable};

use crate::frame::{Frame, MsgType};
use crate::messages::{encode_write_share, ErrorCode, ErrorPayload, QueryAnnounce};
use crate::{NetError, ANY_EPOCH};

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Per request connect and read timeout.
    pub timeout: Duration,
    /// Rounds of resubmission after an epoch boundary split the acks.
    pub max_rounds: u32,
    pub retry_delay: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(5),
            max_rounds: 50,
            retry_delay: Duration::from_millis(20),
        }
    }
}

/// A request/response connection to one server.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    pub fn open(addr: &str, timeout: Duration) -> Result<Self, NetError> {
        let unreachable = |source| NetError::Unreachable {
            server: addr.to_string(),
            source,
        };
        let sock = addr
            .to_socket_addrs()
            .map_err(unreachable)?
            .next()
            .ok_or_else(|| NetError::Unexpected(format!("cannot resolve {addr}")))?;
        let stream = TcpStream::connect_timeout(&sock, timeout).map_err(unreachable)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn request(&mut self, frame: &Frame) -> Result<Frame, NetError> {
        frame.write_to(&mut self.writer)?;
        Frame::read_from(&mut self.reader)?
            .ok_or_else(|| NetError::Unexpected("server closed the connection".into()))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.writer.get_ref().shutdown(Shutdown::Both);
    }
}

/// Sends one frame on a fresh connection and returns the reply.
pub fn request(addr: &str, frame: &Frame, timeout: Duration) -> Result<Frame, NetError> {
    Connection::open(addr, timeout)?.request(frame)
}

fn remote_error(frame: &Frame) -> NetError {
    match ErrorPayload::decode(&frame.payload) {
        Ok(p) => NetError::Remote {
            code: p.code,
            epoch: frame.epoch_id,
            message: p.message(),
        },
        Err(e) => NetError::Payload(e),
    }
}

enum ShareReply {
    Ack(u64),
    /// Not the open epoch; the server's open epoch is given.
    Mismatch(u64),
}

fn send_share(
    addr: &str,
    epoch: u64,
    payload: Vec<u8>,
    opts: &ClientOptions,
) -> Result<ShareReply, NetError> {
    let reply = request(
        addr,
        &Frame::new(MsgType::WriteShare, epoch, payload),
        opts.timeout,
    )?;
    match reply.msg_type {
        MsgType::WriteShare => Ok(ShareReply::Ack(reply.epoch_id)),
        MsgType::Error => match remote_error(&reply) {
            NetError::Remote {
                code: ErrorCode::EpochMismatch,
                epoch,
                ..
            } => Ok(ShareReply::Mismatch(epoch)),
            e => Err(e),
        },
        other => Err(NetError::Unexpected(format!(
            "{other:?} in reply to a share"
        ))),
    }
}

/// Asks `addr` to withdraw `owner`'s share from `epoch`. Best effort: a
/// share that cannot be withdrawn is still dropped at close because the
/// other servers never list the owner.
pub fn withdraw(
    addr: &str,
    epoch: u64,
    owner: &OwnerId,
    opts: &ClientOptions,
) -> Result<(), NetError> {
    let payload = ErrorPayload {
        code: ErrorCode::ClientAbort,
        detail: owner.as_bytes().to_vec(),
    };
    let reply = request(
        addr,
        &Frame::new(MsgType::Error, epoch, payload.encode()),
        opts.timeout,
    )?;
    match ErrorPayload::decode(&reply.payload) {
        Ok(p) if reply.msg_type == MsgType::Error && p.code == ErrorCode::Ok => Ok(()),
        _ => Err(remote_error(&reply)),
    }
}

/// Uploads `keys[j]` to `servers[j]` so that every server holds its share in
/// the same epoch. Returns that epoch.
///
/// If the acks straddle an epoch boundary the shares in older epochs are
/// withdrawn and resent for the newest one. Any other failure withdraws
/// everything accepted so far.
pub fn submit_keys(
    keys: &[DpfKey],
    owner: &OwnerId,
    servers: &[String],
    opts: &ClientOptions,
) -> Result<u64, NetError> {
    if keys.len() != servers.len() {
        return Err(NetError::Unexpected(format!(
            "{} keys for {} servers",
            keys.len(),
            servers.len()
        )));
    }
    let payloads: Vec<Vec<u8>> = keys
        .iter()
        .map(|k| encode_write_share(owner, &k.encode()))
        .collect();
    let mut acked: Vec<Option<u64>> = vec![None; servers.len()];
    let mut target = ANY_EPOCH;

    let abandon = |acked: &[Option<u64>], err: NetError| -> NetError {
        for (j, a) in acked.iter().enumerate() {
            if let Some(e) = a {
                let _ = withdraw(&servers[j], *e, owner, opts);
            }
        }
        NetError::Abandoned(err.to_string())
    };

    for _ in 0..opts.max_rounds {
        let mut lagging = false;
        for j in 0..servers.len() {
            if acked[j].is_some() && (target == ANY_EPOCH || acked[j] == Some(target)) {
                continue;
            }
            if let Some(old) = acked[j].take() {
                let _ = withdraw(&servers[j], old, owner, opts);
            }
            match send_share(&servers[j], target, payloads[j].clone(), opts) {
                Ok(ShareReply::Ack(e)) => acked[j] = Some(e),
                Ok(ShareReply::Mismatch(open)) => {
                    if target != ANY_EPOCH && open < target {
                        lagging = true;
                    } else {
                        target = open;
                    }
                }
                Err(e) => return Err(abandon(&acked, e)),
            }
        }
        let epochs: Vec<u64> = acked.iter().flatten().copied().collect();
        if epochs.len() == servers.len() && epochs.iter().all(|e| *e == epochs[0]) {
            return Ok(epochs[0]);
        }
        if let Some(max) = epochs.iter().max() {
            if target == ANY_EPOCH || *max > target {
                target = *max;
            }
        }
        if lagging || epochs.len() < servers.len() {
            thread::sleep(opts.retry_delay);
        }
    }
    Err(abandon(
        &acked,
        NetError::Timeout("servers did not agree on an epoch".into()),
    ))
}

/// A privatized answer encoded as a write, ready for upload.
#[derive(Debug, Clone)]
pub struct PreparedWrite {
    pub privatized: PrivatizedVector,
    pub message: Vec<u8>,
    pub target_row: u32,
    pub keyset: DpfKeySet,
}

/// Privatizes `truth_bits`, encodes the result, picks a row and splits the
/// write into `parties` keys, consuming `rng` in that order.
pub fn prepare_write<R: Rng + CryptoRng + ?Sized>(
    query: &QueryAnnounce,
    truth_bits: &[bool],
    parties: usize,
    rng: &mut R,
) -> Result<PreparedWrite, NetError> {
    query.validate()?;
    if truth_bits.len() != query.attribute_labels.len() {
        return Err(NetError::Unexpected(format!(
            "{} answers for {} attributes",
            truth_bits.len(),
            query.attribute_labels.len()
        )));
    }
    let params = query.params()?;
    let geometry = query.geometry()?;
    let privatized = randomize_vector(truth_bits, &params, rng)?;
    let message = privatized.to_message(geometry.message_bytes() as usize)?;
    let target_row = pick_slot(geometry.rows(), rng)?;
    let keyset = Dpf::new(AesCtrPrg).keygen(&geometry, target_row, &message, parties, rng)?;
    Ok(PreparedWrite {
        privatized,
        message,
        target_row,
        keyset,
    })
}

/// What a data owner sent.
#[derive(Debug, Clone)]
pub struct Submission {
    pub owner: OwnerId,
    pub epoch_id: u64,
    pub target_row: u32,
    pub privatized: PrivatizedVector,
    pub message: Vec<u8>,
}

/// Privatizes `truth_bits`, writes the result into a random row and
/// uploads one key share to each server. The true bits never leave this
/// function.
pub fn client_submit<R: Rng + CryptoRng + ?Sized>(
    query: &QueryAnnounce,
    truth_bits: &[bool],
    servers: &[String],
    owner: OwnerId,
    rng: &mut R,
    opts: &ClientOptions,
) -> Result<Submission, NetError> {
    let write = prepare_write(query, truth_bits, servers.len(), rng)?;
    let epoch_id = submit_keys(write.keyset.keys(), &owner, servers, opts)?;
    Ok(Submission {
        owner,
        epoch_id,
        target_row: write.target_row,
        privatized: write.privatized,
        message: write.message,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResultStatus {
    Ready(Vec<u8>),
    NotReady,
    Aborted(String),
}

pub fn fetch_result(addr: &str, epoch: u64, timeout: Duration) -> Result<ResultStatus, NetError> {
    let reply = request(
        addr,
        &Frame::new(MsgType::Result, epoch, Vec::new()),
        timeout,
    )?;
    match reply.msg_type {
        MsgType::Result => Ok(ResultStatus::Ready(reply.payload)),
        MsgType::Error => match remote_error(&reply) {
            NetError::Remote {
                code: ErrorCode::NotReady,
                ..
            } => Ok(ResultStatus::NotReady),
            NetError::Remote {
                code: ErrorCode::Aborted,
                message,
                ..
            } => Ok(ResultStatus::Aborted(message)),
            e => Err(e),
        },
        other => Err(NetError::Unexpected(format!(
            "{other:?} in reply to a result request"
        ))),
    }
}

/// Polls until the epoch is finalized or aborted.
pub fn wait_result(
    addr: &str,
    epoch: u64,
    geometry: &TableGeometry,
    timeout: Duration,
) -> Result<WriteTable, NetError> {
    let deadline = Instant::now() + timeout;
    loop {
        match fetch_result(addr, epoch, timeout)? {
            ResultStatus::Ready(cells) => {
                if cells.len() != geometry.table_len() {
                    return Err(NetError::Unexpected(format!(
                        "table of {} bytes, expected {}",
                        cells.len(),
                        geometry.table_len()
                    )));
                }
                return Ok(WriteTable {
                    epoch_id: epoch,
                    geometry: *geometry,
                    cells,
                });
            }
            ResultStatus::Aborted(reason) => {
                return Err(NetError::Remote {
                    code: ErrorCode::Aborted,
                    epoch,
                    message: reason,
                })
            }
            ResultStatus::NotReady if Instant::now() >= deadline => {
                return Err(NetError::Timeout(format!("epoch {epoch} at {addr}")))
            }
            ResultStatus::NotReady => thread::sleep(Duration::from_millis(50)),
        }
    }
}

pub fn fetch_query(addr: &str, timeout: Duration) -> Result<QueryAnnounce, NetError> {
    let reply = request(
        addr,
        &Frame::new(MsgType::QueryAnnounce, 0, Vec::new()),
        timeout,
    )?;
    match reply.msg_type {
        MsgType::QueryAnnounce => Ok(QueryAnnounce::decode(&reply.payload)?),
        MsgType::Error => Err(remote_error(&reply)),
        other => Err(NetError::Unexpected(format!(
            "{other:?} in reply to a query request"
        ))),
    }
}
