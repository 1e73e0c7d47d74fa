//! Payload layouts carried inside frames. All integers little-endian.

use rrstream_core::audit::{RejectReason, RowDigest, DIGEST_LEN};
use rrstream_core::prg::{Seed, SEED_LEN};
use rrstream_core::rr::PrivatizedVector;
use rrstream_core::{OwnerId, PrivacyParams, TableGeometry, Verdict};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("payload truncated: wanted {wanted} more bytes at offset {offset}")]
    Truncated { offset: usize, wanted: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("invalid field: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, PayloadError>;

/// Sequential little-endian reader over a payload.
pub struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(PayloadError::Truncated {
                offset: self.pos,
                wanted: n,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn owner(&mut self) -> Result<OwnerId> {
        Ok(OwnerId(self.take(32)?.try_into().unwrap()))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn finish(self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(PayloadError::Trailing(n)),
        }
    }
}

/// A long-standing query published by the analyst. Also tells clients
/// which servers to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAnnounce {
    pub query_id: u64,
    pub attribute_labels: Vec<String>,
    pub rows: u32,
    pub message_bytes: u16,
    pub p: f64,
    pub q: f64,
    pub epoch_ms: u32,
    /// Carried but not verified.
    #[serde(default)]
    pub analyst_signature: Vec<u8>,
}

impl QueryAnnounce {
    pub fn validate(&self) -> Result<()> {
        PrivacyParams::new(self.p, self.q).map_err(|e| PayloadError::Invalid(e.to_string()))?;
        TableGeometry::new(self.rows, self.message_bytes)
            .map_err(|e| PayloadError::Invalid(e.to_string()))?;
        if self.rows < 2 {
            return Err(PayloadError::Invalid(
                "a query table needs at least 2 rows".into(),
            ));
        }
        if self.attribute_labels.len() > self.rows as usize {
            return Err(PayloadError::Invalid(format!(
                "{} labels exceed {} rows",
                self.attribute_labels.len(),
                self.rows
            )));
        }
        let needed = PrivatizedVector::required_message_bytes(self.attribute_labels.len());
        if (self.message_bytes as usize) < needed {
            return Err(PayloadError::Invalid(format!(
                "{} attributes need {needed} message bytes, query has {}",
                self.attribute_labels.len(),
                self.message_bytes
            )));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<PrivacyParams> {
        PrivacyParams::new(self.p, self.q).map_err(|e| PayloadError::Invalid(e.to_string()))
    }

    pub fn geometry(&self) -> Result<TableGeometry> {
        TableGeometry::new(self.rows, self.message_bytes)
            .map_err(|e| PayloadError::Invalid(e.to_string()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.query_id.to_le_bytes());
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.message_bytes.to_le_bytes());
        out.extend_from_slice(&self.p.to_le_bytes());
        out.extend_from_slice(&self.q.to_le_bytes());
        out.extend_from_slice(&self.epoch_ms.to_le_bytes());
        out.extend_from_slice(&(self.attribute_labels.len() as u32).to_le_bytes());
        for label in &self.attribute_labels {
            let bytes = &label.as_bytes()[..label.len().min(u16::MAX as usize)];
            out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out.extend_from_slice(&(self.analyst_signature.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.analyst_signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let query_id = c.u64()?;
        let rows = c.u32()?;
        let message_bytes = c.u16()?;
        let p = c.f64()?;
        let q = c.f64()?;
        let epoch_ms = c.u32()?;
        let count = c.u32()? as usize;
        let mut attribute_labels = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = c.u16()? as usize;
            let raw = c.take(len)?;
            attribute_labels.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| PayloadError::Invalid("label is not UTF-8".into()))?,
            );
        }
        let sig_len = c.u32()? as usize;
        let analyst_signature = c.take(sig_len)?.to_vec();
        c.finish()?;
        Ok(Self {
            query_id,
            attribute_labels,
            rows,
            message_bytes,
            p,
            q,
            epoch_ms,
            analyst_signature,
        })
    }
}

/// Error codes carried in the first byte of an ERROR payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    /// Positive acknowledgement of a client abort.
    Ok = 0,
    Duplicate = 1,
    Geometry = 2,
    /// The requested epoch is not the open one; the frame's epoch id names
    /// the epoch currently open.
    EpochMismatch = 3,
    NotReady = 4,
    Aborted = 5,
    Malformed = 6,
    /// Client to server: withdraw the share of the owner in the payload.
    ClientAbort = 7,
    NoQuery = 8,
    Internal = 9,
}

impl ErrorCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        use ErrorCode::*;
        [
            Ok,
            Duplicate,
            Geometry,
            EpochMismatch,
            NotReady,
            Aborted,
            Malformed,
            ClientAbort,
            NoQuery,
            Internal,
        ]
        .into_iter()
        .find(|c| *c as u8 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub detail: Vec<u8>,
}

impl ErrorPayload {
    pub fn text(code: ErrorCode, message: impl AsRef<str>) -> Self {
        Self {
            code,
            detail: message.as_ref().as_bytes().to_vec(),
        }
    }

    pub fn message(&self) -> String {
        String::from_utf8_lossy(&self.detail).into_owned()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.detail.len());
        out.push(self.code as u8);
        out.extend_from_slice(&self.detail);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let raw = c.u8()?;
        let code = ErrorCode::from_u8(raw)
            .ok_or_else(|| PayloadError::Invalid(format!("error code {raw}")))?;
        Ok(Self {
            code,
            detail: c.rest().to_vec(),
        })
    }
}

/// WRITE_SHARE from a client: the owner's fingerprint followed by an
/// encoded DPF key.
pub fn encode_write_share(owner: &OwnerId, key_bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + key_bytes.len());
    out.extend_from_slice(owner.as_bytes());
    out.extend_from_slice(key_bytes);
    out
}

pub fn decode_write_share(bytes: &[u8]) -> Result<(OwnerId, &[u8])> {
    let mut c = Cursor::new(bytes);
    let owner = c.owner()?;
    Ok((owner, c.rest()))
}

/// EPOCH_CLOSE between servers: the sender's contributor list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloseNotice {
    pub from: u8,
    pub owners: Vec<OwnerId>,
}

impl CloseNotice {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.from];
        out.extend_from_slice(&(self.owners.len() as u32).to_le_bytes());
        for o in &self.owners {
            out.extend_from_slice(o.as_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let from = c.u8()?;
        let n = c.u32()? as usize;
        let owners = (0..n).map(|_| c.owner()).collect::<Result<Vec<_>>>()?;
        c.finish()?;
        Ok(Self { from, owners })
    }
}

/// INTERMEDIATE between servers.
pub fn encode_intermediate(from: u8, table: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + table.len());
    out.push(from);
    out.extend_from_slice(table);
    out
}

pub fn decode_intermediate(bytes: &[u8]) -> Result<(u8, &[u8])> {
    let mut c = Cursor::new(bytes);
    let from = c.u8()?;
    Ok((from, c.rest()))
}

/// Sub-kinds of AUDIT_MASKED_ROWS.
pub const MASKED_KIND_SEEDS: u8 = 0;
pub const MASKED_KIND_ROWS: u8 = 1;

/// A batch of per-owner fixed-size records sent between servers during an
/// audit. `kind` distinguishes pairwise seeds from masked evaluations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditBatch {
    pub from: u8,
    pub kind: u8,
    pub entries: Vec<(OwnerId, Vec<u8>)>,
}

impl AuditBatch {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.from, self.kind];
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (owner, data) in &self.entries {
            out.extend_from_slice(owner.as_bytes());
            out.extend_from_slice(data);
        }
        out
    }

    /// `record_len` is the fixed size of each entry's data.
    pub fn decode(bytes: &[u8], record_len: impl Fn(u8) -> usize) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let from = c.u8()?;
        let kind = c.u8()?;
        let n = c.u32()? as usize;
        let len = record_len(kind);
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let owner = c.owner()?;
            entries.push((owner, c.take(len)?.to_vec()));
        }
        c.finish()?;
        Ok(Self {
            from,
            kind,
            entries,
        })
    }

    pub fn seeds(from: u8, entries: Vec<(OwnerId, Seed)>) -> Self {
        Self {
            from,
            kind: MASKED_KIND_SEEDS,
            entries: entries.into_iter().map(|(o, s)| (o, s.to_vec())).collect(),
        }
    }

    pub fn record_len(geometry: &TableGeometry) -> impl Fn(u8) -> usize {
        let table = geometry.table_len();
        move |kind| {
            if kind == MASKED_KIND_SEEDS {
                SEED_LEN
            } else {
                table
            }
        }
    }
}

/// One owner's row digests.
pub type OwnerDigests = (OwnerId, Vec<RowDigest>);

/// AUDIT_ZEROCHECK: per-owner row digests sent to the referee.
pub fn encode_digests(from: u8, entries: &[OwnerDigests]) -> Vec<u8> {
    AuditBatch {
        from,
        kind: 0,
        entries: entries.iter().map(|(o, d)| (*o, d.concat())).collect(),
    }
    .encode()
}

pub fn decode_digests(bytes: &[u8], rows: u32) -> Result<(u8, Vec<OwnerDigests>)> {
    let batch = AuditBatch::decode(bytes, |_| rows as usize * DIGEST_LEN)?;
    let entries = batch
        .entries
        .into_iter()
        .map(|(o, flat)| {
            let digests = flat
                .chunks_exact(DIGEST_LEN)
                .map(|c| c.try_into().unwrap())
                .collect();
            (o, digests)
        })
        .collect();
    Ok((batch.from, entries))
}

/// AUDIT_VERDICT: the referee's decision per owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictBatch {
    pub from: u8,
    pub verdicts: Vec<(OwnerId, Verdict, u32)>,
}

fn verdict_code(v: &Verdict) -> u8 {
    match v {
        Verdict::Accept => 0,
        Verdict::AcceptDummy => 1,
        Verdict::Reject(RejectReason::NotAPointFunction { .. }) => 2,
        Verdict::Reject(RejectReason::EmptyWrite) => 3,
    }
}

impl VerdictBatch {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.from];
        out.extend_from_slice(&(self.verdicts.len() as u32).to_le_bytes());
        for (owner, verdict, zero_rows) in &self.verdicts {
            out.extend_from_slice(owner.as_bytes());
            out.push(verdict_code(verdict));
            out.extend_from_slice(&zero_rows.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], rows: u32) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let from = c.u8()?;
        let n = c.u32()? as usize;
        let mut verdicts = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let owner = c.owner()?;
            let code = c.u8()?;
            let zero_rows = c.u32()?;
            let verdict = match code {
                0 => Verdict::Accept,
                1 => Verdict::AcceptDummy,
                2 => Verdict::Reject(RejectReason::NotAPointFunction { zero_rows, rows }),
                3 => Verdict::Reject(RejectReason::EmptyWrite),
                other => return Err(PayloadError::Invalid(format!("verdict code {other}"))),
            };
            verdicts.push((owner, verdict, zero_rows));
        }
        c.finish()?;
        Ok(Self { from, verdicts })
    }
}
