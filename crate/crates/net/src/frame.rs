//! Length-prefixed frames.
//!
//! ```text
//! msg_type: u8 | epoch_id: u64 LE | payload_len: u32 LE | payload
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

pub const HEADER_LEN: usize = 13;

/// Largest payload accepted on the wire (128 MiB).
pub const MAX_PAYLOAD: usize = 128 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    QueryAnnounce = 1,
    WriteShare = 2,
    EpochClose = 3,
    Intermediate = 4,
    Result = 5,
    AuditMaskedRows = 6,
    AuditZeroCheck = 7,
    AuditVerdict = 8,
    Error = 15,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        MsgType::QueryAnnounce,
        MsgType::WriteShare,
        MsgType::EpochClose,
        MsgType::Intermediate,
        MsgType::Result,
        MsgType::AuditMaskedRows,
        MsgType::AuditZeroCheck,
        MsgType::AuditVerdict,
        MsgType::Error,
    ];

    /// Frames exchanged between servers rather than with clients.
    pub fn is_peer(self) -> bool {
        matches!(
            self,
            MsgType::EpochClose
                | MsgType::Intermediate
                | MsgType::AuditMaskedRows
                | MsgType::AuditZeroCheck
                | MsgType::AuditVerdict
        )
    }
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(value: u8) -> Result<Self, FrameError> {
        MsgType::ALL
            .into_iter()
            .find(|t| *t as u8 == value)
            .ok_or(FrameError::UnknownType(value))
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte cap")]
    Oversize(usize),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame declares {declared} payload bytes but {actual} follow the header")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("connection closed mid-frame")]
    UnexpectedEof,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub epoch_id: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, epoch_id: u64, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            epoch_id,
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::Oversize(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.epoch_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        let (header, declared) = parse_header(bytes)?;
        let actual = bytes.len() - HEADER_LEN;
        if actual != declared {
            return Err(if actual < declared {
                FrameError::Truncated {
                    needed: HEADER_LEN + declared,
                    have: bytes.len(),
                }
            } else {
                FrameError::LengthMismatch { declared, actual }
            });
        }
        Ok(Frame::new(header.0, header.1, bytes[HEADER_LEN..].to_vec()))
    }

    /// Reads one frame. `Ok(None)` on a clean end of stream before any
    /// header byte.
    pub fn read_from<R: Read>(reader: &mut R) -> Result<Option<Self>, FrameError> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match reader.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(FrameError::UnexpectedEof),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let ((msg_type, epoch_id), len) = parse_header(&header)?;
        let mut payload = vec![0u8; len];
        reader
            .read_exact(&mut payload)
            .map_err(|e| match e.kind() {
                io::ErrorKind::UnexpectedEof => FrameError::UnexpectedEof,
                _ => FrameError::Io(e),
            })?;
        Ok(Some(Frame::new(msg_type, epoch_id, payload)))
    }

    /// Writes the frame with a single `write_all` so concurrent writers
    /// holding the stream lock never interleave partial frames.
    pub fn write_to<W: Write>(&self, writer: &mut W) -> Result<(), FrameError> {
        writer.write_all(&self.encode()?)?;
        writer.flush()?;
        Ok(())
    }
}

fn parse_header(bytes: &[u8]) -> Result<((MsgType, u64), usize), FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let msg_type = MsgType::try_from(bytes[0])?;
    let epoch_id = u64::from_le_bytes(bytes[1..9].try_into().unwrap());
    let len = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Oversize(len));
    }
    Ok(((msg_type, epoch_id), len))
}
