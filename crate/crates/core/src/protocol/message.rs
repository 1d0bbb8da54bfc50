//! Protocol messages and the shared wire codec.
//!
//! Frame layout (big endian):
//!
//! ```text
//! kind:u8 | src:u32 | dst:u32 | seq:u64 | body_len:u32 | body
//! ```
//!
//! Bodies are sequences of `len:u16 | bytes` fields in the field order of the
//! corresponding handshake line. Sealed bodies hold one such sequence inside
//! the seal.

use std::fmt;

use thiserror::Error;

pub const HEADER_LEN: usize = 1 + 4 + 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    KeyReq1 = 1,
    KeyReq2 = 2,
    KeyReq3 = 3,
    KeyResp4 = 4,
    KeyResp5 = 5,
    KeyResp6 = 6,
    Register = 7,
    ManagerHandoff = 8,
    RevokeToManager = 9,
    RevokeToRsu = 10,
    RevokeBroadcast = 11,
    ManagerForward = 12,
}

impl MessageKind {
    pub const ALL: [MessageKind; 12] = [
        MessageKind::KeyReq1,
        MessageKind::KeyReq2,
        MessageKind::KeyReq3,
        MessageKind::KeyResp4,
        MessageKind::KeyResp5,
        MessageKind::KeyResp6,
        MessageKind::Register,
        MessageKind::ManagerHandoff,
        MessageKind::RevokeToManager,
        MessageKind::RevokeToRsu,
        MessageKind::RevokeBroadcast,
        MessageKind::ManagerForward,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| *k as u8 == v)
    }

    pub fn is_revocation(self) -> bool {
        matches!(
            self,
            MessageKind::RevokeToManager
                | MessageKind::RevokeToRsu
                | MessageKind::RevokeBroadcast
                | MessageKind::ManagerForward
        )
    }

    pub fn is_handshake(self) -> bool {
        (self as u8) <= 6
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub src: EntityId,
    pub dst: EntityId,
    /// Stamped by the simulator at send time.
    pub seq: u64,
    pub body: Vec<u8>,
}

impl ProtocolMessage {
    pub fn new(kind: MessageKind, src: EntityId, dst: EntityId, body: Vec<u8>) -> Self {
        ProtocolMessage {
            kind,
            src,
            dst,
            seq: 0,
            body,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.src.0.to_be_bytes());
        out.extend_from_slice(&self.dst.0.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated);
        }
        let kind = MessageKind::from_u8(bytes[0]).ok_or(CodecError::UnknownKind(bytes[0]))?;
        let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
        let src = EntityId(u32_at(1));
        let dst = EntityId(u32_at(5));
        let seq = u64::from_be_bytes(bytes[9..17].try_into().unwrap());
        let len = u32_at(17) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != len {
            return Err(CodecError::LengthMismatch {
                declared: len,
                actual: body.len(),
            });
        }
        Ok(ProtocolMessage {
            kind,
            src,
            dst,
            seq,
            body: body.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated input")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("length mismatch: declared {declared}, actual {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("field {index} has length {len}, expected {expected}")]
    FieldWidth { index: usize, len: usize, expected: usize },
    #[error("field too long ({0} bytes)")]
    FieldTooLong(usize),
}

pub fn encode_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.len() + 2).sum());
    for f in fields {
        assert!(f.len() <= u16::MAX as usize, "field exceeds u16 length prefix");
        out.extend_from_slice(&(f.len() as u16).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

/// Splits a field sequence, requiring exactly `expected` fields.
pub fn decode_fields(bytes: &[u8], expected: usize) -> Result<Vec<&[u8]>, CodecError> {
    let mut fields = Vec::with_capacity(expected);
    let mut rest = bytes;
    while !rest.is_empty() {
        if rest.len() < 2 {
            return Err(CodecError::Truncated);
        }
        let len = u16::from_be_bytes([rest[0], rest[1]]) as usize;
        if rest.len() < 2 + len {
            return Err(CodecError::Truncated);
        }
        fields.push(&rest[2..2 + len]);
        rest = &rest[2 + len..];
    }
    if fields.len() != expected {
        return Err(CodecError::FieldCount {
            expected,
            found: fields.len(),
        });
    }
    Ok(fields)
}

pub fn field_u64(fields: &[&[u8]], index: usize) -> Result<u64, CodecError> {
    fixed_field::<8>(fields, index).map(u64::from_be_bytes)
}

pub fn field_u32(fields: &[&[u8]], index: usize) -> Result<u32, CodecError> {
    fixed_field::<4>(fields, index).map(u32::from_be_bytes)
}

pub fn field_f64(fields: &[&[u8]], index: usize) -> Result<f64, CodecError> {
    field_u64(fields, index).map(f64::from_bits)
}

pub fn fixed_field<const N: usize>(fields: &[&[u8]], index: usize) -> Result<[u8; N], CodecError> {
    let f = fields[index];
    f.try_into().map_err(|_| CodecError::FieldWidth {
        index,
        len: f.len(),
        expected: N,
    })
}

/// Encodes a list of entity ids as one field.
pub fn encode_id_list(ids: &[EntityId]) -> Vec<u8> {
    ids.iter().flat_map(|id| id.0.to_be_bytes()).collect()
}

pub fn decode_id_list(field: &[u8]) -> Result<Vec<EntityId>, CodecError> {
    if field.len() % 4 != 0 {
        return Err(CodecError::Truncated);
    }
    Ok(field
        .chunks_exact(4)
        .map(|c| EntityId(u32::from_be_bytes(c.try_into().unwrap())))
        .collect())
}
