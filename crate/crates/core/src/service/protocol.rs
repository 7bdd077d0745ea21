//! Wire format for the streaming service.
//!
//! Every frame is a 24-byte little-endian header followed by `payload_len`
//! payload bytes:
//!
//! | field       | size | notes                         |
//! |-------------|------|-------------------------------|
//! | magic       | 4    | `EFAE`                        |
//! | version     | u16  | [`PROTOCOL_VERSION`]          |
//! | msg_type    | u16  | see [`MsgType`]               |
//! | session_id  | u64  | 0 for INIT_SESSION            |
//! | payload_len | u64  |                               |
//!
//! Tensors inside payloads use the `EFT1` body encoding without its magic.
//! Payloads by message type:
//!
//! - INIT_SESSION: `total_steps u32, inject_lo u32, inject_hi u32,
//!   n_layers u32, layers n×u32, adain_lo u32, adain_hi u32, readout_t u32,
//!   readout_layer u32, epsilon f64`
//! - PUT_REFERENCE: `object u32, t u32, layer u32, features, ref_mask`
//! - REARRANGE: `t u32, layer u32, target, n_objects u32, n × target_mask`
//! - ADAIN: `t u32, content, style, content_mask, style_mask`
//! - READOUT_FLOW: `object u32`
//! - CLOSE_SESSION: empty
//! - OK: empty; the header carries the session id
//! - ERROR: `code u16`, then a UTF-8 diagnostic filling the rest
//! - TENSOR_RESULT: `count u32, count × tensor`

use std::collections::BTreeSet;
use std::io::{self, Read, Write};

use crate::config::{SessionConfig, StepRange};
use crate::error::{Error, Result};
use crate::tensor_io::{Reader, Tensor};
use crate::types::{FeatureMap, ObjectMask};

pub const FRAME_MAGIC: [u8; 4] = *b"EFAE";
pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
/// Frames announcing a larger payload are refused.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum MsgType {
    InitSession = 1,
    PutReference = 2,
    Rearrange = 3,
    Adain = 4,
    ReadoutFlow = 5,
    CloseSession = 6,
    Ok = 100,
    Error = 101,
    TensorResult = 102,
}

impl MsgType {
    pub fn from_code(code: u16) -> Option<Self> {
        Some(match code {
            1 => Self::InitSession,
            2 => Self::PutReference,
            3 => Self::Rearrange,
            4 => Self::Adain,
            5 => Self::ReadoutFlow,
            6 => Self::CloseSession,
            100 => Self::Ok,
            101 => Self::Error,
            102 => Self::TensorResult,
            _ => return None,
        })
    }
}

/// Diagnostic codes carried by ERROR frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    VersionMismatch = 1,
    BadMagic = 2,
    UnknownMessageType = 3,
    MalformedPayload = 4,
    UnknownSession = 5,
    MissingReference = 6,
    OverlappingTargetMasks = 7,
    InvalidConfig = 8,
    NoReadoutRecorded = 9,
    InvalidInput = 10,
    PayloadTooLarge = 11,
    Internal = 12,
}

impl ErrorCode {
    pub fn from_code(code: u16) -> Option<Self> {
        Some(match code {
            1 => Self::VersionMismatch,
            2 => Self::BadMagic,
            3 => Self::UnknownMessageType,
            4 => Self::MalformedPayload,
            5 => Self::UnknownSession,
            6 => Self::MissingReference,
            7 => Self::OverlappingTargetMasks,
            8 => Self::InvalidConfig,
            9 => Self::NoReadoutRecorded,
            10 => Self::InvalidInput,
            11 => Self::PayloadTooLarge,
            12 => Self::Internal,
            _ => return None,
        })
    }

    /// Wire code for an engine error.
    pub fn for_error(err: &Error) -> Self {
        match err {
            Error::UnknownSession(_) => Self::UnknownSession,
            Error::MissingReference { .. } => Self::MissingReference,
            Error::OverlappingTargetMasks(..) => Self::OverlappingTargetMasks,
            Error::InvalidConfig(_) => Self::InvalidConfig,
            Error::NoReadoutRecorded => Self::NoReadoutRecorded,
            Error::Parse(_)
            | Error::BadMagic(_)
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::TruncatedPayload { .. } => Self::MalformedPayload,
            Error::Io(_) => Self::Internal,
            _ => Self::InvalidInput,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub magic: [u8; 4],
    pub version: u16,
    pub msg_type: u16,
    pub session_id: u64,
    pub payload_len: u64,
}

impl Header {
    pub fn new(msg_type: MsgType, session_id: u64, payload_len: usize) -> Self {
        Self {
            magic: FRAME_MAGIC,
            version: PROTOCOL_VERSION,
            msg_type: msg_type as u16,
            session_id,
            payload_len: payload_len as u64,
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(&self.magic);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.msg_type.to_le_bytes());
        b[8..16].copy_from_slice(&self.session_id.to_le_bytes());
        b[16..24].copy_from_slice(&self.payload_len.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Self {
        Self {
            magic: b[..4].try_into().unwrap(),
            version: u16::from_le_bytes(b[4..6].try_into().unwrap()),
            msg_type: u16::from_le_bytes(b[6..8].try_into().unwrap()),
            session_id: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            payload_len: u64::from_le_bytes(b[16..24].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    InitSession(SessionConfig),
    PutReference {
        object: u32,
        t: u32,
        layer: u32,
        reference: FeatureMap,
        m_ref: ObjectMask,
    },
    Rearrange {
        t: u32,
        layer: u32,
        target: FeatureMap,
        target_masks: Vec<ObjectMask>,
    },
    Adain {
        t: u32,
        content: FeatureMap,
        style: FeatureMap,
        m_content: ObjectMask,
        m_style: ObjectMask,
    },
    ReadoutFlow {
        object: u32,
    },
    CloseSession,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok { session_id: u64 },
    Error { code: u16, message: String },
    Tensors(Vec<Tensor>),
}

impl Response {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error {
            code: code as u16,
            message: message.into(),
        }
    }

    pub fn from_error(err: &Error) -> Self {
        Self::error(ErrorCode::for_error(err), format!("{}: {err}", err.code()))
    }
}

pub fn encode_config(cfg: &SessionConfig, out: &mut Vec<u8>) {
    let mut put = |v: u32| out.extend_from_slice(&v.to_le_bytes());
    put(cfg.total_steps);
    put(cfg.inject_t_range.lo);
    put(cfg.inject_t_range.hi);
    put(cfg.inject_layers.len() as u32);
    cfg.inject_layers.iter().for_each(|l| put(*l));
    put(cfg.adain_t_range.lo);
    put(cfg.adain_t_range.hi);
    put(cfg.readout_t);
    put(cfg.readout_layer);
    out.extend_from_slice(&cfg.epsilon.to_le_bytes());
}

fn decode_config(r: &mut Reader) -> Result<SessionConfig> {
    let total_steps = r.u32()?;
    let inject_t_range = StepRange::new(r.u32()?, r.u32()?);
    let n = r.u32()? as usize;
    if n > r.remaining() / 4 {
        return Err(Error::Parse(format!("layer count {n} exceeds payload")));
    }
    let inject_layers = (0..n).map(|_| r.u32()).collect::<Result<BTreeSet<_>>>()?;
    Ok(SessionConfig {
        total_steps,
        inject_t_range,
        inject_layers,
        adain_t_range: StepRange::new(r.u32()?, r.u32()?),
        readout_t: r.u32()?,
        readout_layer: r.u32()?,
        epsilon: r.f64()?,
    })
}

fn feature_map(r: &mut Reader) -> Result<FeatureMap> {
    FeatureMap::try_from(r.tensor()?)
}

fn mask(r: &mut Reader) -> Result<ObjectMask> {
    ObjectMask::try_from(r.tensor()?)
}

impl Request {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Request::InitSession(_) => MsgType::InitSession,
            Request::PutReference { .. } => MsgType::PutReference,
            Request::Rearrange { .. } => MsgType::Rearrange,
            Request::Adain { .. } => MsgType::Adain,
            Request::ReadoutFlow { .. } => MsgType::ReadoutFlow,
            Request::CloseSession => MsgType::CloseSession,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let u32le = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        match self {
            Request::InitSession(cfg) => encode_config(cfg, &mut out),
            Request::PutReference {
                object,
                t,
                layer,
                reference,
                m_ref,
            } => {
                u32le(&mut out, *object);
                u32le(&mut out, *t);
                u32le(&mut out, *layer);
                Tensor::from(reference).encode_body(&mut out);
                Tensor::from(m_ref).encode_body(&mut out);
            }
            Request::Rearrange {
                t,
                layer,
                target,
                target_masks,
            } => {
                u32le(&mut out, *t);
                u32le(&mut out, *layer);
                Tensor::from(target).encode_body(&mut out);
                u32le(&mut out, target_masks.len() as u32);
                target_masks.iter().for_each(|m| Tensor::from(m).encode_body(&mut out));
            }
            Request::Adain {
                t,
                content,
                style,
                m_content,
                m_style,
            } => {
                u32le(&mut out, *t);
                Tensor::from(content).encode_body(&mut out);
                Tensor::from(style).encode_body(&mut out);
                Tensor::from(m_content).encode_body(&mut out);
                Tensor::from(m_style).encode_body(&mut out);
            }
            Request::ReadoutFlow { object } => u32le(&mut out, *object),
            Request::CloseSession => {}
        }
        out
    }

    pub fn decode(msg_type: MsgType, payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let req = match msg_type {
            MsgType::InitSession => Request::InitSession(decode_config(&mut r)?),
            MsgType::PutReference => Request::PutReference {
                object: r.u32()?,
                t: r.u32()?,
                layer: r.u32()?,
                reference: feature_map(&mut r)?,
                m_ref: mask(&mut r)?,
            },
            MsgType::Rearrange => {
                let t = r.u32()?;
                let layer = r.u32()?;
                let target = feature_map(&mut r)?;
                let n = r.u32()? as usize;
                // Each mask body is at least 4 bytes.
                if n > r.remaining() / 4 {
                    return Err(Error::Parse(format!("mask count {n} exceeds payload")));
                }
                let target_masks = (0..n).map(|_| mask(&mut r)).collect::<Result<_>>()?;
                Request::Rearrange {
                    t,
                    layer,
                    target,
                    target_masks,
                }
            }
            MsgType::Adain => Request::Adain {
                t: r.u32()?,
                content: feature_map(&mut r)?,
                style: feature_map(&mut r)?,
                m_content: mask(&mut r)?,
                m_style: mask(&mut r)?,
            },
            MsgType::ReadoutFlow => Request::ReadoutFlow { object: r.u32()? },
            MsgType::CloseSession => Request::CloseSession,
            other => return Err(Error::Parse(format!("{other:?} is not a request"))),
        };
        if r.remaining() != 0 {
            return Err(Error::Parse(format!("{} trailing payload bytes", r.remaining())));
        }
        Ok(req)
    }
}

impl Response {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Response::Ok { .. } => MsgType::Ok,
            Response::Error { .. } => MsgType::Error,
            Response::Tensors(_) => MsgType::TensorResult,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Response::Ok { .. } => {}
            Response::Error { code, message } => {
                out.extend_from_slice(&code.to_le_bytes());
                out.extend_from_slice(message.as_bytes());
            }
            Response::Tensors(ts) => {
                out.extend_from_slice(&(ts.len() as u32).to_le_bytes());
                ts.iter().for_each(|t| t.encode_body(&mut out));
            }
        }
        out
    }

    pub fn decode(header: &Header, payload: &[u8]) -> Result<Self> {
        let mut r = Reader::new(payload);
        let resp = match MsgType::from_code(header.msg_type) {
            Some(MsgType::Ok) => Response::Ok {
                session_id: header.session_id,
            },
            Some(MsgType::Error) => {
                let code = r.u16()?;
                let message = String::from_utf8_lossy(r.take(r.remaining())?).into_owned();
                Response::Error { code, message }
            }
            Some(MsgType::TensorResult) => {
                let n = r.u32()? as usize;
                if n > r.remaining() / 4 {
                    return Err(Error::Parse(format!("tensor count {n} exceeds payload")));
                }
                Response::Tensors((0..n).map(|_| r.tensor()).collect::<Result<_>>()?)
            }
            _ => return Err(Error::Parse(format!("unexpected response type {}", header.msg_type))),
        };
        if r.remaining() != 0 {
            return Err(Error::Parse(format!("{} trailing payload bytes", r.remaining())));
        }
        Ok(resp)
    }
}

/// Serializes a whole frame: header then payload.
pub fn encode_frame(msg_type: MsgType, session_id: u64, payload: &[u8]) -> Vec<u8> {
    let mut out = Header::new(msg_type, session_id, payload.len()).to_bytes().to_vec();
    out.extend_from_slice(payload);
    out
}

pub fn write_frame(w: &mut impl Write, msg_type: MsgType, session_id: u64, payload: &[u8]) -> io::Result<()> {
    w.write_all(&encode_frame(msg_type, session_id, payload))?;
    w.flush()
}

/// Reads a header; `Ok(None)` on a clean end of stream before any byte.
pub fn read_header(r: &mut impl Read) -> io::Result<Option<Header>> {
    let mut buf = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Some(Header::from_bytes(&buf)))
}

pub fn read_payload(r: &mut impl Read, len: u64) -> io::Result<Vec<u8>> {
    let mut payload = Vec::new();
    r.take(len).read_to_end(&mut payload)?;
    if (payload.len() as u64) < len {
        return Err(io::ErrorKind::UnexpectedEof.into());
    }
    Ok(payload)
}
