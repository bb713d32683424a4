//! Length-prefixed JSON frames.
//!
//! A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
//! object whose `type` field names the message. Tensor values travel as base64
//! of little-endian `f32`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::ModelParameters;

pub const MAX_FRAME_BYTES: usize = 256 * 1024 * 1024;
const HEADER_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FlMessage {
    Join {
        client_id: String,
    },
    Params {
        round: u64,
        tensors: ModelParameters,
    },
    Update {
        round: u64,
        tensors: ModelParameters,
        num_examples: u64,
    },
    Done {
        #[serde(default, skip_serializing_if = "ModelParameters::is_empty")]
        tensors: ModelParameters,
    },
    Error {
        code: String,
        detail: String,
    },
}

impl FlMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            FlMessage::Join { .. } => "join",
            FlMessage::Params { .. } => "params",
            FlMessage::Update { .. } => "update",
            FlMessage::Done { .. } => "done",
            FlMessage::Error { .. } => "error",
        }
    }

    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        FlMessage::Error {
            code: code.into(),
            detail: detail.into(),
        }
    }
}

/// Wraps an already-serialized payload in a frame.
pub fn frame_payload(payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_FRAME_BYTES {
        return Err(Error::FrameTooLarge(payload.len()));
    }
    let mut frame = Vec::with_capacity(HEADER_BYTES + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(payload);
    Ok(frame)
}

pub fn encode_frame(msg: &FlMessage) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(msg).map_err(|e| Error::MalformedFrame(e.to_string()))?;
    frame_payload(&payload)
}

fn decode_payload(payload: &[u8]) -> Result<FlMessage> {
    serde_json::from_slice(payload).map_err(|e| Error::MalformedFrame(e.to_string()))
}

fn payload_len(header: [u8; HEADER_BYTES]) -> Result<usize> {
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(Error::FrameTooLarge(len));
    }
    Ok(len)
}

/// Decodes exactly one frame; `bytes` must contain nothing else.
pub fn decode_frame(bytes: &[u8]) -> Result<FlMessage> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::MalformedFrame(format!(
            "{} bytes is shorter than the length header",
            bytes.len()
        )));
    }
    let len = payload_len(bytes[..HEADER_BYTES].try_into().expect("4 bytes"))?;
    let body = &bytes[HEADER_BYTES..];
    match body.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(Error::MalformedFrame(format!(
            "truncated payload: header says {len} bytes, {} present",
            body.len()
        ))),
        std::cmp::Ordering::Greater => Err(Error::MalformedFrame(format!(
            "{} trailing bytes after payload",
            body.len() - len
        ))),
        std::cmp::Ordering::Equal => decode_payload(body),
    }
}

pub fn write_frame<W: Write>(writer: &mut W, msg: &FlMessage) -> Result<()> {
    writer.write_all(&encode_frame(msg)?)?;
    writer.flush()?;
    Ok(())
}

/// Reads one frame. A stream that ends mid-frame, or before any byte, yields
/// an `Io` error of kind `UnexpectedEof`.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<FlMessage> {
    let mut header = [0u8; HEADER_BYTES];
    reader.read_exact(&mut header)?;
    let len = payload_len(header)?;
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::MalformedFrame("stream ended mid-frame".into()),
        _ => Error::Io(e),
    })?;
    decode_payload(&payload)
}
