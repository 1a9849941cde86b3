//! Framing: a 4-byte big-endian body length, then a UTF-8 JSON body
//! `{"type": ..., "msg_id": ..., "payload": ...}`.

use std::io::{ErrorKind, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{NetError, Result};

pub const MAX_BODY: usize = 64 * 1024 * 1024;
pub const PREFIX_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    Hello,
    Solve,
    Result,
    Ping,
    Pong,
    Error,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub msg_id: u64,
    #[serde(default)]
    pub payload: Value,
}

impl WireMessage {
    pub fn new(kind: MessageType, msg_id: u64, payload: Value) -> Self {
        Self { kind, msg_id, payload }
    }

    /// `msg_id` of the request a reply answers, if stated.
    pub fn in_reply_to(&self) -> Option<u64> {
        self.payload.get("in_reply_to").and_then(Value::as_u64)
    }
}

pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(msg).map_err(|e| NetError::Protocol(e.to_string()))?;
    if body.len() > MAX_BODY {
        return Err(NetError::Framing(format!("body of {} bytes exceeds the {MAX_BODY} byte limit", body.len())));
    }
    let mut out = Vec::with_capacity(PREFIX_LEN + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

fn body_len(prefix: [u8; PREFIX_LEN]) -> Result<usize> {
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_BODY {
        return Err(NetError::Framing(format!("length prefix {len} exceeds the {MAX_BODY} byte limit")));
    }
    Ok(len)
}

fn parse_body(body: &[u8]) -> Result<WireMessage> {
    serde_json::from_slice(body).map_err(|e| NetError::Protocol(e.to_string()))
}

/// First complete message in `buf` and the bytes it used, or `None` when
/// more data is needed.
pub fn decode_message(buf: &[u8]) -> Result<Option<(WireMessage, usize)>> {
    let Some(prefix) = buf.first_chunk::<PREFIX_LEN>() else {
        return Ok(None);
    };
    let len = body_len(*prefix)?;
    let Some(body) = buf.get(PREFIX_LEN..PREFIX_LEN + len) else {
        return Ok(None);
    };
    Ok(Some((parse_body(body)?, PREFIX_LEN + len)))
}

/// Incremental decoder for a byte stream arriving in arbitrary pieces.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_message(&mut self) -> Result<Option<WireMessage>> {
        match decode_message(&self.buf)? {
            Some((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            None => Ok(None),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

pub fn write_message(w: &mut impl Write, msg: &WireMessage) -> Result<()> {
    w.write_all(&encode_message(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Next message, or `None` on a clean end of stream between messages.
pub fn read_message(r: &mut impl Read) -> Result<Option<WireMessage>> {
    let mut prefix = [0u8; PREFIX_LEN];
    let mut got = 0;
    while got < PREFIX_LEN {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(NetError::Framing("stream ended inside a length prefix".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let mut body = vec![0u8; body_len(prefix)?];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => NetError::Framing("stream ended inside a message body".into()),
        _ => e.into(),
    })?;
    parse_body(&body).map(Some)
}
