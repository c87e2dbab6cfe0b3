//! Framed wire protocol: a 4-byte big-endian length prefix, then a
//! versioned, line-oriented text body.
//!
//! ```text
//! ema-rpc-v1
//! type=TransformState
//! request_id=42
//! agent_id=agent-1
//! samples=<base64>
//! ```
//!
//! Unknown fields are ignored for forward compatibility. Integers are
//! decimal text; binary blobs travel base64-encoded. The frame length
//! covers exactly the body bytes.

use crate::error::{Error, Result};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use std::collections::BTreeMap;
use std::io::{Read, Write};

pub const PROTOCOL_TAG: &str = "ema-rpc-v1";

/// Refuse frames beyond this size rather than allocating unbounded memory.
pub const MAX_FRAME_BYTES: usize = 256 * 1024 * 1024;

/// One request or response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcMessage {
    pub msg_type: String,
    pub request_id: u64,
    fields: BTreeMap<String, String>,
}

impl RpcMessage {
    pub fn new(msg_type: impl Into<String>, request_id: u64) -> Self {
        RpcMessage {
            msg_type: msg_type.into(),
            request_id,
            fields: BTreeMap::new(),
        }
    }

    pub fn set(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        let key = key.into();
        let value = value.into();
        debug_assert!(!key.contains(['\n', '=']));
        debug_assert!(!value.contains('\n'));
        self.fields.insert(key, value);
        self
    }

    pub fn set_bytes(self, key: impl Into<String>, bytes: &[u8]) -> Self {
        self.set(key, B64.encode(bytes))
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Protocol(format!("missing field `{key}`")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(|s| s.as_str())
    }

    pub fn get_bytes(&self, key: &str) -> Result<Vec<u8>> {
        B64.decode(self.get(key)?)
            .map_err(|_| Error::Protocol(format!("field `{key}` is not valid base64")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Protocol(format!("field `{key}` is not an integer")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::Protocol(format!("field `{key}` is not a number")))
    }

    /// Body text (without the frame prefix).
    pub fn body(&self) -> String {
        let mut out = String::from(PROTOCOL_TAG);
        out.push('\n');
        out.push_str(&format!("type={}\n", self.msg_type));
        out.push_str(&format!("request_id={}\n", self.request_id));
        for (k, v) in &self.fields {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Full frame: length prefix plus body.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.body().into_bytes();
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    /// Parse a frame body.
    pub fn decode(body: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(body)
            .map_err(|_| Error::Protocol("body is not UTF-8".into()))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(PROTOCOL_TAG) => {}
            other => {
                return Err(Error::Protocol(format!(
                    "bad protocol tag {other:?}, expected {PROTOCOL_TAG}"
                )))
            }
        }
        let mut fields = BTreeMap::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            // Unknown or malformed lines are skipped, not fatal.
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let msg_type = fields
            .remove("type")
            .ok_or_else(|| Error::Protocol("missing field `type`".into()))?;
        let request_id = fields
            .remove("request_id")
            .ok_or_else(|| Error::Protocol("missing field `request_id`".into()))?
            .parse()
            .map_err(|_| Error::Protocol("request_id is not an integer".into()))?;
        Ok(RpcMessage {
            msg_type,
            request_id,
            fields,
        })
    }

    /// Blocking read of one framed message.
    pub fn read_from(reader: &mut impl Read) -> Result<Self> {
        let mut len_buf = [0u8; 4];
        reader.read_exact(&mut len_buf)?;
        let len = u32::from_be_bytes(len_buf) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(Error::Protocol(format!(
                "frame of {len} bytes exceeds the {MAX_FRAME_BYTES}-byte limit"
            )));
        }
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body)?;
        RpcMessage::decode(&body)
    }

    /// Blocking write of one framed message.
    pub fn write_to(&self, writer: &mut impl Write) -> Result<()> {
        writer.write_all(&self.encode())?;
        writer.flush()?;
        Ok(())
    }

    /// Fields iterator, for protocol-capture assertions in tests.
    pub fn fields(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// An ok response correlated to a request.
    pub fn ok_response(request_id: u64) -> Self {
        RpcMessage::new("Response", request_id).set("status", "ok")
    }

    /// An error response correlated to a request.
    pub fn error_response(request_id: u64, error: impl Into<String>) -> Self {
        let text: String = error.into().replace('\n', " ");
        RpcMessage::new("Response", request_id)
            .set("status", "error")
            .set("error", text)
    }

    pub fn is_ok(&self) -> bool {
        self.get_opt("status") == Some("ok")
    }
}
