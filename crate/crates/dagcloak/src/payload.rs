//! Byte payloads with a logical length and a (possibly padded) physical length.
//!
//! The bytes past `logical_len` are padding: observers see them in the size
//! totals, ops never read them, and stripping truncates them away.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    bytes: Vec<u8>,
    logical_len: usize,
}

impl Payload {
    /// A payload whose bytes are all logical (no padding).
    pub fn new(bytes: Vec<u8>) -> Self {
        let logical_len = bytes.len();
        Payload { bytes, logical_len }
    }

    /// A payload with explicit padding already present.
    pub fn with_logical_len(bytes: Vec<u8>, logical_len: usize) -> Result<Self> {
        if logical_len > bytes.len() {
            return Err(Error::InvalidArgument(format!(
                "logical_len {} exceeds byte length {}",
                logical_len,
                bytes.len()
            )));
        }
        Ok(Payload { bytes, logical_len })
    }

    /// The true data, without padding.
    pub fn logical(&self) -> &[u8] {
        &self.bytes[..self.logical_len]
    }

    /// All bytes including padding.
    pub fn physical(&self) -> &[u8] {
        &self.bytes
    }

    pub fn logical_len(&self) -> usize {
        self.logical_len
    }

    pub fn physical_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn padding_len(&self) -> usize {
        self.bytes.len() - self.logical_len
    }

    /// Append `extra` padding bytes; logical content is untouched.
    pub fn pad(&mut self, extra: usize) {
        self.bytes.resize(self.bytes.len() + extra, 0);
    }

    /// Drop all padding, leaving only the logical bytes.
    pub fn strip(&mut self) {
        self.bytes.truncate(self.logical_len);
    }

    pub fn into_logical_bytes(mut self) -> Vec<u8> {
        self.bytes.truncate(self.logical_len);
        self.bytes
    }
}
