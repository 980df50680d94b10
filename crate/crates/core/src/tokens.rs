//! Token cost estimation.

/// Counts tokens in a serialized payload.
pub trait TokenCounter: Send + Sync {
    fn count(&self, bytes: &[u8]) -> u64;
}

/// Four bytes per token, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct BytesOverFour;

impl TokenCounter for BytesOverFour {
    fn count(&self, bytes: &[u8]) -> u64 {
        estimate_tokens(bytes)
    }
}

pub fn estimate_tokens(bytes: &[u8]) -> u64 {
    tokens_for_len(bytes.len() as u64)
}

pub fn tokens_for_len(len: u64) -> u64 {
    len.div_ceil(4)
}
