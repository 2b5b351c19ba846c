//! Binary-message tokenization, the message decoder, and bit decoding.

mod decoder;
mod train;

pub use decoder::{load_checkpoint, save_checkpoint, DecoderModel, PROB_CLAMP};
pub use train::{train_decoder, DecoderTrainConfig, DecoderTrainReport, FeatureConditioning};

use crate::error::{Error, Result};
use rand::Rng;

/// CLIP-style token context length.
pub const CONTEXT_LEN: usize = 77;
/// Start-of-text token.
pub const TOKEN_START: u32 = 49406;
/// End-of-text token.
pub const TOKEN_END: u32 = 49407;
/// Payload tokens live in `[1, TOKEN_PAYLOAD_MAX]`.
pub const TOKEN_PAYLOAD_MAX: u32 = 49405;
/// Longest message that fits the 77-slot context with frame tokens.
pub const MAX_BITS: usize = 74;

/// An L-bit secret message, `1 <= L <= 74`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageBits {
    bits: Vec<u8>,
}

impl MessageBits {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.len() > MAX_BITS {
            return Err(Error::Invariant(format!(
                "message length {} outside [1, {MAX_BITS}]",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Invariant("message bits must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Result<Self> {
        let bits = (0..len).map(|_| u8::from(rng.random::<bool>())).collect();
        Self::new(bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self { bits: self.bits.iter().map(|b| 1 - b).collect() }
    }

    /// Pack to hex, big-endian bit order, zero-padded to a byte boundary.
    pub fn to_hex(&self) -> String {
        let mut bytes = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b == 1 {
                bytes[i / 8] |= 1 << (7 - (i % 8));
            }
        }
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parse a hex string as the first `len` bits, big-endian bit order.
    /// The string must be exactly `ceil(len / 8)` bytes and any padding
    /// bits beyond `len` must be zero.
    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        if len == 0 || len > MAX_BITS {
            return Err(Error::Invariant(format!("message length {len} outside [1, {MAX_BITS}]")));
        }
        let expect_chars = len.div_ceil(8) * 2;
        if hex.len() != expect_chars {
            return Err(Error::Config(format!(
                "hex message has {} chars, expected {expect_chars} for {len} bits",
                hex.len()
            )));
        }
        let mut bytes = Vec::with_capacity(hex.len() / 2);
        for i in (0..hex.len()).step_by(2) {
            let byte = u8::from_str_radix(&hex[i..i + 2], 16)
                .map_err(|_| Error::Config(format!("invalid hex message '{hex}'")))?;
            bytes.push(byte);
        }
        let mut bits = Vec::with_capacity(len);
        for i in 0..bytes.len() * 8 {
            let bit = (bytes[i / 8] >> (7 - (i % 8))) & 1;
            if i < len {
                bits.push(bit);
            } else if bit != 0 {
                return Err(Error::Config(format!(
                    "hex message has nonzero padding bits past bit {len}"
                )));
            }
        }
        Self::new(bits)
    }
}

/// A 77-slot token sequence: start frame, one payload token per bit, end
/// frame, zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: [u32; CONTEXT_LEN],
}

impl TokenSequence {
    pub fn tokens(&self) -> &[u32; CONTEXT_LEN] {
        &self.tokens
    }

    /// Number of payload tokens (slots strictly between the frame tokens).
    pub fn payload_len(&self) -> usize {
        self.tokens
            .iter()
            .position(|&t| t == TOKEN_END)
            .map(|p| p - 1)
            .unwrap_or(0)
    }
}

/// Payload token for 1-based bit position `i` with value `b`:
/// `1 + floor((2(i-1) + b) * 49404 / (2L - 1))`.
///
/// The map is affine in the joint index `2(i-1)+b`, spreads tokens
/// uniformly over `[1, 49405]`, and is injective for every `L <= 74`
/// because the stride `49404 / (2L-1)` is at least 1.
pub fn bit_token(len: usize, i: usize, b: u8) -> u32 {
    debug_assert!(i >= 1 && i <= len && b <= 1);
    let k = (2 * (i - 1) + b as usize) as u64;
    let span = (TOKEN_PAYLOAD_MAX - 1) as u64; // 49404
    let denom = (2 * len - 1) as u64;
    1 + ((k * span) / denom) as u32
}

/// Map a message to its framed, zero-padded token sequence.
pub fn tokenize(bits: &MessageBits) -> TokenSequence {
    let l = bits.len();
    let mut tokens = [0u32; CONTEXT_LEN];
    tokens[0] = TOKEN_START;
    for (i, &b) in bits.bits().iter().enumerate() {
        tokens[i + 1] = bit_token(l, i + 1, b);
    }
    tokens[l + 1] = TOKEN_END;
    TokenSequence { tokens }
}

/// Summed binary cross-entropy between predicted probabilities and the
/// target bits; probabilities are clamped 1e-7 away from {0, 1}.
pub fn message_loss(predicted: &[f64], target: &MessageBits) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "predicted {} probabilities for {} target bits",
            predicted.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    for (&p, &m) in predicted.iter().zip(target.bits()) {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        loss -= if m == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(loss)
}

/// Threshold probabilities into bits; exactly 0.5 decodes to 1.
pub fn decode_bits(probabilities: &[f64]) -> Result<MessageBits> {
    MessageBits::new(
        probabilities
            .iter()
            .map(|&p| u8::from(p >= 0.5))
            .collect(),
    )
}
