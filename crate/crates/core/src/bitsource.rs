//! Driving bit patterns for the two transmitter sources.
//!
//! Characterization runs use either a repetitive 8-bit word `10101010` or the
//! 2^15 - 1 maximal-length pseudo-random sequence. Both are periodic, so a
//! [`BitSequence`] stores exactly one period plus a logical length; any index
//! is reduced modulo the period.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const WORD8_PATTERN: [u8; 8] = [1, 0, 1, 0, 1, 0, 1, 0];
pub const PRBS15_PERIOD: usize = (1 << 15) - 1;
pub const PRBS15_DEFAULT_SEED: u16 = 0x7FFF;
/// Length of the PRBS analysis window collected by the acquisition card.
pub const DEFAULT_ANALYSIS_WINDOW: usize = 127;

const PRBS15_MASK: u16 = 0x7FFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceKind {
    Word8,
    Prbs15,
    Custom,
}

impl SequenceKind {
    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Word8 => "word8",
            SequenceKind::Prbs15 => "prbs15",
            SequenceKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "word8" => Ok(SequenceKind::Word8),
            "prbs15" => Ok(SequenceKind::Prbs15),
            "custom" => Ok(SequenceKind::Custom),
            other => Err(Error::invalid(format!("unknown sequence kind `{other}`"))),
        }
    }
}

/// Fibonacci LFSR for x^15 + x^14 + 1.
///
/// The output bit is the top register bit before the shift; the feedback
/// (bit 14 xor bit 13) enters at the bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrbsState {
    register: u16,
}

impl PrbsState {
    pub fn new(seed: u16) -> Result<Self> {
        let register = seed & PRBS15_MASK;
        if register == 0 {
            return Err(Error::invalid("PRBS15 seed must be nonzero in its low 15 bits"));
        }
        Ok(Self { register })
    }

    pub fn register(self) -> u16 {
        self.register
    }
}

impl Default for PrbsState {
    fn default() -> Self {
        Self {
            register: PRBS15_DEFAULT_SEED,
        }
    }
}

pub fn prbs15_next(state: PrbsState) -> (u8, PrbsState) {
    let r = state.register;
    let out = ((r >> 14) & 1) as u8;
    let feedback = ((r >> 14) ^ (r >> 13)) & 1;
    let register = ((r << 1) | feedback) & PRBS15_MASK;
    (out, PrbsState { register })
}

/// A periodic bit stream truncated to `len` bits.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitSequence {
    kind: SequenceKind,
    pattern: Vec<u8>,
    len: usize,
    /// Register seed of a PRBS pattern, zero otherwise.
    seed: u16,
}

impl BitSequence {
    pub fn word8() -> Self {
        Self {
            kind: SequenceKind::Word8,
            pattern: WORD8_PATTERN.to_vec(),
            len: WORD8_PATTERN.len(),
            seed: 0,
        }
    }

    pub fn prbs15(seed: u16) -> Result<Self> {
        let mut state = PrbsState::new(seed)?;
        let mut pattern = Vec::with_capacity(PRBS15_PERIOD);
        for _ in 0..PRBS15_PERIOD {
            let (bit, next) = prbs15_next(state);
            pattern.push(bit);
            state = next;
        }
        Ok(Self {
            kind: SequenceKind::Prbs15,
            pattern,
            len: PRBS15_PERIOD,
            seed,
        })
    }

    /// One period of an arbitrary pattern.
    pub fn custom(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::invalid("custom sequence must contain at least one bit"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::invalid(format!("bit value {b} is not 0 or 1")));
        }
        let len = bits.len();
        Ok(Self {
            kind: SequenceKind::Custom,
            pattern: bits,
            len,
            seed: 0,
        })
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    /// Register seed of a PRBS pattern, zero for other kinds.
    pub fn prbs_seed(&self) -> u16 {
        self.seed
    }

    pub fn period(&self) -> usize {
        self.pattern.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit `index` of the infinite periodic stream.
    #[inline]
    pub fn bit(&self, index: u64) -> u8 {
        self.pattern[(index % self.pattern.len() as u64) as usize]
    }

    /// One full period of the stream.
    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }

    /// The first `len` bits.
    pub fn bits(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.len as u64).map(|i| self.bit(i))
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.bits().collect()
    }

    /// The first `len` bits as a line of `0`/`1` characters.
    pub fn to_text(&self) -> String {
        self.bits().map(|b| if b == 1 { '1' } else { '0' }).collect()
    }

    /// Parses a line of `0`/`1` characters into a custom sequence; surrounding
    /// whitespace is ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let bits = text
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::invalid(format!("unexpected character `{other}` in bit string"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::custom(bits)
    }
}

/// The first `n` bits of the periodic stream of `kind`.
///
/// `seed` is the PRBS register seed and is ignored for the fixed word. Custom
/// sequences have no generator; build them with [`BitSequence::custom`].
pub fn generate_sequence(kind: SequenceKind, n: usize, seed: u16) -> Result<BitSequence> {
    if n == 0 {
        return Err(Error::invalid("sequence length must be at least 1"));
    }
    let mut seq = match kind {
        SequenceKind::Word8 => BitSequence::word8(),
        SequenceKind::Prbs15 => BitSequence::prbs15(seed)?,
        SequenceKind::Custom => return Err(Error::invalid("custom sequences are built from explicit bits")),
    };
    seq.len = n;
    Ok(seq)
}

/// `len` consecutive bits starting at `start`, wrapping at the period boundary.
pub fn slice_window(seq: &BitSequence, start: u64, len: usize) -> BitSequence {
    assert!(len >= 1, "window length must be at least 1");
    let period = seq.period() as u64;
    let offset = (start % period) as usize;
    let mut pattern = Vec::with_capacity(seq.pattern.len());
    pattern.extend_from_slice(&seq.pattern[offset..]);
    pattern.extend_from_slice(&seq.pattern[..offset]);
    BitSequence {
        kind: seq.kind,
        pattern,
        len,
        seed: seq.seed,
    }
}

/// Maximal runs of identical bits inside the first `len` bits: `(start, length, bit)`.
pub fn runs(seq: &BitSequence) -> Vec<(usize, usize, u8)> {
    let bits = seq.to_vec();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=bits.len() {
        if i == bits.len() || bits[i] != bits[start] {
            out.push((start, i - start, bits[start]));
            start = i;
        }
    }
    out
}
