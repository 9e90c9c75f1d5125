//! Five-bit left-shifting LFSRs used as background switching activity.
//!
//! Bits are numbered 1..=5 from the least significant end. Each step shifts
//! left by one, drops the old bit 5 and feeds `bit4 ^ bit5` of the old state
//! into bit 1. The feedback polynomial x⁵ + x⁴ + 1 factors as
//! (x² + x + 1)(x³ + x + 1), so the 31 nonzero states split into orbits of
//! length 3, 7 and 21 rather than one maximal cycle.

use thiserror::Error;

pub const LFSR_BITS: u32 = 5;
const MASK: u8 = (1 << LFSR_BITS) - 1;

/// Number of registers in the background bank.
pub const BANK_SIZE: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LfsrError {
    #[error("LFSR state must be a nonzero 5-bit value, got {0:#04x}")]
    InvalidState(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LfsrState(u8);

impl LfsrState {
    pub fn new(bits: u8) -> Result<Self, LfsrError> {
        if bits == 0 || bits > MASK {
            return Err(LfsrError::InvalidState(bits));
        }
        Ok(Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn step(self) -> Self {
        let feedback = ((self.0 >> 3) ^ (self.0 >> 4)) & 1;
        Self(((self.0 << 1) & MASK) | feedback)
    }
}

/// One clock of a raw 5-bit register value.
pub fn lfsr_step(bits: u8) -> Result<u8, LfsrError> {
    LfsrState::new(bits).map(|s| s.step().bits())
}

/// What the background bank contributes to each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivityKind {
    /// Bits toggled across one clock, summed over the bank (dynamic current).
    Switching,
    /// Bits currently set, summed over the bank (stored-state impedance).
    StoredWeight,
}

/// The bank's per-clock activity, tabulated over one full period of the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundActivity {
    per_clock: Vec<f64>,
}

impl BackgroundActivity {
    pub fn new(seeds: &[u8; BANK_SIZE], kind: ActivityKind) -> Result<Self, LfsrError> {
        let start = seeds
            .iter()
            .map(|&s| LfsrState::new(s))
            .collect::<Result<Vec<_>, _>>()?;
        let mut states = start.clone();
        let mut per_clock = Vec::new();
        loop {
            let next: Vec<LfsrState> = states.iter().map(|s| s.step()).collect();
            let value = match kind {
                ActivityKind::Switching => states
                    .iter()
                    .zip(&next)
                    .map(|(a, b)| (a.bits() ^ b.bits()).count_ones())
                    .sum::<u32>(),
                ActivityKind::StoredWeight => states.iter().map(|s| s.bits().count_ones()).sum(),
            };
            per_clock.push(value as f64);
            states = next;
            if states == start {
                break;
            }
        }
        Ok(Self { per_clock })
    }

    pub fn period(&self) -> usize {
        self.per_clock.len()
    }

    /// Activity at global clock index `clock`.
    pub fn at(&self, clock: u64) -> f64 {
        self.per_clock[(clock % self.per_clock.len() as u64) as usize]
    }
}
