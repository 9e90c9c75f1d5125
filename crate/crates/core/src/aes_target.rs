//! The attacked computation: first-round SubBytes output of AES-128.

use ndarray::Array2;
use thiserror::Error;

/// Bytes in one AES block (and in an AES-128 key).
pub const BLOCK_BYTES: usize = 16;

/// Number of candidate values for one subkey byte.
pub const GUESS_COUNT: usize = 256;

pub type PlaintextBlock = [u8; BLOCK_BYTES];
pub type AesKey = [u8; BLOCK_BYTES];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AesTargetError {
    #[error("at least 2 measurements are required for correlation, got {0}")]
    TooFewMeasurements(usize),
    #[error("hypothesis matrix must have between 1 and 256 rows, got {0}")]
    BadGuessCount(usize),
}

/// FIPS-197 forward S-box.
#[rustfmt::skip]
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

#[inline]
pub fn sbox(input: u8) -> u8 {
    SBOX[input as usize]
}

/// S-box output for one plaintext byte under one subkey guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntermediateByte(u8);

impl IntermediateByte {
    pub fn value(self) -> u8 {
        self.0
    }

    pub fn hamming_weight(self) -> u32 {
        hamming_weight(self.0)
    }
}

/// `SBOX(p ^ k)`, the value written to memory after round-1 SubBytes.
#[inline]
pub fn intermediate(plaintext: u8, subkey: u8) -> IntermediateByte {
    IntermediateByte(sbox(plaintext ^ subkey))
}

#[inline]
pub fn hamming_weight(value: u8) -> u32 {
    value.count_ones()
}

/// Hypothesized leakage, one row per key guess and one column per measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisMatrix {
    values: Array2<f64>,
}

impl HypothesisMatrix {
    /// Wraps an arbitrary leakage prediction table (rows = guesses).
    pub fn from_array(values: Array2<f64>) -> Result<Self, AesTargetError> {
        let (rows, cols) = values.dim();
        if rows == 0 || rows > GUESS_COUNT {
            return Err(AesTargetError::BadGuessCount(rows));
        }
        if cols < 2 {
            return Err(AesTargetError::TooFewMeasurements(cols));
        }
        Ok(Self { values })
    }

    pub fn guess_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn measurement_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, guess: usize, measurement: usize) -> f64 {
        self.values[[guess, measurement]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Hamming weight of `SBOX(p ^ k)` for all 256 guesses `k` and every plaintext byte.
pub fn build_hypotheses(plaintext_bytes: &[u8]) -> Result<HypothesisMatrix, AesTargetError> {
    if plaintext_bytes.len() < 2 {
        return Err(AesTargetError::TooFewMeasurements(plaintext_bytes.len()));
    }
    let values = Array2::from_shape_fn((GUESS_COUNT, plaintext_bytes.len()), |(k, m)| {
        intermediate(plaintext_bytes[m], k as u8).hamming_weight() as f64
    });
    Ok(HypothesisMatrix { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gf_mul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let carry = a & 0x80 != 0;
            a <<= 1;
            if carry {
                a ^= 0x1b;
            }
            b >>= 1;
        }
        p
    }

    // S-box from its definition: multiplicative inverse in GF(2^8) then the affine map.
    fn sbox_from_definition(x: u8) -> u8 {
        let inv = if x == 0 {
            0
        } else {
            (1..=255u8).find(|&y| gf_mul(x, y) == 1).unwrap()
        };
        let mut out = 0x63u8;
        for i in 0..8 {
            let bit = (inv >> i)
                ^ (inv >> ((i + 4) % 8))
                ^ (inv >> ((i + 5) % 8))
                ^ (inv >> ((i + 6) % 8))
                ^ (inv >> ((i + 7) % 8));
            out ^= (bit & 1) << i;
        }
        out
    }

    #[test]
    fn table_matches_field_definition() {
        for x in 0..=255u8 {
            assert_eq!(sbox(x), sbox_from_definition(x), "entry {x:#04x}");
        }
    }

    #[test]
    fn known_entries() {
        assert_eq!(sbox(0x00), 0x63);
        assert_eq!(sbox(0x53), 0xED);
    }

    #[test]
    fn sbox_is_a_permutation() {
        let mut seen = [false; 256];
        for x in 0..=255u8 {
            seen[sbox(x) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn intermediate_examples() {
        assert_eq!(intermediate(0x00, 0x00).value(), 0x63);
        assert_eq!(intermediate(0xAA, 0xAA).value(), 0x63);
    }

    #[test]
    fn intermediate_is_bijective_in_plaintext() {
        for k in [0x00u8, 0x25, 0x7F, 0xFF] {
            let mut seen = [false; 256];
            for p in 0..=255u8 {
                seen[intermediate(p, k).value() as usize] = true;
            }
            assert!(seen.iter().all(|&s| s), "key {k:#04x}");
        }
    }

    #[test]
    fn hamming_weight_examples() {
        assert_eq!(hamming_weight(0x00), 0);
        assert_eq!(hamming_weight(0xFF), 8);
        assert_eq!(hamming_weight(0x63), 4);
    }

    #[test]
    fn hypotheses_shape_and_first_entry() {
        let h = build_hypotheses(&[0x00, 0x01]).unwrap();
        assert_eq!(h.guess_count(), 256);
        assert_eq!(h.measurement_count(), 2);
        assert_eq!(h.get(0, 0), 4.0);
        assert!(h.values().iter().all(|&v| (0.0..=8.0).contains(&v)));
    }

    #[test]
    fn hypotheses_reject_single_measurement() {
        assert_eq!(build_hypotheses(&[0x00]), Err(AesTargetError::TooFewMeasurements(1)));
        assert_eq!(build_hypotheses(&[]), Err(AesTargetError::TooFewMeasurements(0)));
    }

    #[test]
    fn distinct_guesses_give_distinct_rows() {
        // 16 fixed pseudo-random plaintext bytes; every pair of rows must differ.
        let plaintexts: Vec<u8> = (0..16u32).map(|i| (i * 73 + 41) as u8 ^ 0x5c).collect();
        let h = build_hypotheses(&plaintexts).unwrap();
        let rows: Vec<_> = h.values().rows().into_iter().map(|r| r.to_vec()).collect();
        for a in 0..256 {
            for b in (a + 1)..256 {
                assert_ne!(rows[a], rows[b], "guesses {a} and {b} collide");
            }
        }
    }

    proptest! {
        #[test]
        fn intermediate_is_symmetric(p in any::<u8>(), k in any::<u8>()) {
            prop_assert_eq!(intermediate(p, k), intermediate(k, p));
        }

        #[test]
        fn complement_weights_sum_to_eight(v in any::<u8>()) {
            prop_assert_eq!(hamming_weight(v) + hamming_weight(v ^ 0xFF), 8);
        }

        #[test]
        fn hypothesis_entries_follow_composition(pts in proptest::collection::vec(any::<u8>(), 2..40)) {
            let h = build_hypotheses(&pts).unwrap();
            prop_assert_eq!(h.values().dim(), (256, pts.len()));
            for k in [0usize, 1, 0x25, 255] {
                for (m, &p) in pts.iter().enumerate() {
                    prop_assert_eq!(h.get(k, m), (sbox(p ^ k as u8).count_ones()) as f64);
                }
            }
        }
    }
}
