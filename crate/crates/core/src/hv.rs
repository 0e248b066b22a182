//! Bit-packed binary hypervectors.
//!
//! Bits live in 64-bit words, bit `i` at position `i % 64` of word `i / 64`.
//! Padding bits past `dim` are always zero, so word-wise equality, hashing
//! and popcounts need no masking.

use std::io::Read;

use crate::error::{Error, Result};

pub const HBV_MAGIC: &[u8; 4] = b"HBV1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryHypervector {
    dim: usize,
    words: Vec<u64>,
}

impl BinaryHypervector {
    pub fn zeros(dim: usize) -> Self {
        BinaryHypervector {
            dim,
            words: vec![0; dim.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut hv = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                hv.words[i / 64] |= 1 << (i % 64);
            }
        }
        hv
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.dim, "bit {i} out of range for dim {}", self.dim);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.dim, "bit {i} out of range for dim {}", self.dim);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.dim).map(|i| self.get(i)).collect()
    }

    /// Bits as `0.0` / `1.0`.
    pub fn to_f64(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.write_f64(&mut out);
        out
    }

    pub(crate) fn write_f64(&self, out: &mut [f64]) {
        for (chunk, &word) in out.chunks_mut(64).zip(&self.words) {
            for (j, o) in chunk.iter_mut().enumerate() {
                *o = (word >> j & 1) as f64;
            }
        }
    }

    /// Indices of set bits, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    None
                } else {
                    let t = rest.trailing_zeros() as usize;
                    rest &= rest - 1;
                    Some(w * 64 + t)
                }
            })
        })
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &Self) -> Result<usize> {
        if self.dim != other.dim {
            return Err(Error::Shape {
                context: "hamming",
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// `ceil(dim / 8)` bytes, LSB-first within each byte.
    pub fn packed_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.dim.div_ceil(8));
        out
    }

    /// Inverse of [`packed_bytes`](Self::packed_bytes). `offset` is only used
    /// to locate errors in an enclosing stream.
    pub fn from_packed_bytes(dim: usize, bytes: &[u8], offset: u64) -> Result<Self> {
        let need = dim.div_ceil(8);
        if bytes.len() != need {
            return Err(Error::format(
                offset + bytes.len() as u64,
                format!("expected {need} packed bytes for dim {dim}, found {}", bytes.len()),
            ));
        }
        let mut hv = Self::zeros(dim);
        for (w, chunk) in hv.words.iter_mut().zip(bytes.chunks(8)) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            *w = u64::from_le_bytes(buf);
        }
        if !dim.is_multiple_of(8) {
            let last = bytes[need - 1];
            if last >> (dim % 8) != 0 {
                return Err(Error::format(
                    offset + need as u64 - 1,
                    "nonzero padding bits in final byte",
                ));
            }
        }
        Ok(hv)
    }

    /// `HBV1` wire format: magic, u64 LE dim, packed bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.dim.div_ceil(8));
        out.extend_from_slice(HBV_MAGIC);
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.packed_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = bytes;
        let hv = Self::read_from(&mut reader)?;
        if !reader.is_empty() {
            return Err(Error::format(
                (bytes.len() - reader.len()) as u64,
                "trailing bytes after hypervector",
            ));
        }
        Ok(hv)
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact_at(reader, &mut magic, 0)?;
        if &magic != HBV_MAGIC {
            return Err(Error::format(0, "bad magic, expected HBV1"));
        }
        let mut dim = [0u8; 8];
        read_exact_at(reader, &mut dim, 4)?;
        let dim = usize::try_from(u64::from_le_bytes(dim))
            .map_err(|_| Error::format(4, "dimension does not fit in memory"))?;
        let mut payload = vec![0u8; dim.div_ceil(8)];
        read_exact_at(reader, &mut payload, 12)?;
        Self::from_packed_bytes(dim, &payload, 12)
    }
}

/// `read_exact` that reports how far it got before the stream ended.
pub(crate) fn read_exact_at<R: Read>(reader: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(
                    offset + filled as u64,
                    format!("unexpected end of data, needed {} more bytes", buf.len() - filled),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_bools(n: usize, seed: u64) -> Vec<bool> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random()).collect()
    }

    #[test]
    fn hamming_identical_and_complement() {
        let bits = random_bools(130, 1);
        let a = BinaryHypervector::from_bools(&bits);
        let not: Vec<bool> = bits.iter().map(|b| !b).collect();
        let b = BinaryHypervector::from_bools(&not);
        assert_eq!(a.hamming(&a).unwrap(), 0);
        assert_eq!(a.hamming(&b).unwrap(), 130);
    }

    #[test]
    fn hamming_matches_bit_loop() {
        let x = random_bools(10_000, 2);
        let y = random_bools(10_000, 3);
        let naive = x.iter().zip(&y).filter(|(a, b)| a != b).count();
        let a = BinaryHypervector::from_bools(&x);
        let b = BinaryHypervector::from_bools(&y);
        assert_eq!(a.hamming(&b).unwrap(), naive);
        assert_eq!(b.hamming(&a).unwrap(), naive);
    }

    #[test]
    fn hamming_rejects_dim_mismatch() {
        let a = BinaryHypervector::zeros(10);
        let b = BinaryHypervector::zeros(11);
        assert!(a.hamming(&b).is_err());
    }

    #[test]
    fn iter_ones_and_popcount() {
        let bits = random_bools(200, 4);
        let hv = BinaryHypervector::from_bools(&bits);
        let ones: Vec<usize> = hv.iter_ones().collect();
        let expect: Vec<usize> = (0..200).filter(|&i| bits[i]).collect();
        assert_eq!(ones, expect);
        assert_eq!(hv.popcount(), expect.len());
    }

    #[test]
    fn wire_format_layout() {
        let hv = BinaryHypervector::from_bools(&[true, false, false, true, false, false, false, false, true, true]);
        let bytes = hv.to_bytes();
        assert_eq!(&bytes[..4], b"HBV1");
        assert_eq!(&bytes[4..12], &10u64.to_le_bytes());
        assert_eq!(&bytes[12..], &[0b0000_1001, 0b0000_0011]);
        assert_eq!(BinaryHypervector::from_bytes(&bytes).unwrap(), hv);
    }

    #[test]
    fn wire_format_errors() {
        let hv = BinaryHypervector::from_bools(&random_bools(20, 5));
        let mut bytes = hv.to_bytes();
        assert!(matches!(
            BinaryHypervector::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { offset: 14, .. })
        ));
        bytes[0] = b'X';
        assert!(BinaryHypervector::from_bytes(&bytes).is_err());
        let mut padded = hv.to_bytes();
        *padded.last_mut().unwrap() |= 0x80;
        assert!(matches!(
            BinaryHypervector::from_bytes(&padded),
            Err(Error::Format { offset: 14, .. })
        ));
    }
}
