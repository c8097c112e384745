//! Johnson-counter codewords and the integer reference semantics used by tests.
//!
//! Bit 0 is b1, the least significant bit, and is printed leftmost.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JcError {
    #[error("value {v} out of range for n={n}")]
    OutOfRange { v: u32, n: u32 },
    #[error("pattern {0} is not a Johnson-counter state")]
    InvalidCodeword(String),
    #[error("unsupported width {0}")]
    BadWidth(u32),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct JcWord {
    pub n: u32,
    pub bits: u64,
}

impl JcWord {
    pub fn bit(&self, i: u32) -> bool {
        (self.bits >> i) & 1 == 1
    }

    pub fn msb(&self) -> bool {
        self.bit(self.n - 1)
    }

    pub fn from_bits(n: u32, bits: &[bool]) -> Self {
        let mut w = 0u64;
        for (i, b) in bits.iter().enumerate() {
            if *b {
                w |= 1 << i;
            }
        }
        JcWord { n, bits: w }
    }

    pub fn parse(s: &str) -> Result<Self, JcError> {
        let n = s.len() as u32;
        if n == 0 || n > 63 {
            return Err(JcError::BadWidth(n));
        }
        let mut w = 0u64;
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '1' => w |= 1 << i,
                '0' => {}
                _ => return Err(JcError::InvalidCodeword(s.to_string())),
            }
        }
        Ok(JcWord { n, bits: w })
    }
}

impl fmt::Display for JcWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

fn low_mask(k: u32) -> u64 {
    if k >= 64 {
        !0
    } else {
        (1u64 << k) - 1
    }
}

/// The v-th state of the n-bit cycle: ones fill in from b1, then retire from b1.
pub fn encode(v: u32, n: u32) -> Result<JcWord, JcError> {
    if n == 0 || n > 63 {
        return Err(JcError::BadWidth(n));
    }
    if v >= 2 * n {
        return Err(JcError::OutOfRange { v, n });
    }
    let bits = if v <= n { low_mask(v) } else { low_mask(n) & !low_mask(v - n) };
    Ok(JcWord { n, bits })
}

pub fn decode(w: JcWord) -> Result<u32, JcError> {
    let n = w.n;
    let full = low_mask(n);
    let b = w.bits & full;
    if b & 1 == 1 || b == 0 {
        // run of ones starting at b1
        let ones = b.trailing_ones();
        if b == low_mask(ones) {
            return Ok(ones);
        }
    } else {
        // run of ones ending at the MSB
        let zeros = b.trailing_zeros();
        if b == full & !low_mask(zeros) {
            return Ok(n + zeros);
        }
    }
    Err(JcError::InvalidCodeword(w.to_string()))
}

pub fn is_valid(w: JcWord) -> bool {
    decode(w).is_ok()
}

/// Base-2n digits of x, least significant first. Zero has no digits.
pub fn digits_of(mut x: u64, radix: u64) -> Vec<u32> {
    assert!(radix >= 2);
    let mut d = Vec::new();
    while x > 0 {
        d.push((x % radix) as u32);
        x /= radix;
    }
    d
}

/// Reference multi-digit counter: digit values in [0, 2n) plus a pending carry flag
/// per digit (the O_next row), and a wrap flag standing in for the sign row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleCounter {
    pub n: u32,
    pub digits: Vec<u32>,
    pub pending: Vec<bool>,
    pub sign: bool,
}

impl OracleCounter {
    pub fn new(n: u32, d: usize) -> Self {
        OracleCounter { n, digits: vec![0; d], pending: vec![false; d], sign: false }
    }

    pub fn radix(&self) -> u64 {
        2 * self.n as u64
    }

    pub fn capacity(&self) -> u128 {
        (self.radix() as u128).pow(self.digits.len() as u32)
    }

    /// Value with pending flags folded in (a flag on digit i is worth (2n)^(i+1)).
    pub fn value(&self) -> u128 {
        let r = self.radix() as u128;
        let mut v = 0u128;
        let mut w = 1u128;
        for i in 0..self.digits.len() {
            v += w * (self.digits[i] as u128 + if self.pending[i] { r } else { 0 });
            w *= r;
        }
        v
    }
}

/// Add k to one digit under a one-bit mask. The flag is sticky and records a wrap.
pub fn oracle_kary_add(c: &OracleCounter, digit: usize, k: u32, mask: bool) -> OracleCounter {
    let mut c = c.clone();
    if mask {
        let r = 2 * c.n;
        let s = c.digits[digit] + k;
        c.digits[digit] = s % r;
        if s >= r {
            c.pending[digit] = true;
        }
    }
    c
}

/// Subtract k from one digit under a mask; the flag records a borrow.
pub fn oracle_kary_sub(c: &OracleCounter, digit: usize, k: u32, mask: bool) -> OracleCounter {
    let mut c = c.clone();
    if mask {
        let r = 2 * c.n;
        let d = c.digits[digit];
        if d < k {
            c.digits[digit] = d + r - k;
            c.pending[digit] = true;
        } else {
            c.digits[digit] = d - k;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_states() {
        assert_eq!(encode(1, 5).unwrap().to_string(), "10000");
        assert_eq!(encode(0, 5).unwrap().to_string(), "00000");
        assert_eq!(encode(7, 5).unwrap().to_string(), "00111");
        assert_eq!(decode(JcWord::parse("11111").unwrap()), Ok(5));
        assert_eq!(decode(JcWord::parse("00001").unwrap()), Ok(9));
        assert!(matches!(decode(JcWord::parse("01010").unwrap()), Err(JcError::InvalidCodeword(_))));
        assert!(encode(10, 5).is_err());
    }

    #[test]
    fn roundtrip_and_single_bit_steps() {
        for n in 2..=16 {
            for v in 0..2 * n {
                let w = encode(v, n).unwrap();
                assert_eq!(decode(w).unwrap(), v);
                let next = encode((v + 1) % (2 * n), n).unwrap();
                assert_eq!((w.bits ^ next.bits).count_ones(), 1);
            }
            let valid = (0..1u64 << n).filter(|&b| is_valid(JcWord { n, bits: b })).count();
            assert_eq!(valid, 2 * n as usize);
        }
    }

    #[test]
    fn oracle_add() {
        let mut c = OracleCounter::new(5, 1);
        c.digits[0] = 7;
        let r = oracle_kary_add(&c, 0, 6, true);
        assert_eq!((r.digits[0], r.pending[0]), (3, true));
        assert_eq!(oracle_kary_add(&c, 0, 6, false), c);
        c.digits[0] = 9;
        let r = oracle_kary_add(&c, 0, 1, true);
        assert_eq!((r.digits[0], r.pending[0]), (0, true));
        let r = oracle_kary_sub(&OracleCounter::new(5, 1), 0, 1, true);
        assert_eq!((r.digits[0], r.pending[0]), (9, true));
    }

    #[test]
    fn digit_conversion() {
        assert_eq!(digits_of(45, 10), vec![5, 4]);
        assert!(digits_of(0, 10).is_empty());
        assert_eq!(digits_of(255, 8), vec![7, 7, 3]);
    }
}
