use std::fmt;
use std::str::FromStr;

/// One wordline worth of bits, packed into u64 words. Column 0 is bit 0 of word 0.
/// Bits past `cols` are kept zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitRow {
    cols: usize,
    words: Vec<u64>,
}

impl BitRow {
    pub fn zeros(cols: usize) -> Self {
        BitRow { cols, words: vec![0; cols.div_ceil(64)] }
    }

    pub fn ones(cols: usize) -> Self {
        let mut r = BitRow { cols, words: vec![!0u64; cols.div_ceil(64)] };
        r.trim();
        r
    }

    pub fn from_fn(cols: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut r = Self::zeros(cols);
        for c in 0..cols {
            if f(c) {
                r.set(c, true);
            }
        }
        r
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |c| bits[c])
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    fn trim(&mut self) {
        let rem = self.cols % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    #[inline]
    pub fn get(&self, c: usize) -> bool {
        debug_assert!(c < self.cols);
        (self.words[c / 64] >> (c % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, c: usize, v: bool) {
        debug_assert!(c < self.cols);
        let bit = 1u64 << (c % 64);
        if v {
            self.words[c / 64] |= bit;
        } else {
            self.words[c / 64] &= !bit;
        }
    }

    pub fn not(&self) -> Self {
        let mut r = BitRow { cols: self.cols, words: self.words.iter().map(|w| !w).collect() };
        r.trim();
        r
    }

    fn zip(&self, o: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.cols, o.cols, "row width mismatch");
        let mut r = BitRow {
            cols: self.cols,
            words: self.words.iter().zip(&o.words).map(|(a, b)| f(*a, *b)).collect(),
        };
        r.trim();
        r
    }

    pub fn and(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a & b)
    }

    pub fn or(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a | b)
    }

    pub fn xor(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a ^ b)
    }

    pub fn andnot(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a & !b)
    }

    pub fn maj3(a: &Self, b: &Self, c: &Self) -> Self {
        assert!(a.cols == b.cols && b.cols == c.cols, "row width mismatch");
        let words = (0..a.words.len())
            .map(|i| {
                let (x, y, z) = (a.words[i], b.words[i], c.words[i]);
                (x & y) | (y & z) | (x & z)
            })
            .collect();
        BitRow { cols: a.cols, words }
    }

    /// Columns where the three inputs are not all equal.
    pub fn mixed3(a: &Self, b: &Self, c: &Self) -> Self {
        let words = (0..a.words.len())
            .map(|i| {
                let (x, y, z) = (a.words[i], b.words[i], c.words[i]);
                !((x & y & z) | (!x & !y & !z))
            })
            .collect();
        let mut r = BitRow { cols: a.cols, words };
        r.trim();
        r
    }

    pub fn xor_in_place(&mut self, o: &Self) {
        for (a, b) in self.words.iter_mut().zip(&o.words) {
            *a ^= *b;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.cols).map(move |c| self.get(c))
    }

    /// Even parity of each `seg`-bit segment (last segment may be short).
    pub fn segment_parity(&self, seg: usize) -> Vec<bool> {
        assert!(seg > 0);
        (0..self.cols.div_ceil(seg))
            .map(|s| {
                let hi = ((s + 1) * seg).min(self.cols);
                (s * seg..hi).filter(|&c| self.get(c)).count() % 2 == 1
            })
            .collect()
    }
}

impl fmt::Display for BitRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in 0..self.cols {
            f.write_str(if self.get(c) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitRow({self})")
    }
}

impl FromStr for BitRow {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let mut r = BitRow::zeros(s.len());
        for (c, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => r.set(c, true),
                other => return Err(format!("bad bit character {other:?}")),
            }
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_bits_stay_clear() {
        let r = BitRow::ones(70);
        assert_eq!(r.count_ones(), 70);
        assert_eq!(r.not().count_ones(), 0);
    }

    #[test]
    fn parse_roundtrip() {
        let r: BitRow = "10110".parse().unwrap();
        assert_eq!(r.to_string(), "10110");
        assert_eq!(r.not().to_string(), "01001");
    }

    #[test]
    fn maj_and_mixed() {
        let a: BitRow = "00001111".parse().unwrap();
        let b: BitRow = "00110011".parse().unwrap();
        let c: BitRow = "01010101".parse().unwrap();
        assert_eq!(BitRow::maj3(&a, &b, &c).to_string(), "00010111");
        assert_eq!(BitRow::mixed3(&a, &b, &c).to_string(), "01111110");
    }

    #[test]
    fn parity_segments() {
        let r: BitRow = "1100000010".parse().unwrap();
        assert_eq!(r.segment_parity(8), vec![false, true]);
    }
}
