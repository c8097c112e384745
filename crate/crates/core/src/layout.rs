use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::D_BASE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Ambit,
    Pinatubo,
    Magic,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Ambit, Backend::Pinatubo, Backend::Magic];

    /// Scratch rows beyond theta and the spare that the backend's templates use.
    pub fn temp_rows(self) -> usize {
        match self {
            Backend::Ambit => 0,
            Backend::Pinatubo => 3,
            Backend::Magic => 6,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Ambit => "ambit",
            Backend::Pinatubo => "pinatubo",
            Backend::Magic => "magic",
        })
    }
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ambit" => Ok(Backend::Ambit),
            "pinatubo" => Ok(Backend::Pinatubo),
            "magic" => Ok(Backend::Magic),
            _ => Err(format!("unknown backend {s:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("layout needs rows {first}..{end} but the subarray has {have}")]
    CapacityExceeded { first: usize, end: usize, have: usize },
    #[error("bad counter shape n={n} D={d}")]
    BadShape { n: u32, d: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DigitRows {
    /// Physical row of b1..bn; these move when a program renames rows.
    pub bits: Vec<usize>,
    pub o_next: usize,
}

/// Row mapping of one counter bank. Counter c lives in column c of every row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CounterLayout {
    pub n: u32,
    pub d: usize,
    pub digits: Vec<DigitRows>,
    pub o_sign: Option<usize>,
    pub mask: usize,
    pub theta: usize,
    pub spare: usize,
    pub temps: Vec<usize>,
    pub backend: Backend,
    pub first_row: usize,
    pub end_row: usize,
}

/// New row map for one digit after a program that renamed its bit rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DigitRemap {
    pub digit: usize,
    pub bits: Vec<usize>,
    pub spare: usize,
}

impl CounterLayout {
    pub fn allocate(
        n: u32,
        d: usize,
        signed: bool,
        backend: Backend,
        first_row: usize,
        total_rows: usize,
    ) -> Result<Self, LayoutError> {
        if n == 0 || d == 0 || n > 32 {
            return Err(LayoutError::BadShape { n, d });
        }
        let first_row = first_row.max(D_BASE);
        let mut next = first_row;
        let mut take = || {
            let r = next;
            next += 1;
            r
        };
        let digits = (0..d)
            .map(|_| {
                let bits = (0..n).map(|_| take()).collect();
                DigitRows { bits, o_next: take() }
            })
            .collect();
        let o_sign = signed.then(&mut take);
        let mask = take();
        let theta = take();
        let spare = take();
        let temps = (0..backend.temp_rows()).map(|_| take()).collect();
        let end_row = next;
        if end_row > total_rows {
            return Err(LayoutError::CapacityExceeded { first: first_row, end: end_row, have: total_rows });
        }
        Ok(CounterLayout { n, d, digits, o_sign, mask, theta, spare, temps, backend, first_row, end_row })
    }

    /// Rows needed by a bank of this shape, counted from its first row.
    pub fn rows_needed(n: u32, d: usize, signed: bool, backend: Backend) -> usize {
        d * (n as usize + 1) + signed as usize + 3 + backend.temp_rows()
    }

    pub fn radix(&self) -> u64 {
        2 * self.n as u64
    }

    pub fn capacity(&self) -> u128 {
        (self.radix() as u128).pow(self.d as u32)
    }

    /// Counter data rows: D(n+1), plus the sign row when present.
    pub fn data_rows(&self) -> usize {
        self.d * (self.n as usize + 1) + self.o_sign.is_some() as usize
    }

    pub fn msb(&self, digit: usize) -> usize {
        *self.digits[digit].bits.last().unwrap()
    }

    /// O_next rows hold the complemented flag on the MAGIC backend, where a
    /// stateful NOR can only clear cells.
    pub fn o_inverted(&self) -> bool {
        self.backend == Backend::Magic
    }

    pub fn apply_remap(&mut self, r: &DigitRemap) {
        self.digits[r.digit].bits = r.bits.clone();
        self.spare = r.spare;
    }

    /// Every row the bank owns.
    pub fn owned_rows(&self) -> impl Iterator<Item = usize> {
        self.first_row..self.end_row
    }

    /// Rows holding counter state (bits, flags, sign).
    pub fn state_rows(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for dr in &self.digits {
            v.extend(&dr.bits);
            v.push(dr.o_next);
        }
        v.extend(self.o_sign);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_accounting() {
        let l = CounterLayout::allocate(5, 4, false, Backend::Ambit, D_BASE, 1024).unwrap();
        assert_eq!(l.data_rows(), 24);
        assert_eq!(l.capacity(), 10_000);
        assert_eq!(l.end_row - l.first_row, CounterLayout::rows_needed(5, 4, false, Backend::Ambit));
        let s = CounterLayout::allocate(5, 4, true, Backend::Ambit, D_BASE, 1024).unwrap();
        assert_eq!(s.data_rows(), 25);
        assert!(matches!(
            CounterLayout::allocate(5, 4, false, Backend::Ambit, D_BASE, 30),
            Err(LayoutError::CapacityExceeded { .. })
        ));
    }
}
