//! One DRAM subarray with Ambit-style row groups.
//!
//! Wordline indices: 0..=3 are T0..T3, 4 is DCC0, 5 its complement port, 6 is DCC1,
//! 7 its complement port, 8 and 9 are the constant rows C0/C1 and data rows start at 10.
//! Wordlines 5 and 7 have no storage of their own; they see the DCC cells inverted.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitRow;

pub const T0: usize = 0;
pub const T1: usize = 1;
pub const T2: usize = 2;
pub const T3: usize = 3;
pub const DCC0: usize = 4;
pub const DCC0N: usize = 5;
pub const DCC1: usize = 6;
pub const DCC1N: usize = 7;
pub const C0_ROW: usize = 8;
pub const C1_ROW: usize = 9;
pub const D_BASE: usize = 10;

pub const DEFAULT_COLS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("write to constant row {0}")]
    ConstantRowWrite(usize),
    #[error("illegal address {addr} for {op}")]
    IllegalAddress { addr: String, op: &'static str },
    #[error("row {0} out of range")]
    RowOutOfRange(usize),
    #[error("row width {got} does not match subarray width {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("subarray needs at least {min} rows and one column")]
    BadShape { min: usize },
    #[error("bad snapshot: {0}")]
    Snapshot(String),
}

/// Symbolic row address. `B(i)` covers the sixteen B-group addresses, `D(r)` is an
/// absolute data-row index (r >= 10).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Addr {
    B(u8),
    C0,
    C1,
    D(usize),
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addr::B(i) => write!(f, "B{i}"),
            Addr::C0 => f.write_str("C0"),
            Addr::C1 => f.write_str("C1"),
            Addr::D(r) if *r >= D_BASE => write!(f, "D{}", r - D_BASE),
            Addr::D(r) => write!(f, "R{r}"),
        }
    }
}

/// A resolved address: 1 to 3 physical cells, each optionally seen through a DCC
/// complement port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiRowAddress {
    pub addr: Addr,
    len: usize,
    rows: [usize; 3],
    inv: [bool; 3],
}

impl MultiRowAddress {
    fn new(addr: Addr, t: &[(usize, bool)]) -> Self {
        let mut rows = [0; 3];
        let mut inv = [false; 3];
        for (i, (r, f)) in t.iter().enumerate() {
            rows[i] = *r;
            inv[i] = *f;
        }
        MultiRowAddress { addr, len: t.len(), rows, inv }
    }

    pub fn label(&self) -> String {
        self.addr.to_string()
    }

    pub fn targets(&self) -> &[usize] {
        &self.rows[..self.len]
    }

    pub fn dcc_flags(&self) -> &[bool] {
        &self.inv[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Addr {
    /// Ambit's B-group decoder, with B11 activating T0, T1 and DCC0.
    pub fn resolve(self) -> MultiRowAddress {
        let n = false;
        let y = true;
        match self {
            Addr::B(i) => {
                let t: &[(usize, bool)] = match i {
                    0..=3 => return MultiRowAddress::new(self, &[(i as usize, n)]),
                    4 => &[(DCC0, n)],
                    5 => &[(DCC0, y)],
                    6 => &[(DCC1, n)],
                    7 => &[(DCC1, y)],
                    8 => &[(DCC0, y), (T0, n)],
                    9 => &[(DCC1, y), (T1, n)],
                    10 => &[(T2, n), (T3, n)],
                    11 => &[(T0, n), (T1, n), (DCC0, n)],
                    12 => &[(T0, n), (T1, n), (T2, n)],
                    13 => &[(T1, n), (T2, n), (T3, n)],
                    14 => &[(DCC0, n), (T1, n), (T2, n)],
                    15 => &[(DCC1, n), (T0, n), (T3, n)],
                    _ => &[],
                };
                MultiRowAddress::new(self, t)
            }
            Addr::C0 => MultiRowAddress::new(self, &[(C0_ROW, n)]),
            Addr::C1 => MultiRowAddress::new(self, &[(C1_ROW, n)]),
            Addr::D(r) => match r {
                DCC0N => MultiRowAddress::new(self, &[(DCC0, y)]),
                DCC1N => MultiRowAddress::new(self, &[(DCC1, y)]),
                _ => MultiRowAddress::new(self, &[(r, n)]),
            },
        }
    }

    /// Single wordline index this address names, if it names exactly one.
    pub fn wordline(self) -> Option<usize> {
        match self {
            Addr::B(i) if i < 8 => Some(i as usize),
            Addr::C0 => Some(C0_ROW),
            Addr::C1 => Some(C1_ROW),
            Addr::D(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    pub p_likely: f64,
    pub p_read: f64,
    pub rng_seed: u64,
}

impl FaultModel {
    pub fn none() -> Self {
        FaultModel { p_likely: 0.0, p_read: 0.0, rng_seed: 0 }
    }

    pub fn new(p_likely: f64, p_read: f64, rng_seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&p_likely) && (0.0..=1.0).contains(&p_read));
        FaultModel { p_likely, p_read, rng_seed }
    }

    pub fn is_clean(&self) -> bool {
        self.p_likely == 0.0 && self.p_read == 0.0
    }
}

impl Default for FaultModel {
    fn default() -> Self {
        Self::none()
    }
}

/// Executed-command tallies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpTally {
    pub aap: u64,
    pub ap: u64,
    pub logic: u64,
}

#[derive(Clone)]
pub struct Subarray {
    rows: usize,
    cols: usize,
    cells: Vec<BitRow>,
    fault: FaultModel,
    rng: ChaCha8Rng,
    // sensing events executed so far; forced flips are keyed by event index
    events: u64,
    forced: BTreeMap<u64, Vec<usize>>,
    tally: OpTally,
}

impl fmt::Debug for Subarray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Subarray({}x{}, events={})", self.rows, self.cols, self.events)
    }
}

impl Subarray {
    pub fn new(rows: usize, cols: usize) -> Result<Self, FabricError> {
        Self::with_faults(rows, cols, FaultModel::none())
    }

    pub fn with_faults(rows: usize, cols: usize, fault: FaultModel) -> Result<Self, FabricError> {
        if rows < D_BASE || cols == 0 {
            return Err(FabricError::BadShape { min: D_BASE });
        }
        let mut cells = vec![BitRow::zeros(cols); rows];
        cells[C1_ROW] = BitRow::ones(cols);
        Ok(Subarray {
            rows,
            cols,
            cells,
            fault,
            rng: ChaCha8Rng::seed_from_u64(fault.rng_seed),
            events: 0,
            forced: BTreeMap::new(),
            tally: OpTally::default(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn fault_model(&self) -> FaultModel {
        self.fault
    }

    pub fn set_fault_model(&mut self, fault: FaultModel) {
        self.fault = fault;
        self.rng = ChaCha8Rng::seed_from_u64(fault.rng_seed);
    }

    pub fn tally(&self) -> OpTally {
        self.tally
    }

    /// Number of sensing events (AAP, AP and logic ops) executed so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    /// Fault-injection hook: flip the sensed value of column `col` during sensing
    /// event `event` (counted from the subarray's creation).
    pub fn force_flip(&mut self, event: u64, col: usize) {
        self.forced.entry(event).or_default().push(col);
    }

    pub fn clear_forced(&mut self) {
        self.forced.clear();
    }

    fn check_row(&self, r: usize) -> Result<(), FabricError> {
        if r >= self.rows {
            Err(FabricError::RowOutOfRange(r))
        } else {
            Ok(())
        }
    }

    fn check_addr(&self, a: &MultiRowAddress) -> Result<(), FabricError> {
        for &r in a.targets() {
            self.check_row(r)?;
        }
        Ok(())
    }

    fn cell_value(&self, r: usize, inv: bool) -> BitRow {
        let v = match r {
            C0_ROW => BitRow::zeros(self.cols),
            C1_ROW => BitRow::ones(self.cols),
            DCC0N => return self.cells[DCC0].not(),
            DCC1N => return self.cells[DCC1].not(),
            _ => self.cells[r].clone(),
        };
        if inv {
            v.not()
        } else {
            v
        }
    }

    fn store(&mut self, r: usize, inv: bool, v: &BitRow) {
        let (r, inv) = match r {
            DCC0N => (DCC0, !inv),
            DCC1N => (DCC1, !inv),
            _ => (r, inv),
        };
        self.cells[r] = if inv { v.not() } else { v.clone() };
    }

    fn bernoulli(&mut self, p: f64) -> BitRow {
        let cols = self.cols;
        if p <= 0.0 {
            return BitRow::zeros(cols);
        }
        if p >= 1.0 {
            return BitRow::ones(cols);
        }
        let mut r = BitRow::zeros(cols);
        if p < 0.05 {
            // geometric gaps between flipped columns
            let ln_q = (1.0 - p).ln();
            let mut c = 0usize;
            loop {
                let u: f64 = self.rng.gen::<f64>().max(f64::MIN_POSITIVE);
                let gap = (u.ln() / ln_q).floor();
                if gap >= (cols - c) as f64 {
                    break;
                }
                c += gap as usize;
                r.set(c, true);
                c += 1;
                if c >= cols {
                    break;
                }
            }
        } else {
            for c in 0..cols {
                if self.rng.gen_bool(p) {
                    r.set(c, true);
                }
            }
        }
        r
    }

    /// Flip mask for one sensing event. `mixed` marks columns sensed from unequal
    /// charges (flip with p_likely); the rest flip with p_read.
    fn flips(&mut self, mixed: Option<&BitRow>) -> BitRow {
        let mut f = if self.fault.is_clean() {
            BitRow::zeros(self.cols)
        } else {
            match mixed {
                Some(m) => {
                    let likely = self.bernoulli(self.fault.p_likely).and(m);
                    let unlikely = self.bernoulli(self.fault.p_read).andnot(m);
                    likely.or(&unlikely)
                }
                None => self.bernoulli(self.fault.p_read),
            }
        };
        if let Some(cols) = self.forced.remove(&self.events) {
            for c in cols {
                if c < self.cols {
                    f.set(c, !f.get(c));
                }
            }
        }
        self.events += 1;
        f
    }

    fn check_dst(&self, d: &MultiRowAddress, op: &'static str) -> Result<(), FabricError> {
        if d.is_empty() || d.len() > 2 {
            return Err(FabricError::IllegalAddress { addr: d.label(), op });
        }
        self.check_addr(d)?;
        for &r in d.targets() {
            if r == C0_ROW || r == C1_ROW {
                return Err(FabricError::ConstantRowWrite(r));
            }
        }
        Ok(())
    }

    /// Row clone. The single source row is sensed once and written to every
    /// destination target, inverted through DCC complement ports.
    pub fn aap(&mut self, src: Addr, dst: Addr) -> Result<(), FabricError> {
        let s = src.resolve();
        if s.len() != 1 {
            return Err(FabricError::IllegalAddress { addr: s.label(), op: "AAP source" });
        }
        self.check_addr(&s)?;
        let d = dst.resolve();
        self.check_dst(&d, "AAP destination")?;
        let mut v = self.cell_value(s.targets()[0], s.dcc_flags()[0]);
        let f = self.flips(None);
        v.xor_in_place(&f);
        for (&r, &inv) in d.targets().iter().zip(d.dcc_flags()) {
            self.store(r, inv, &v);
        }
        self.tally.aap += 1;
        Ok(())
    }

    fn tra(&mut self, a: &MultiRowAddress) -> Result<BitRow, FabricError> {
        if a.len() != 3 {
            return Err(FabricError::IllegalAddress { addr: a.label(), op: "AP" });
        }
        self.check_addr(a)?;
        let t = a.targets();
        let fl = a.dcc_flags();
        let x = self.cell_value(t[0], fl[0]);
        let y = self.cell_value(t[1], fl[1]);
        let z = self.cell_value(t[2], fl[2]);
        let mixed = BitRow::mixed3(&x, &y, &z);
        let mut v = BitRow::maj3(&x, &y, &z);
        let f = self.flips(Some(&mixed));
        v.xor_in_place(&f);
        for i in 0..3 {
            self.store(t[i], fl[i], &v);
        }
        Ok(v)
    }

    /// Triple-row activation: all three rows end up holding the (possibly faulted)
    /// sensed majority.
    pub fn ap(&mut self, addr: Addr) -> Result<(), FabricError> {
        let a = addr.resolve();
        self.tra(&a)?;
        self.tally.ap += 1;
        Ok(())
    }

    /// AAP whose first activation is a triple: the majority is formed on the
    /// bitlines and then also driven into `dst`.
    pub fn aap_maj(&mut self, triple: Addr, dst: Addr) -> Result<(), FabricError> {
        let a = triple.resolve();
        let d = dst.resolve();
        self.check_dst(&d, "AAP destination")?;
        let v = self.tra(&a)?;
        for (&r, &inv) in d.targets().iter().zip(d.dcc_flags()) {
            self.store(r, inv, &v);
        }
        self.tally.aap += 1;
        Ok(())
    }

    fn single(&self, a: Addr, op: &'static str) -> Result<usize, FabricError> {
        match a.wordline() {
            Some(r) => {
                self.check_row(r)?;
                Ok(r)
            }
            None => Err(FabricError::IllegalAddress { addr: a.to_string(), op }),
        }
    }

    fn logic_write(&mut self, dst: Addr, v: &BitRow, op: &'static str) -> Result<(), FabricError> {
        let r = self.single(dst, op)?;
        if r == C0_ROW || r == C1_ROW {
            return Err(FabricError::ConstantRowWrite(r));
        }
        self.store(r, false, v);
        self.tally.logic += 1;
        Ok(())
    }

    fn binary_sense(&mut self, a: Addr, b: Addr, op: &'static str) -> Result<(BitRow, BitRow, BitRow), FabricError> {
        let x = self.cell_value(self.single(a, op)?, false);
        let y = self.cell_value(self.single(b, op)?, false);
        let mixed = x.xor(&y);
        let f = self.flips(Some(&mixed));
        Ok((x, y, f))
    }

    /// Nonstateful two-row AND, result written back to `dst`.
    pub fn pin_and(&mut self, a: Addr, b: Addr, dst: Addr) -> Result<(), FabricError> {
        let (x, y, f) = self.binary_sense(a, b, "AND")?;
        let v = x.and(&y).xor(&f);
        self.logic_write(dst, &v, "AND")
    }

    pub fn pin_or(&mut self, a: Addr, b: Addr, dst: Addr) -> Result<(), FabricError> {
        let (x, y, f) = self.binary_sense(a, b, "OR")?;
        let v = x.or(&y).xor(&f);
        self.logic_write(dst, &v, "OR")
    }

    pub fn pin_not(&mut self, a: Addr, dst: Addr) -> Result<(), FabricError> {
        let x = self.cell_value(self.single(a, "NOT")?, false);
        let f = self.flips(None);
        let v = x.not().xor(&f);
        self.logic_write(dst, &v, "NOT")
    }

    /// Stateful NOR: the output cell only ever switches 1 -> 0, so `dst` becomes
    /// `dst AND NOT(OR inputs)`. Callers initialize `dst` first for a plain NOR.
    pub fn magic_nor(&mut self, inputs: &[Addr], dst: Addr) -> Result<(), FabricError> {
        if inputs.is_empty() || inputs.len() > 3 {
            return Err(FabricError::IllegalAddress { addr: format!("{} inputs", inputs.len()), op: "NOR" });
        }
        let vals = inputs
            .iter()
            .map(|a| self.single(*a, "NOR").map(|r| self.cell_value(r, false)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut any = BitRow::zeros(self.cols);
        let mut all = BitRow::ones(self.cols);
        for v in &vals {
            any = any.or(v);
            all = all.and(v);
        }
        let mixed = if vals.len() > 1 { Some(any.xor(&all)) } else { None };
        let f = self.flips(mixed.as_ref());
        let out = self.cell_value(self.single(dst, "NOR")?, false);
        let v = out.and(&any.not().xor(&f));
        self.logic_write(dst, &v, "NOR")
    }

    pub fn magic_init(&mut self, dst: Addr) -> Result<(), FabricError> {
        let v = BitRow::ones(self.cols);
        self.logic_write(dst, &v, "INIT")
    }

    /// Host read through the normal access path; each column flips with p_read.
    pub fn read_row(&mut self, row: usize) -> Result<BitRow, FabricError> {
        self.check_row(row)?;
        let mut v = self.cell_value(row, false);
        if self.fault.p_read > 0.0 {
            let f = self.bernoulli(self.fault.p_read);
            v.xor_in_place(&f);
        }
        Ok(v)
    }

    /// Fault-free view of a row, for tests and host-side bookkeeping.
    pub fn peek_row(&self, row: usize) -> BitRow {
        self.cell_value(row, false)
    }

    pub fn write_row(&mut self, row: usize, bits: &BitRow) -> Result<(), FabricError> {
        self.check_row(row)?;
        if row == C0_ROW || row == C1_ROW {
            return Err(FabricError::ConstantRowWrite(row));
        }
        if bits.cols() != self.cols {
            return Err(FabricError::WidthMismatch { got: bits.cols(), want: self.cols });
        }
        self.store(row, false, bits);
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut s = format!("rows={} cols={}\n", self.rows, self.cols);
        for r in 0..self.rows {
            s.push_str(&self.cell_value(r, false).to_string());
            s.push('\n');
        }
        s
    }

    pub fn load(text: &str) -> Result<Self, FabricError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| FabricError::Snapshot("empty".into()))?;
        let mut rows = None;
        let mut cols = None;
        for part in header.split_whitespace() {
            if let Some(v) = part.strip_prefix("rows=") {
                rows = v.parse::<usize>().ok();
            } else if let Some(v) = part.strip_prefix("cols=") {
                cols = v.parse::<usize>().ok();
            }
        }
        let (rows, cols) = match (rows, cols) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(FabricError::Snapshot(format!("bad header {header:?}"))),
        };
        let mut sa = Subarray::new(rows, cols)?;
        for r in 0..rows {
            let line = lines.next().ok_or_else(|| FabricError::Snapshot(format!("missing row {r}")))?;
            let bits: BitRow = line.parse().map_err(FabricError::Snapshot)?;
            if bits.cols() != cols {
                return Err(FabricError::Snapshot(format!("row {r} has {} bits", bits.cols())));
            }
            match r {
                C0_ROW if !bits.is_zero() => return Err(FabricError::Snapshot("C0 not zero".into())),
                C1_ROW if bits.count_ones() != cols => return Err(FabricError::Snapshot("C1 not ones".into())),
                C0_ROW | C1_ROW | DCC0N | DCC1N => {}
                _ => sa.cells[r] = bits,
            }
        }
        Ok(sa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: &str) -> BitRow {
        s.parse().unwrap()
    }

    fn sa(cols: usize) -> Subarray {
        Subarray::new(16, cols).unwrap()
    }

    #[test]
    fn clone_and_complement_clone() {
        let mut s = sa(5);
        s.write_row(D_BASE, &row("10110")).unwrap();
        s.aap(Addr::D(D_BASE), Addr::D(D_BASE + 1)).unwrap();
        assert_eq!(s.peek_row(D_BASE + 1).to_string(), "10110");
        // write through the complement port, read back through the true port
        s.aap(Addr::D(D_BASE), Addr::B(5)).unwrap();
        assert_eq!(s.peek_row(DCC0).to_string(), "01001");
        s.aap(Addr::B(4), Addr::D(D_BASE + 2)).unwrap();
        assert_eq!(s.peek_row(D_BASE + 2).to_string(), "01001");
    }

    #[test]
    fn constant_rows() {
        let mut s = sa(4);
        s.aap(Addr::C0, Addr::B(0)).unwrap();
        assert!(s.peek_row(T0).is_zero());
        assert_eq!(s.read_row(C1_ROW).unwrap().count_ones(), 4);
        assert_eq!(s.aap(Addr::B(0), Addr::C0), Err(FabricError::ConstantRowWrite(C0_ROW)));
        assert!(s.write_row(C1_ROW, &BitRow::zeros(4)).is_err());
    }

    #[test]
    fn address_arity() {
        for i in 0..16u8 {
            let n = Addr::B(i).resolve().len();
            assert!((1..=3).contains(&n));
        }
        assert_eq!(Addr::B(11).resolve().targets(), &[T0, T1, DCC0]);
        let mut s = sa(4);
        assert!(matches!(s.aap(Addr::B(12), Addr::B(0)), Err(FabricError::IllegalAddress { .. })));
        assert!(matches!(s.ap(Addr::B(8)), Err(FabricError::IllegalAddress { .. })));
        assert!(matches!(s.aap(Addr::B(0), Addr::B(12)), Err(FabricError::IllegalAddress { .. })));
    }

    #[test]
    fn maj_truth_table() {
        let mut s = sa(8);
        s.write_row(D_BASE, &row("00001111")).unwrap();
        s.write_row(D_BASE + 1, &row("00110011")).unwrap();
        s.write_row(D_BASE + 2, &row("01010101")).unwrap();
        s.aap(Addr::D(D_BASE), Addr::B(0)).unwrap();
        s.aap(Addr::D(D_BASE + 1), Addr::B(1)).unwrap();
        s.aap(Addr::D(D_BASE + 2), Addr::B(2)).unwrap();
        s.ap(Addr::B(12)).unwrap();
        for r in [T0, T1, T2] {
            assert_eq!(s.peek_row(r).to_string(), "00010111");
        }
    }

    #[test]
    fn dcc_in_triple() {
        // B14 = {DCC0, T1, T2}; DCC0 loaded through its complement port
        let mut s = sa(4);
        s.write_row(D_BASE, &row("0011")).unwrap();
        s.write_row(D_BASE + 1, &row("0101")).unwrap();
        s.aap(Addr::D(D_BASE), Addr::B(5)).unwrap(); // DCC0 = 1100
        s.aap(Addr::D(D_BASE + 1), Addr::B(1)).unwrap();
        s.aap(Addr::C0, Addr::B(2)).unwrap();
        s.aap_maj(Addr::B(14), Addr::D(D_BASE + 2)).unwrap();
        assert_eq!(s.peek_row(D_BASE + 2).to_string(), "0100");
        assert_eq!(s.peek_row(DCC0N).to_string(), "1011");
    }

    #[test]
    fn faulted_majority_written_to_all_rows() {
        let mut s = Subarray::with_faults(16, 64, FaultModel::new(1.0, 0.0, 1)).unwrap();
        s.aap(Addr::C0, Addr::B(0)).unwrap();
        s.aap(Addr::C1, Addr::B(1)).unwrap();
        s.aap(Addr::C1, Addr::B(2)).unwrap();
        s.ap(Addr::B(12)).unwrap();
        for r in [T0, T1, T2] {
            assert!(s.peek_row(r).is_zero());
        }
        // all-equal inputs use p_read, which is zero here
        s.aap(Addr::C1, Addr::B(0)).unwrap();
        s.aap(Addr::C1, Addr::B(1)).unwrap();
        s.aap(Addr::C1, Addr::B(2)).unwrap();
        s.ap(Addr::B(12)).unwrap();
        assert_eq!(s.peek_row(T0).count_ones(), 64);
    }

    #[test]
    fn read_with_p_read_one_complements() {
        let mut s = Subarray::with_faults(16, 5, FaultModel::new(0.0, 1.0, 3)).unwrap();
        s.write_row(D_BASE, &row("10110")).unwrap();
        assert_eq!(s.read_row(D_BASE).unwrap().to_string(), "01001");
    }

    #[test]
    fn forced_flip_hits_one_column() {
        let mut s = sa(8);
        s.force_flip(1, 3);
        s.aap(Addr::C0, Addr::D(D_BASE)).unwrap();
        s.aap(Addr::C0, Addr::D(D_BASE + 1)).unwrap();
        assert!(s.peek_row(D_BASE).is_zero());
        assert_eq!(s.peek_row(D_BASE + 1).to_string(), "00010000");
    }

    #[test]
    fn magic_nor_is_stateful() {
        let mut s = sa(4);
        s.write_row(D_BASE, &row("0011")).unwrap();
        s.write_row(D_BASE + 1, &row("0101")).unwrap();
        s.magic_init(Addr::D(D_BASE + 2)).unwrap();
        s.magic_nor(&[Addr::D(D_BASE), Addr::D(D_BASE + 1)], Addr::D(D_BASE + 2)).unwrap();
        assert_eq!(s.peek_row(D_BASE + 2).to_string(), "1000");
        // without re-init the output accumulates an AND
        s.write_row(D_BASE + 3, &row("1110")).unwrap();
        s.magic_nor(&[Addr::D(D_BASE + 3)], Addr::D(D_BASE + 2)).unwrap();
        assert_eq!(s.peek_row(D_BASE + 2).to_string(), "0000");
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut s = sa(6);
        s.write_row(D_BASE + 3, &row("110010")).unwrap();
        s.aap(Addr::D(D_BASE + 3), Addr::B(7)).unwrap();
        let text = s.dump();
        assert!(text.starts_with("rows=16 cols=6\n"));
        let t = Subarray::load(&text).unwrap();
        for r in 0..16 {
            assert_eq!(t.peek_row(r), s.peek_row(r));
        }
    }

    #[test]
    fn determinism() {
        let run = || {
            let mut s = Subarray::with_faults(16, 256, FaultModel::new(0.3, 0.01, 42)).unwrap();
            for _ in 0..20 {
                s.aap(Addr::C1, Addr::B(0)).unwrap();
                s.aap(Addr::C0, Addr::B(1)).unwrap();
                s.ap(Addr::B(12)).unwrap();
            }
            s.dump()
        };
        assert_eq!(run(), run());
    }
}
