//! Multi-digit Johnson-counter banks living in a subarray: increments, decrements,
//! carry ripples, accumulation policies and counter-to-counter addition.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{clear_flag_op, gen_increment, gen_ripple, toggle_ops};
use crate::bits::BitRow;
use crate::fabric::{Addr, FabricError, Subarray, D_BASE};
use crate::iarm::{Action, Safety, VirtualCounter};
use crate::jc::{decode, digits_of, encode, JcError, JcWord};
use crate::layout::{Backend, CounterLayout, LayoutError};
use crate::uprog::{ambit_step_ops, Direction, KaryRequest, MicroOp, MicroProgram, OpCounts, Purpose, UprogError};

#[derive(Debug, Error)]
pub enum BankError {
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Uprog(#[from] UprogError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error("pending flags must be resolved before switching direction on an unsigned bank")]
    DirectionSwitch,
    #[error("IARM policy needs an attached scheduler")]
    NoScheduler,
    #[error("input {x} exceeds counter capacity {cap}")]
    Capacity { x: i128, cap: u128 },
    #[error("bank shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Every digit increment is followed by a ripple chain through the MSD.
    #[default]
    FullRipple,
    /// Each input digit is added and then rippled once, LSD to MSD.
    DigitSerial,
    Iarm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// A digit value d is applied as d unit increments.
    Unit,
    /// A digit value d is one k-ary increment.
    #[default]
    Kary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
pub enum ExecMode {
    #[default]
    Execute,
    /// Programs are tallied but not run; used for op-count sweeps.
    CountOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BankStats {
    /// Digit-level program invocations (increments, decrements and ripples).
    pub invocations: u64,
    pub ripples: u64,
    pub ops: OpCounts,
    pub saturations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Inc(usize, u32, Direction),
    Ripple(usize, Direction),
}

#[derive(Clone, Debug)]
pub struct CounterBank {
    pub layout: CounterLayout,
    pub cols: usize,
    pub stats: BankStats,
    /// Set when a carry left the MSD of an unsigned bank.
    pub saturated: bool,
    dir: Direction,
    dirty: Vec<bool>,
    mode: ExecMode,
    cache: HashMap<Key, OpCounts>,
    iarm: Option<VirtualCounter>,
}

/// Per-column readout: the folded integer or the first digit that failed to decode.
pub type ColumnValue = Result<i128, JcError>;

impl CounterBank {
    /// Allocates a zeroed bank at the first data row.
    pub fn alloc(sa: &mut Subarray, n: u32, d: usize, signed: bool, backend: Backend) -> Result<Self, BankError> {
        Self::alloc_at(sa, n, d, signed, backend, D_BASE)
    }

    pub fn alloc_at(
        sa: &mut Subarray,
        n: u32,
        d: usize,
        signed: bool,
        backend: Backend,
        first_row: usize,
    ) -> Result<Self, BankError> {
        let layout = CounterLayout::allocate(n, d, signed, backend, first_row, sa.rows())?;
        let cols = sa.cols();
        let bank = CounterBank {
            dirty: vec![false; d],
            layout,
            cols,
            stats: BankStats::default(),
            saturated: false,
            dir: Direction::Up,
            mode: ExecMode::Execute,
            cache: HashMap::new(),
            iarm: None,
        };
        bank.host_zero(sa)?;
        Ok(bank)
    }

    fn host_zero(&self, sa: &mut Subarray) -> Result<(), FabricError> {
        let zeros = BitRow::zeros(self.cols);
        for r in self.layout.owned_rows() {
            sa.write_row(r, &zeros)?;
        }
        if self.layout.o_inverted() {
            let ones = BitRow::ones(self.cols);
            for dr in &self.layout.digits {
                sa.write_row(dr.o_next, &ones)?;
            }
        }
        Ok(())
    }

    pub fn set_mode(&mut self, mode: ExecMode) {
        self.mode = mode;
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn attach_iarm(&mut self, safety: Safety) {
        let mut vc = VirtualCounter::new(self.layout.n, self.layout.d, safety);
        vc.dir = self.dir;
        self.iarm = Some(vc);
    }

    pub fn iarm(&self) -> Option<&VirtualCounter> {
        self.iarm.as_ref()
    }

    pub fn direction(&self) -> Direction {
        self.dir
    }

    pub fn is_signed(&self) -> bool {
        self.layout.o_sign.is_some()
    }

    pub fn backend(&self) -> Backend {
        self.layout.backend
    }

    pub fn mask_row(&self) -> usize {
        self.layout.mask
    }

    /// Runs (or, in count-only mode, tallies) one program and commits its row renames.
    pub fn run(&mut self, sa: &mut Subarray, p: &MicroProgram) -> Result<(), BankError> {
        if self.mode == ExecMode::Execute {
            p.execute(sa)?;
            if let Some(r) = &p.remap {
                self.layout.apply_remap(r);
            }
        }
        self.stats.ops.add(p.counts());
        Ok(())
    }

    fn run_cached(
        &mut self,
        sa: &mut Subarray,
        key: Key,
        gen: impl FnOnce(&CounterLayout) -> Result<MicroProgram, UprogError>,
    ) -> Result<(), BankError> {
        if self.mode == ExecMode::CountOnly {
            let c = match self.cache.get(&key) {
                Some(c) => *c,
                None => {
                    let c = gen(&self.layout)?.counts();
                    self.cache.insert(key, c);
                    c
                }
            };
            self.stats.ops.add(c);
            return Ok(());
        }
        let p = gen(&self.layout)?;
        self.run(sa, &p)
    }

    fn ensure_dir(&mut self, sa: &mut Subarray, dir: Direction) -> Result<(), BankError> {
        if dir == self.dir {
            return Ok(());
        }
        if self.dirty.iter().any(|&x| x) {
            if !self.is_signed() {
                return Err(BankError::DirectionSwitch);
            }
            self.flush(sa)?;
        }
        self.dir = dir;
        if let Some(vc) = &mut self.iarm {
            vc.switch_direction(dir);
        }
        Ok(())
    }

    fn step_digit(&mut self, sa: &mut Subarray, digit: usize, k: u32, mask: Addr, dir: Direction) -> Result<(), BankError> {
        if digit >= self.layout.d {
            return Err(UprogError::BadDigit(digit).into());
        }
        self.ensure_dir(sa, dir)?;
        let backend = self.layout.backend;
        let req = KaryRequest { digit, k, dir, mask };
        self.run_cached(sa, Key::Inc(digit, k, dir), |l| gen_increment(backend, l, &req))?;
        self.dirty[digit] = true;
        self.stats.invocations += 1;
        Ok(())
    }

    /// Masked add of k to one digit; the digit's O_next records a wrap.
    pub fn increment_digit(&mut self, sa: &mut Subarray, digit: usize, k: u32, mask: Addr) -> Result<(), BankError> {
        self.step_digit(sa, digit, k, mask, Direction::Up)
    }

    /// Masked subtract of k from one digit; the digit's O_next records a borrow.
    pub fn decrement_digit(&mut self, sa: &mut Subarray, digit: usize, k: u32, mask: Addr) -> Result<(), BankError> {
        self.step_digit(sa, digit, k, mask, Direction::Down)
    }

    fn o_row_any(&self, sa: &mut Subarray, digit: usize) -> Result<bool, FabricError> {
        let row = sa.read_row(self.layout.digits[digit].o_next)?;
        Ok(if self.layout.o_inverted() { row.count_ones() < self.cols } else { !row.is_zero() })
    }

    /// Resolves the pending flags of `digit` into the next digit (or the sign row).
    pub fn ripple(&mut self, sa: &mut Subarray, digit: usize) -> Result<(), BankError> {
        let d = self.layout.d;
        if digit >= d {
            return Err(UprogError::BadDigit(digit).into());
        }
        if digit + 1 == d && !self.is_signed() && self.mode == ExecMode::Execute && self.o_row_any(sa, digit)? {
            self.saturated = true;
            self.stats.saturations += 1;
        }
        let dir = self.dir;
        self.run_cached(sa, Key::Ripple(digit, dir), |l| gen_ripple(l, digit, dir))?;
        self.dirty[digit] = false;
        if digit + 1 < d {
            self.dirty[digit + 1] = true;
        }
        self.stats.ripples += 1;
        self.stats.invocations += 1;
        Ok(())
    }

    fn ripple_chain(&mut self, sa: &mut Subarray, from: usize) -> Result<(), BankError> {
        for j in from..self.layout.d {
            self.ripple(sa, j)?;
        }
        Ok(())
    }

    /// Resolves every pending flag so the stored digits are canonical.
    pub fn flush(&mut self, sa: &mut Subarray) -> Result<(), BankError> {
        if let Some(vc) = &mut self.iarm {
            let plan = vc.flush();
            for a in plan {
                if let Action::Ripple(i) = a {
                    self.ripple(sa, i)?;
                }
            }
        } else {
            for i in 0..self.layout.d {
                if self.dirty[i] {
                    self.ripple(sa, i)?;
                }
            }
        }
        self.dirty.iter_mut().for_each(|x| *x = false);
        Ok(())
    }

    fn apply_action(&mut self, sa: &mut Subarray, a: Action, mask: Addr) -> Result<(), BankError> {
        match a {
            Action::Ripple(i) => self.ripple(sa, i),
            Action::Add { digit, k } => {
                let dir = self.dir;
                self.step_digit(sa, digit, k, mask, dir)
            }
        }
    }

    /// Adds x (negative values decrement) to every column selected by `mask`.
    /// Returns the ops consumed. Zero is skipped entirely.
    pub fn accumulate_value(
        &mut self,
        sa: &mut Subarray,
        x: i64,
        mask: Addr,
        policy: Policy,
        counting: Counting,
    ) -> Result<OpCounts, BankError> {
        if x == 0 {
            return Ok(OpCounts::default());
        }
        let cap = self.layout.capacity();
        if x.unsigned_abs() as u128 >= cap {
            return Err(BankError::Capacity { x: x as i128, cap });
        }
        if policy == Policy::Iarm && self.iarm.is_none() {
            return Err(BankError::NoScheduler);
        }
        let before = self.stats.ops;
        let dir = if x > 0 { Direction::Up } else { Direction::Down };
        self.ensure_dir(sa, dir)?;
        let digits = digits_of(x.unsigned_abs(), self.layout.radix());
        match policy {
            Policy::FullRipple => {
                for (i, &dg) in digits.iter().enumerate() {
                    let (times, k) = match counting {
                        Counting::Kary => (1, dg),
                        Counting::Unit => (dg, 1),
                    };
                    if dg == 0 {
                        continue;
                    }
                    for _ in 0..times {
                        self.step_digit(sa, i, k, mask, dir)?;
                        self.ripple_chain(sa, i)?;
                    }
                }
            }
            Policy::DigitSerial => {
                for i in 0..self.layout.d {
                    let dg = digits.get(i).copied().unwrap_or(0);
                    if dg > 0 {
                        match counting {
                            Counting::Kary => self.step_digit(sa, i, dg, mask, dir)?,
                            Counting::Unit => {
                                for _ in 0..dg {
                                    self.step_digit(sa, i, 1, mask, dir)?;
                                }
                            }
                        }
                    }
                    self.ripple(sa, i)?;
                }
            }
            Policy::Iarm => {
                let vc = self.iarm.as_mut().unwrap();
                let mut plan = Vec::new();
                for (i, &dg) in digits.iter().enumerate() {
                    match counting {
                        Counting::Kary => vc.plan_add(i, dg, &mut plan),
                        Counting::Unit => {
                            for _ in 0..dg {
                                vc.plan_add(i, 1, &mut plan);
                            }
                        }
                    }
                }
                for a in plan {
                    self.apply_action(sa, a, mask)?;
                }
            }
        }
        let mut used = self.stats.ops;
        used.aap -= before.aap;
        used.ap -= before.ap;
        used.logic -= before.logic;
        Ok(used)
    }

    /// Per column, per digit: decoded value (or error) and the pending flag.
    pub fn read_digits(&self, sa: &mut Subarray) -> Result<Vec<Vec<(Result<u32, JcError>, bool)>>, FabricError> {
        let l = &self.layout;
        let mut rows = Vec::with_capacity(l.d);
        for dr in &l.digits {
            let bits = dr.bits.iter().map(|&r| sa.read_row(r)).collect::<Result<Vec<_>, _>>()?;
            let mut o = sa.read_row(dr.o_next)?;
            if l.o_inverted() {
                o = o.not();
            }
            rows.push((bits, o));
        }
        Ok((0..self.cols)
            .map(|c| {
                rows.iter()
                    .map(|(bits, o)| {
                        let b: Vec<bool> = bits.iter().map(|r| r.get(c)).collect();
                        (decode(JcWord::from_bits(l.n, &b)), o.get(c))
                    })
                    .collect()
            })
            .collect())
    }

    /// Decodes every column, folding pending flags (signed by the current direction)
    /// and the sign row.
    pub fn read_counters(&self, sa: &mut Subarray) -> Result<Vec<ColumnValue>, FabricError> {
        let digits = self.read_digits(sa)?;
        let sign = match self.layout.o_sign {
            Some(r) => Some(sa.read_row(r)?),
            None => None,
        };
        let r = self.layout.radix() as i128;
        let cap = self.layout.capacity() as i128;
        let fs: i128 = if self.dir == Direction::Up { 1 } else { -1 };
        Ok(digits
            .into_iter()
            .enumerate()
            .map(|(c, col)| {
                let mut v = 0i128;
                let mut w = 1i128;
                for (dv, flag) in col {
                    v += w * (dv? as i128 + if flag { fs * r } else { 0 });
                    w *= r;
                }
                if sign.as_ref().is_some_and(|s| s.get(c)) {
                    v -= cap;
                }
                Ok(v)
            })
            .collect())
    }

    /// CSV dump: `column,digit,value,o_next`.
    pub fn dump_csv(&self, sa: &mut Subarray, out: impl Write) -> Result<(), BankError> {
        let digits = self.read_digits(sa)?;
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| BankError::Unsupported(format!("csv: {e}"));
        w.write_record(["column", "digit", "value", "o_next"]).map_err(io)?;
        for (c, col) in digits.iter().enumerate() {
            for (i, (v, o)) in col.iter().enumerate() {
                let v = match v {
                    Ok(v) => v.to_string(),
                    Err(_) => "invalid".to_string(),
                };
                w.write_record([c.to_string(), i.to_string(), v, (*o as u8).to_string()]).map_err(io)?;
            }
        }
        w.flush().map_err(|e| BankError::Unsupported(format!("csv: {e}")))?;
        Ok(())
    }

    /// Host-side load of per-column values (test setup), bypassing the fabric ops.
    pub fn host_load(&mut self, sa: &mut Subarray, values: &[i128]) -> Result<(), BankError> {
        let l = &self.layout;
        let cap = l.capacity() as i128;
        let r = l.radix() as i128;
        let n = l.n;
        let mut rows: Vec<BitRow> = vec![BitRow::zeros(self.cols); l.d * n as usize];
        let mut sign = BitRow::zeros(self.cols);
        for (c, &v) in values.iter().enumerate().take(self.cols) {
            let mut raw = v;
            if raw < 0 {
                if !self.is_signed() {
                    return Err(BankError::Unsupported("negative value in unsigned bank".into()));
                }
                raw += cap;
                sign.set(c, true);
            }
            if raw < 0 || raw >= cap {
                return Err(BankError::Capacity { x: v, cap: cap as u128 });
            }
            for i in 0..l.d {
                let w = encode((raw % r) as u32, n).unwrap();
                raw /= r;
                for b in 0..n as usize {
                    rows[i * n as usize + b].set(c, w.bit(b as u32));
                }
            }
        }
        self.host_zero(sa)?;
        for i in 0..l.d {
            for b in 0..n as usize {
                sa.write_row(l.digits[i].bits[b], &rows[i * n as usize + b])?;
            }
        }
        if let Some(s) = l.o_sign {
            sa.write_row(s, &sign)?;
        }
        self.dirty.iter_mut().for_each(|x| *x = false);
        if let Some(vc) = &mut self.iarm {
            *vc = VirtualCounter::new(vc.n, vc.d, vc.safety);
            // loaded values are arbitrary per column
            vc.u.iter_mut().for_each(|u| *u = 2 * n - 1);
            vc.dir = self.dir;
        }
        Ok(())
    }

    /// Zeroes the bank in memory with constant-row clones, one per state row.
    pub fn clear(&mut self, sa: &mut Subarray) -> Result<(), BankError> {
        let b = self.layout.backend;
        let mut p = MicroProgram::new(Purpose::Copy, b);
        for dr in &self.layout.digits {
            for &r in &dr.bits {
                p.ops.push(zero_op(b, r));
            }
            p.ops.push(clear_flag_op(b, dr.o_next));
        }
        if let Some(s) = self.layout.o_sign {
            p.ops.push(zero_op(b, s));
        }
        self.run(sa, &p)?;
        self.dirty.iter_mut().for_each(|x| *x = false);
        self.saturated = false;
        self.dir = Direction::Up;
        if let Some(vc) = &mut self.iarm {
            *vc = VirtualCounter::new(vc.n, vc.d, vc.safety);
        }
        Ok(())
    }

    fn require_ambit(&self, what: &str) -> Result<(), BankError> {
        if self.layout.backend != Backend::Ambit {
            return Err(BankError::Unsupported(format!("{what} is only generated for the ambit backend")));
        }
        Ok(())
    }

    fn same_shape(&self, o: &CounterBank) -> Result<(), BankError> {
        if self.layout.n != o.layout.n || self.layout.d != o.layout.d || self.cols != o.cols {
            return Err(BankError::ShapeMismatch(format!(
                "n={} D={} vs n={} D={}",
                self.layout.n, self.layout.d, o.layout.n, o.layout.d
            )));
        }
        Ok(())
    }

    /// Adds digit `digit` of `other` into the same digit here, using the other digit's
    /// bits as increment masks. This bank's mask row is used as scratch.
    pub fn jc_add_digit(&mut self, sa: &mut Subarray, other: &CounterBank, digit: usize) -> Result<(), BankError> {
        self.require_ambit("counter addition")?;
        self.same_shape(other)?;
        if digit >= self.layout.d {
            return Err(UprogError::BadDigit(digit).into());
        }
        self.ensure_dir(sa, Direction::Up)?;
        let theta = Addr::D(other.layout.theta);
        let mask = Addr::D(self.layout.mask);
        let bits = other.layout.digits[digit].bits.clone();
        let b = Addr::B;
        let save = MicroProgram::with_ops(
            Purpose::JcAdd,
            Backend::Ambit,
            vec![MicroOp::Aap { src: Addr::D(*bits.last().unwrap()), dst: theta }],
        );
        self.run(sa, &save)?;
        // forward pass, MSB down: mask = b | theta
        for &r in bits.iter().rev() {
            let p = MicroProgram::with_ops(
                Purpose::JcAdd,
                Backend::Ambit,
                vec![
                    MicroOp::Aap { src: Addr::D(r), dst: b(0) },
                    MicroOp::Aap { src: theta, dst: b(1) },
                    MicroOp::Aap { src: Addr::C1, dst: b(2) },
                    MicroOp::AapMaj { triple: b(12), dst: mask },
                ],
            );
            self.run(sa, &p)?;
            self.increment_digit(sa, digit, 1, mask)?;
        }
        // reverse pass, LSB up: mask = !b & theta
        for &r in bits.iter() {
            let p = MicroProgram::with_ops(
                Purpose::JcAdd,
                Backend::Ambit,
                vec![
                    MicroOp::Aap { src: Addr::D(r), dst: b(5) },
                    MicroOp::Aap { src: theta, dst: b(1) },
                    MicroOp::Aap { src: Addr::C0, dst: b(2) },
                    MicroOp::AapMaj { triple: b(14), dst: mask },
                ],
            );
            self.run(sa, &p)?;
            self.increment_digit(sa, digit, 1, mask)?;
        }
        Ok(())
    }

    /// C1 <- C1 + C2 across all digits, column-wise.
    pub fn vector_add(&mut self, sa: &mut Subarray, other: &mut CounterBank) -> Result<(), BankError> {
        self.require_ambit("vector add")?;
        self.same_shape(other)?;
        if other.is_signed() && !self.is_signed() {
            return Err(BankError::Unsupported("adding a signed bank into an unsigned one".into()));
        }
        other.flush(sa)?;
        self.flush(sa)?;
        self.ensure_dir(sa, Direction::Up)?;
        for i in 0..self.layout.d {
            self.jc_add_digit(sa, other, i)?;
            self.ripple(sa, i)?;
        }
        if let (Some(s1), Some(s2)) = (self.layout.o_sign, other.layout.o_sign) {
            let p = MicroProgram::with_ops(Purpose::SignToggle, Backend::Ambit, toggle_ops(&self.layout, s1, Addr::D(s2)));
            self.run(sa, &p)?;
        }
        if let Some(vc) = &mut self.iarm {
            // columns now hold arbitrary canonical values
            vc.v.iter_mut().for_each(|v| *v = 0);
            vc.u.iter_mut().for_each(|u| *u = 2 * vc.n - 1);
        }
        Ok(())
    }

    /// Row copy of every state row of `src` into this bank.
    pub fn copy_from(&mut self, sa: &mut Subarray, src: &CounterBank) -> Result<(), BankError> {
        self.require_ambit("bank copy")?;
        self.same_shape(src)?;
        if src.is_signed() != self.is_signed() {
            return Err(BankError::ShapeMismatch("signedness differs".into()));
        }
        let mut p = MicroProgram::new(Purpose::Copy, Backend::Ambit);
        for (a, b) in src.layout.state_rows().into_iter().zip(self.layout.state_rows()) {
            p.ops.push(MicroOp::Aap { src: Addr::D(a), dst: Addr::D(b) });
        }
        self.run(sa, &p)?;
        self.dir = src.dir;
        self.dirty = src.dirty.clone();
        Ok(())
    }

    /// Multiplies every counter by 2^i by adding a snapshot of the bank to itself.
    pub fn shift_left(&mut self, sa: &mut Subarray, scratch: &mut CounterBank, i: u32) -> Result<(), BankError> {
        for _ in 0..i {
            self.flush(sa)?;
            let before = scratch.stats.ops;
            scratch.copy_from(sa, self)?;
            // the snapshot is charged to the bank being shifted
            let after = scratch.stats.ops;
            self.stats.ops.add(OpCounts {
                aap: after.aap - before.aap,
                ap: after.ap - before.ap,
                logic: after.logic - before.logic,
            });
            self.vector_add(sa, scratch)?;
        }
        Ok(())
    }

    /// Zeroes every column whose sign row is set.
    pub fn relu(&mut self, sa: &mut Subarray) -> Result<(), BankError> {
        self.require_ambit("relu")?;
        let s = self
            .layout
            .o_sign
            .ok_or_else(|| BankError::Unsupported("relu needs a signed bank".into()))?;
        self.flush(sa)?;
        let mut p = MicroProgram::new(Purpose::Relu, Backend::Ambit);
        for dr in &self.layout.digits {
            for &r in &dr.bits {
                p.ops.extend(ambit_step_ops(Addr::D(r), Addr::C0, false, Addr::D(r), Addr::D(s), None));
            }
        }
        p.ops.push(MicroOp::Aap { src: Addr::C0, dst: Addr::D(s) });
        self.run(sa, &p)?;
        if let Some(vc) = &mut self.iarm {
            vc.u.iter_mut().for_each(|u| *u = 2 * vc.n - 1);
        }
        Ok(())
    }
}

fn zero_op(b: Backend, row: usize) -> MicroOp {
    match b {
        Backend::Ambit => MicroOp::Aap { src: Addr::C0, dst: Addr::D(row) },
        Backend::Pinatubo => MicroOp::And { a: Addr::C0, b: Addr::C0, dst: Addr::D(row) },
        Backend::Magic => MicroOp::Nor { a: Addr::C1, b: None, dst: Addr::D(row) },
    }
}

/// Outcome of one single-digit exhaustive sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DigitCase {
    pub k: u32,
    pub dir: Direction,
    /// Decoded value and flag per (v, mask, flag_in) column.
    pub results: Vec<(u32, bool)>,
}

/// Runs every k in [1, 2n) in both directions on a one-digit bank whose columns
/// enumerate (start value, mask bit, incoming flag), and checks each column against
/// the integer reference. Returns the per-case results for cross-backend comparison.
pub fn exhaustive_digit_check(backend: Backend, n: u32) -> Result<Vec<DigitCase>, String> {
    let r = 2 * n;
    let cols = (r * 4) as usize;
    let col = |c: usize| ((c / 4) as u32, c & 1 == 1, c & 2 == 2);
    let mut out = Vec::new();
    for dir in [Direction::Up, Direction::Down] {
        for k in 1..r {
            let mut sa = Subarray::new(D_BASE + 32 + 2 * n as usize, cols).map_err(|e| e.to_string())?;
            let mut bank = CounterBank::alloc(&mut sa, n, 1, false, backend).map_err(|e| e.to_string())?;
            bank.dir = dir;
            let l = &bank.layout;
            for (b, &row) in l.digits[0].bits.iter().enumerate() {
                let bits = BitRow::from_fn(cols, |c| encode(col(c).0, n).unwrap().bit(b as u32));
                sa.write_row(row, &bits).unwrap();
            }
            sa.write_row(l.mask, &BitRow::from_fn(cols, |c| col(c).1)).unwrap();
            sa.write_row(l.digits[0].o_next, &BitRow::from_fn(cols, |c| col(c).2 ^ l.o_inverted())).unwrap();
            let mask = Addr::D(l.mask);
            bank.step_digit(&mut sa, 0, k, mask, dir).map_err(|e| e.to_string())?;
            let got = bank.read_digits(&mut sa).map_err(|e| e.to_string())?;
            let mut results = Vec::with_capacity(cols);
            for (c, g) in got.iter().enumerate() {
                let (v, m, o) = col(c);
                let (ev, eo) = match (m, dir) {
                    (false, _) => (v, o),
                    (true, Direction::Up) => ((v + k) % r, o || v + k >= r),
                    (true, Direction::Down) => ((v + r - k) % r, o || v < k),
                };
                let (gv, go) = (&g[0].0, g[0].1);
                match gv {
                    Ok(gv) if *gv == ev && go == eo => results.push((ev, eo)),
                    _ => {
                        return Err(format!(
                            "{backend} n={n} k={k} {dir:?} v={v} m={m} o={o}: got {gv:?}/{go}, want {ev}/{eo}"
                        ))
                    }
                }
            }
            out.push(DigitCase { k, dir, results });
        }
    }
    Ok(out)
}
