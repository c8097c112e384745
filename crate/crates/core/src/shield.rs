//! Parity-checked execution. Every masking AND is paired with the matching OR so the
//! two can be folded into an XOR whose parity is predictable from stored parities;
//! the XOR is recomputed `fr_checks` times and checked each time. A failed check
//! re-runs the block that produced it.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitRow;
use crate::fabric::{Addr, FabricError, FaultModel, Subarray, C0_ROW, C1_ROW, D_BASE};
use crate::jc::{decode, encode, JcWord};
use crate::layout::{Backend, CounterLayout, DigitRemap, LayoutError};
use crate::uprog::{
    plan_transition, transition_step, Check, Direction, FlagUpdate, KaryRequest, MicroOp, MicroProgram, ParityExpr,
    Purpose, TransitionPattern, UprogError,
};

/// Read-path fault bound used to floor analytic error rates.
pub const P_READ_BOUND: f64 = 1e-20;

#[derive(Debug, Error)]
pub enum ShieldError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Uprog(#[from] UprogError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("check after op {op} still failing after {retries} retries")]
    Unrecoverable { op: usize, retries: u32 },
    #[error("no parity recorded for row {0}")]
    Untracked(usize),
    #[error("protection needs the Ambit backend")]
    Backend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectionConfig {
    /// Number of times each XOR result is recomputed and checked.
    pub fr_checks: u32,
    /// Retries allowed per block before giving up.
    pub max_retries: u32,
    /// Protect both maskings of a self-sourced inverted step with one XOR.
    pub de_morgan: bool,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        ProtectionConfig { fr_checks: 2, max_retries: 16, de_morgan: false }
    }
}

/// Rows of one protected XOR: ir1 = x AND y, ir2 = x OR y, fr = ir2 AND NOT ir1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct XorTriple {
    pub ir1: usize,
    pub ir2: usize,
    pub fr: usize,
}

/// Scratch rows for protected programs, placed right after a counter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ShieldRows {
    pub a: XorTriple,
    pub b: XorTriple,
}

impl ShieldRows {
    pub const COUNT: usize = 6;

    pub fn at(first: usize) -> Self {
        ShieldRows {
            a: XorTriple { ir1: first, ir2: first + 1, fr: first + 2 },
            b: XorTriple { ir1: first + 3, ir2: first + 4, fr: first + 5 },
        }
    }

    pub fn after(l: &CounterLayout) -> Self {
        Self::at(l.end_row)
    }

    pub fn rows(&self) -> [usize; 6] {
        [self.a.ir1, self.a.ir2, self.a.fr, self.b.ir1, self.b.ir2, self.b.fr]
    }
}

/// Per-row parity bits, one even-parity bit per `seg` columns.
#[derive(Clone, Debug)]
pub struct ParityState {
    pub seg: usize,
    pub cols: usize,
    table: HashMap<usize, Vec<bool>>,
    ones: Vec<bool>,
}

impl ParityState {
    pub fn new(cols: usize, seg: usize) -> Self {
        let ones = BitRow::ones(cols).segment_parity(seg);
        let mut table = HashMap::new();
        table.insert(C0_ROW, vec![false; ones.len()]);
        table.insert(C1_ROW, ones.clone());
        ParityState { seg, cols, table, ones }
    }

    /// Parity of every row the layout owns plus the given extra rows.
    pub fn for_rows(sa: &Subarray, rows: impl IntoIterator<Item = usize>) -> Self {
        let mut ps = Self::new(sa.cols(), 8);
        for r in rows {
            ps.record(sa, r);
        }
        ps
    }

    pub fn record(&mut self, sa: &Subarray, row: usize) {
        self.table.insert(row, sa.peek_row(row).segment_parity(self.seg));
    }

    pub fn get(&self, row: usize) -> Option<&[bool]> {
        self.table.get(&row).map(|v| v.as_slice())
    }

    pub fn predict(&self, e: &ParityExpr) -> Result<Vec<bool>, ShieldError> {
        let mut acc = if e.ones { self.ones.clone() } else { vec![false; self.ones.len()] };
        for &r in &e.rows {
            let p = self.table.get(&r).ok_or(ShieldError::Untracked(r))?;
            for (a, &b) in acc.iter_mut().zip(p) {
                *a ^= b;
            }
        }
        Ok(acc)
    }

    /// Segments of `row` whose parity disagrees with the prediction.
    pub fn mismatches(&self, sa: &Subarray, row: usize, e: &ParityExpr) -> Result<Vec<usize>, ShieldError> {
        let want = self.predict(e)?;
        let got = sa.peek_row(row).segment_parity(self.seg);
        Ok((0..want.len()).filter(|&i| want[i] != got[i]).collect())
    }
}

fn d(r: usize) -> Addr {
    Addr::D(r)
}

fn row_of(a: Addr) -> usize {
    a.wordline().expect("operand must be a single wordline")
}

const B: fn(u8) -> Addr = Addr::B;

/// IR pair for operands x (optionally complemented) and y.
fn ir_pair_ops(x: Addr, xinv: bool, y: Addr, t: &XorTriple) -> [MicroOp; 7] {
    use MicroOp::*;
    [
        Aap { src: y, dst: B(10) },
        Aap { src: x, dst: if xinv { B(5) } else { B(4) } },
        Aap { src: x, dst: if xinv { B(7) } else { B(6) } },
        Aap { src: Addr::C0, dst: B(1) },
        Aap { src: Addr::C1, dst: B(0) },
        AapMaj { triple: B(14), dst: d(t.ir1) },
        AapMaj { triple: B(15), dst: d(t.ir2) },
    ]
}

fn fr_ops(t: &XorTriple) -> [MicroOp; 4] {
    use MicroOp::*;
    [
        Aap { src: d(t.ir1), dst: B(5) },
        Aap { src: d(t.ir2), dst: B(1) },
        Aap { src: Addr::C0, dst: B(2) },
        AapMaj { triple: B(14), dst: d(t.fr) },
    ]
}

fn or_ops(x: usize, y: usize, dst: usize) -> [MicroOp; 4] {
    use MicroOp::*;
    [
        Aap { src: d(x), dst: B(1) },
        Aap { src: d(y), dst: B(2) },
        Aap { src: Addr::C1, dst: B(0) },
        AapMaj { triple: B(12), dst: d(dst) },
    ]
}

/// Program under construction: ops plus their check points.
struct Builder {
    ops: Vec<MicroOp>,
    checks: Vec<Check>,
}

impl Builder {
    fn new() -> Self {
        Builder { ops: Vec::new(), checks: Vec::new() }
    }

    fn check(&mut self, row: usize, expect: ParityExpr, restart: usize, adopt: Vec<usize>) {
        self.checks.push(Check { after: self.ops.len(), row, expect, restart, adopt });
    }

    /// Protected AND/OR of x (maybe complemented) and y into `t`.
    fn gate(&mut self, x: Addr, xinv: bool, y: Addr, t: &XorTriple, r: u32) {
        let start = self.ops.len();
        self.ops.extend(ir_pair_ops(x, xinv, y, t));
        let expect = ParityExpr { rows: vec![row_of(x), row_of(y)], ones: xinv };
        for j in 0..r {
            self.ops.extend(fr_ops(t));
            let adopt = if j + 1 == r { vec![t.ir1, t.ir2] } else { Vec::new() };
            self.check(t.fr, expect.clone(), start, adopt);
        }
    }

    /// dst = x OR y for rows with disjoint ones; parity is the XOR of theirs.
    fn combine(&mut self, x: usize, y: usize, dst: usize) {
        let start = self.ops.len();
        self.ops.extend(or_ops(x, y, dst));
        self.check(dst, ParityExpr { rows: vec![x, y], ones: false }, start, vec![dst]);
    }

    /// Self-sourced inverted step: (s AND NOT m) OR (NOT s AND m) is s XOR m, so the
    /// two maskings serve as each other's complementary term.
    fn de_morgan_pair(&mut self, s: usize, m: Addr, t: &XorTriple, dst: usize, r: u32) {
        use MicroOp::*;
        let start = self.ops.len();
        self.ops.extend([
            Aap { src: d(s), dst: B(5) },
            Aap { src: m, dst: B(2) },
            Aap { src: Addr::C0, dst: B(1) },
            AapMaj { triple: B(14), dst: d(t.ir1) },
            Aap { src: m, dst: B(7) },
            Aap { src: d(s), dst: B(3) },
            Aap { src: Addr::C0, dst: B(0) },
            AapMaj { triple: B(15), dst: d(t.ir2) },
        ]);
        let expect = ParityExpr { rows: vec![s, row_of(m)], ones: false };
        for _ in 0..r {
            self.ops.extend(or_ops(t.ir1, t.ir2, t.fr));
            self.check(t.fr, expect.clone(), start, Vec::new());
        }
        let copy = self.ops.len();
        self.ops.push(Aap { src: d(t.fr), dst: d(dst) });
        self.check(dst, expect, copy, vec![dst]);
    }

    /// dst = (own AND NOT m) OR (src' AND m).
    #[allow(clippy::too_many_arguments)]
    fn step(&mut self, own: usize, src: usize, inverted: bool, dst: usize, m: Addr, rows: &ShieldRows, cfg: &ProtectionConfig) {
        let r = cfg.fr_checks;
        if cfg.de_morgan && inverted && own == src {
            self.de_morgan_pair(src, m, &rows.a, dst, r);
            return;
        }
        self.gate(d(src), inverted, m, &rows.a, r);
        self.gate(m, true, d(own), &rows.b, r);
        self.combine(rows.a.ir1, rows.b.ir1, dst);
    }
}

fn finish(b: Builder, purpose: Purpose) -> MicroProgram {
    let mut p = MicroProgram::with_ops(purpose, Backend::Ambit, b.ops);
    p.checks = b.checks;
    p
}

/// Protected form of one masked step on digit 0 under the layout's mask row.
pub fn gen_protected_step(
    l: &CounterLayout,
    rows: &ShieldRows,
    i: usize,
    src: usize,
    inverted: bool,
    cfg: &ProtectionConfig,
) -> Result<MicroProgram, ShieldError> {
    let bits = &l.digits[0].bits;
    if i >= bits.len() || src >= bits.len() {
        return Err(UprogError::Unallocated(i.max(src)).into());
    }
    let mut b = Builder::new();
    b.step(bits[i], bits[src], inverted, bits[i], d(l.mask), rows, cfg);
    let mut p = finish(b, Purpose::Protected);
    p.meta.digit = Some(0);
    Ok(p)
}

/// Protected masked k-ary increment or decrement of one digit, flag update included.
pub fn gen_protected_kary(
    l: &CounterLayout,
    rows: &ShieldRows,
    req: &KaryRequest,
    cfg: &ProtectionConfig,
) -> Result<MicroProgram, ShieldError> {
    if l.backend != Backend::Ambit {
        return Err(ShieldError::Backend);
    }
    if req.digit >= l.d {
        return Err(UprogError::BadDigit(req.digit).into());
    }
    let n = l.n;
    let pat = TransitionPattern::new(n, transition_step(n, req.k, req.dir)?)?;
    let dr = &l.digits[req.digit];
    let plan = plan_transition(&pat, &dr.bits, l.spare);
    let msb_old = l.msb(req.digit);
    let mut b = Builder::new();
    b.ops.push(MicroOp::Aap { src: d(msb_old), dst: d(l.theta) });
    b.check(l.theta, ParityExpr { rows: vec![msb_old], ones: false }, 0, vec![l.theta]);
    for st in &plan.steps {
        b.step(st.own, st.src, st.inverted, st.dst, req.mask, rows, cfg);
    }
    let msb = plan.new_bits[n as usize - 1];
    let r = cfg.fr_checks;
    let th = l.theta;
    let term = match FlagUpdate::for_request(n, req.k, req.dir) {
        FlagUpdate::IncLo => {
            b.gate(d(msb), true, d(th), &rows.a, r);
            rows.a.ir1
        }
        FlagUpdate::DecLo => {
            b.gate(d(th), true, d(msb), &rows.a, r);
            rows.a.ir1
        }
        FlagUpdate::IncHi => {
            b.gate(d(msb), true, d(th), &rows.a, r);
            b.gate(d(rows.a.ir2), false, req.mask, &rows.b, r);
            rows.b.ir1
        }
        FlagUpdate::DecHi => {
            b.gate(d(th), true, d(msb), &rows.a, r);
            b.gate(d(rows.a.ir2), false, req.mask, &rows.b, r);
            rows.b.ir1
        }
    };
    // O is an operand of its own update, so the OR lands in scratch first; a retry
    // then still sees the old flag
    b.combine(dr.o_next, term, rows.b.fr);
    let copy = b.ops.len();
    b.ops.push(MicroOp::Aap { src: d(rows.b.fr), dst: d(dr.o_next) });
    b.check(dr.o_next, ParityExpr { rows: vec![dr.o_next, term], ones: false }, copy, vec![dr.o_next]);
    let purpose = match req.dir {
        Direction::Up => Purpose::Increment,
        Direction::Down => Purpose::Decrement,
    };
    let mut p = finish(b, purpose);
    p.meta.digit = Some(req.digit);
    p.meta.k = Some(req.k);
    p.meta.expected_ops = p.ops.len();
    p.remap = Some(DigitRemap { digit: req.digit, bits: plan.new_bits, spare: plan.new_spare });
    Ok(p)
}

/// Emitted length of a protected unit increment: theta save, n steps, flag block.
pub fn protected_increment_ops(n: u32, cfg: &ProtectionConfig) -> usize {
    let r = cfg.fr_checks as usize;
    let step = 2 * (7 + 4 * r) + 4;
    1 + n as usize * step + (7 + 4 * r) + 5
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ProtectedRun {
    pub retries: u32,
    pub detected: u32,
}

/// Runs a protected program. After each check point the checked row's parity is
/// compared with the prediction; a mismatch re-runs from the check's restart op.
pub fn execute_protected(
    p: &MicroProgram,
    sa: &mut Subarray,
    ps: &mut ParityState,
    cfg: &ProtectionConfig,
) -> Result<ProtectedRun, ShieldError> {
    let mut at: HashMap<usize, Vec<&Check>> = HashMap::new();
    for c in &p.checks {
        at.entry(c.after).or_default().push(c);
    }
    let mut attempts: HashMap<usize, u32> = HashMap::new();
    let mut run = ProtectedRun::default();
    let mut pc = 0;
    while pc < p.ops.len() {
        p.ops[pc].execute(sa)?;
        pc += 1;
        let Some(cs) = at.get(&pc) else { continue };
        for c in cs {
            if ps.mismatches(sa, c.row, &c.expect)?.is_empty() {
                for &r in &c.adopt {
                    ps.record(sa, r);
                }
                continue;
            }
            run.detected += 1;
            let a = attempts.entry(c.restart).or_insert(0);
            *a += 1;
            if *a > cfg.max_retries {
                return Err(ShieldError::Unrecoverable { op: pc, retries: *a - 1 });
            }
            run.retries += 1;
            pc = c.restart;
            break;
        }
    }
    Ok(run)
}

/// Runs a protected k-ary request and commits the row renames to `l`.
pub fn protected_kary(
    l: &mut CounterLayout,
    rows: &ShieldRows,
    sa: &mut Subarray,
    ps: &mut ParityState,
    req: &KaryRequest,
    cfg: &ProtectionConfig,
) -> Result<ProtectedRun, ShieldError> {
    let p = gen_protected_kary(l, rows, req, cfg)?;
    let run = execute_protected(&p, sa, ps, cfg)?;
    if let Some(r) = &p.remap {
        l.apply_remap(r);
    }
    Ok(run)
}

/// True when the two masked terms are confined to m and NOT m respectively, so their
/// OR is also their XOR.
pub fn masked_or_is_xor_check(a: &BitRow, b: &BitRow, m: &BitRow) -> bool {
    a.andnot(m).is_zero() && b.and(m).is_zero() && a.and(b).is_zero()
}

/// Per-bit rates from the fault enumeration. A column with unequal operands has two
/// fallible intermediate sensings, one with equal operands has one; each of the r
/// final-result sensings is always fallible. Error: some intermediate fault with every
/// final result flipped back. Detected: at least one final result disagrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rates {
    pub error_rate: f64,
    pub detect_rate: f64,
    pub floored: bool,
}

pub fn rates_analytic(p: f64, r: u32, p_read: f64) -> Rates {
    let q = 1.0 - p;
    let pr = p.powi(r as i32);
    let qr = q.powi(r as i32);
    let err_mixed = 2.0 * p * q * pr;
    let det_mixed = q * q * (1.0 - qr) + 2.0 * p * q * (1.0 - pr) + p * p;
    let err_equal = p * pr;
    let det_equal = q * (1.0 - qr) + p * (1.0 - pr);
    let err = 0.5 * (err_mixed + err_equal);
    let det = 0.5 * (det_mixed + det_equal);
    // within an order of magnitude of the read bound the read faults dominate
    if p_read > 0.0 && err < 10.0 * p_read {
        Rates { error_rate: p_read, detect_rate: det, floored: true }
    } else {
        Rates { error_rate: err, detect_rate: det, floored: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McRates {
    pub trials: u64,
    pub errors: u64,
    pub detected: u64,
    pub error_rate: f64,
    pub detect_rate: f64,
    pub error_ci: (f64, f64),
    pub detect_ci: (f64, f64),
}

/// Wilson score interval at z standard deviations.
pub fn wilson(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let ph = hits as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let mid = (ph + z2 / (2.0 * n)) / den;
    let half = z * (ph * (1.0 - ph) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((mid - half).max(0.0), (mid + half).min(1.0))
}

const MC_COLS: usize = 512;

/// One fabric run of the protected XOR on random operands; returns per-column
/// (error, detected) counts over the first `cols` columns.
fn mc_run(p: f64, r: u32, seed: u64, cols: usize) -> Result<(u64, u64), ShieldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sa = Subarray::with_faults(D_BASE + 5, MC_COLS, FaultModel::new(p, 0.0, rng.gen()))?;
    let a = BitRow::from_fn(MC_COLS, |_| rng.gen());
    let b = BitRow::from_fn(MC_COLS, |_| rng.gen());
    let (ra, rb) = (D_BASE, D_BASE + 1);
    sa.write_row(ra, &a)?;
    sa.write_row(rb, &b)?;
    let t = XorTriple { ir1: D_BASE + 2, ir2: D_BASE + 3, fr: D_BASE + 4 };
    for op in ir_pair_ops(d(ra), false, d(rb), &t) {
        op.execute(&mut sa)?;
    }
    let want = a.xor(&b);
    let mut seen = BitRow::zeros(MC_COLS);
    for _ in 0..r {
        for op in fr_ops(&t) {
            op.execute(&mut sa)?;
        }
        seen = seen.or(&sa.peek_row(t.fr).xor(&want));
    }
    let bad = sa.peek_row(t.ir1).xor(&a.and(&b)).or(&sa.peek_row(t.ir2).xor(&a.or(&b)));
    let (mut e, mut dt) = (0, 0);
    for c in 0..cols {
        if seen.get(c) {
            dt += 1;
        } else if bad.get(c) {
            e += 1;
        }
    }
    Ok((e, dt))
}

/// Monte-Carlo estimate over `trials` protected XOR bits on the faulty fabric, with
/// 3-sigma intervals. Runs are independent fabrics and parallelize freely.
pub fn rates_montecarlo(p: f64, r: u32, trials: u64, seed: u64) -> Result<McRates, ShieldError> {
    let runs = trials.div_ceil(MC_COLS as u64);
    let parts: Vec<(u64, u64)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let cols = (trials - i * MC_COLS as u64).min(MC_COLS as u64) as usize;
            mc_run(p, r, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i), cols)
        })
        .collect::<Result<_, _>>()?;
    let errors = parts.iter().map(|x| x.0).sum();
    let detected = parts.iter().map(|x| x.1).sum();
    let t = trials.max(1) as f64;
    Ok(McRates {
        trials,
        errors,
        detected,
        error_rate: errors as f64 / t,
        detect_rate: detected as f64 / t,
        error_ci: wilson(errors, trials, 3.0),
        detect_ci: wilson(detected, trials, 3.0),
    })
}

/// Columns of each sensing event whose inputs were unequal in a fault-free run,
/// indexed by op (one sensing per op). Only triple activations can be likely faults.
pub fn likely_sites(p: &MicroProgram, sa: &Subarray) -> Result<Vec<BitRow>, ShieldError> {
    let mut sa = sa.clone();
    let mut out = Vec::with_capacity(p.ops.len());
    for op in &p.ops {
        let triple = match *op {
            MicroOp::Ap { addr } => Some(addr),
            MicroOp::AapMaj { triple, .. } => Some(triple),
            _ => None,
        };
        let mixed = match triple {
            Some(t) => {
                let a = t.resolve();
                let v: Vec<BitRow> = a
                    .targets()
                    .iter()
                    .zip(a.dcc_flags())
                    .map(|(&r, &inv)| {
                        let x = sa.peek_row(r);
                        if inv {
                            x.not()
                        } else {
                            x
                        }
                    })
                    .collect();
                BitRow::mixed3(&v[0], &v[1], &v[2])
            }
            None => BitRow::zeros(sa.cols()),
        };
        out.push(mixed);
        op.execute(&mut sa)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Campaign {
    pub injections: u64,
    pub detected: u64,
    pub corrected: u64,
}

/// Injects every single likely fault of the protected XOR over all four operand
/// combinations and reports how many were detected.
pub fn xor_fault_campaign(cfg: &ProtectionConfig) -> Result<Campaign, ShieldError> {
    let mut sa = Subarray::new(D_BASE + 5, 4)?;
    let (ra, rb) = (D_BASE, D_BASE + 1);
    sa.write_row(ra, &BitRow::from_bools(&[false, false, true, true]))?;
    sa.write_row(rb, &BitRow::from_bools(&[false, true, false, true]))?;
    let t = XorTriple { ir1: D_BASE + 2, ir2: D_BASE + 3, fr: D_BASE + 4 };
    let mut b = Builder::new();
    b.gate(d(ra), false, d(rb), &t, cfg.fr_checks);
    let p = finish(b, Purpose::Protected);
    let want_and = sa.peek_row(ra).and(&sa.peek_row(rb));
    campaign(&p, &sa, cfg, |s| s.peek_row(t.ir1) == want_and)
}

/// Single-fault campaign over a protected digit request on one digit whose columns
/// enumerate (value, mask). Every run must detect the fault and end exact.
pub fn digit_fault_campaign(n: u32, k: u32, dir: Direction, cfg: &ProtectionConfig) -> Result<Campaign, ShieldError> {
    let r = 2 * n;
    let cols = 2 * r as usize;
    let mut l = CounterLayout::allocate(n, 1, false, Backend::Ambit, D_BASE, 256)?;
    let rows = ShieldRows::after(&l);
    let mut sa = Subarray::new(l.end_row + ShieldRows::COUNT, cols)?;
    write_columns(&mut sa, &l, cols)?;
    let req = KaryRequest { digit: 0, k, dir, mask: d(l.mask) };
    let p = gen_protected_kary(&l, &rows, &req, cfg)?;
    l.apply_remap(p.remap.as_ref().unwrap());
    let want = digit_oracle(n, k, dir, cols);
    campaign(&p, &sa, cfg, |s| read_digit(s, &l, cols) == want)
}

fn write_columns(sa: &mut Subarray, l: &CounterLayout, cols: usize) -> Result<(), ShieldError> {
    let n = l.n;
    for (b, &row) in l.digits[0].bits.iter().enumerate() {
        sa.write_row(row, &BitRow::from_fn(cols, |c| encode((c / 2) as u32, n).unwrap().bit(b as u32)))?;
    }
    sa.write_row(l.mask, &BitRow::from_fn(cols, |c| c & 1 == 1))?;
    Ok(())
}

fn digit_oracle(n: u32, k: u32, dir: Direction, cols: usize) -> Vec<(u32, bool)> {
    let r = 2 * n;
    (0..cols)
        .map(|c| {
            let v = (c / 2) as u32;
            match (c & 1 == 1, dir) {
                (false, _) => (v, false),
                (true, Direction::Up) => ((v + k) % r, v + k >= r),
                (true, Direction::Down) => ((v + r - k) % r, v < k),
            }
        })
        .collect()
}

fn read_digit(sa: &Subarray, l: &CounterLayout, cols: usize) -> Vec<(u32, bool)> {
    let rows: Vec<BitRow> = l.digits[0].bits.iter().map(|&r| sa.peek_row(r)).collect();
    let o = sa.peek_row(l.digits[0].o_next);
    (0..cols)
        .map(|c| {
            let bits: Vec<bool> = rows.iter().map(|r| r.get(c)).collect();
            (decode(JcWord::from_bits(l.n, &bits)).unwrap_or(u32::MAX), o.get(c))
        })
        .collect()
}

fn campaign(
    p: &MicroProgram,
    base: &Subarray,
    cfg: &ProtectionConfig,
    ok: impl Fn(&Subarray) -> bool,
) -> Result<Campaign, ShieldError> {
    let sites = likely_sites(p, base)?;
    let tracked: Vec<usize> = (D_BASE..base.rows()).collect();
    let mut out = Campaign::default();
    for (i, cols) in sites.iter().enumerate() {
        for c in (0..base.cols()).filter(|&c| cols.get(c)) {
            let mut sa = base.clone();
            let mut ps = ParityState::for_rows(&sa, tracked.iter().copied());
            sa.force_flip(base.events() + i as u64, c);
            let run = execute_protected(p, &mut sa, &mut ps, cfg)?;
            out.injections += 1;
            if run.detected > 0 {
                out.detected += 1;
            }
            if ok(&sa) {
                out.corrected += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uprog::gen_kary;

    fn setup(n: u32) -> (Subarray, CounterLayout, ShieldRows) {
        let l = CounterLayout::allocate(n, 1, false, Backend::Ambit, D_BASE, 256).unwrap();
        let rows = ShieldRows::after(&l);
        let cols = 4 * n as usize;
        let mut sa = Subarray::new(l.end_row + ShieldRows::COUNT, cols).unwrap();
        write_columns(&mut sa, &l, cols).unwrap();
        (sa, l, rows)
    }

    #[test]
    fn parity_is_xor_homomorphic() {
        let a = BitRow::from_fn(37, |c| c % 3 == 0);
        let b = BitRow::from_fn(37, |c| c % 5 < 2);
        let pa = a.segment_parity(8);
        let pb = b.segment_parity(8);
        let px = a.xor(&b).segment_parity(8);
        for i in 0..px.len() {
            assert_eq!(px[i], pa[i] ^ pb[i]);
        }
    }

    #[test]
    fn clean_run_matches_unprotected() {
        let cfg = ProtectionConfig::default();
        for n in 2..=5 {
            for dir in [Direction::Up, Direction::Down] {
                for k in 1..2 * n {
                    let (mut sa, mut l, rows) = setup(n);
                    let mut ref_sa = sa.clone();
                    let mut ref_l = l.clone();
                    let mut ps = ParityState::for_rows(&sa, D_BASE..sa.rows());
                    let req = KaryRequest { digit: 0, k, dir, mask: d(l.mask) };
                    let run = protected_kary(&mut l, &rows, &mut sa, &mut ps, &req, &cfg).unwrap();
                    assert_eq!(run, ProtectedRun::default());
                    let up = gen_kary(&ref_l, &req).unwrap();
                    up.execute(&mut ref_sa).unwrap();
                    ref_l.apply_remap(up.remap.as_ref().unwrap());
                    let cols = sa.cols() / 2;
                    assert_eq!(read_digit(&sa, &l, cols), read_digit(&ref_sa, &ref_l, cols));
                    assert_eq!(read_digit(&sa, &l, cols), digit_oracle(n, k, dir, cols));
                }
            }
        }
    }

    #[test]
    fn emitted_count_formula() {
        for r in [2, 4, 6] {
            let cfg = ProtectionConfig { fr_checks: r, ..Default::default() };
            for n in 2..=8 {
                let l = CounterLayout::allocate(n, 1, false, Backend::Ambit, D_BASE, 256).unwrap();
                let req = KaryRequest { digit: 0, k: 1, dir: Direction::Up, mask: d(l.mask) };
                let p = gen_protected_kary(&l, &ShieldRows::after(&l), &req, &cfg).unwrap();
                assert_eq!(p.len(), protected_increment_ops(n, &cfg));
            }
        }
    }

    #[test]
    fn de_morgan_saves_on_self_sourced_steps() {
        let plain = ProtectionConfig::default();
        let dm = ProtectionConfig { de_morgan: true, ..plain };
        let n = 4;
        let (sa, l, rows) = setup(n);
        for k in 1..2 * n {
            let req = KaryRequest { digit: 0, k, dir: Direction::Up, mask: d(l.mask) };
            let a = gen_protected_kary(&l, &rows, &req, &plain).unwrap().len();
            let b = gen_protected_kary(&l, &rows, &req, &dm).unwrap().len();
            if k == n {
                assert!(b < a);
            } else {
                assert_eq!(a, b);
            }
        }
        let mut sa = sa;
        let mut l = l;
        let mut ps = ParityState::for_rows(&sa, D_BASE..sa.rows());
        let req = KaryRequest { digit: 0, k: n, dir: Direction::Up, mask: d(l.mask) };
        protected_kary(&mut l, &rows, &mut sa, &mut ps, &req, &dm).unwrap();
        let cols = sa.cols() / 2;
        assert_eq!(read_digit(&sa, &l, cols), digit_oracle(n, n, Direction::Up, cols));
    }

    #[test]
    fn xor_single_faults_all_detected() {
        for r in [2, 4] {
            let c = xor_fault_campaign(&ProtectionConfig { fr_checks: r, ..Default::default() }).unwrap();
            assert!(c.injections > 0);
            assert_eq!(c.detected, c.injections);
            assert_eq!(c.corrected, c.injections);
        }
    }

    #[test]
    fn unlikely_fault_is_silent() {
        // a = b = 0: the AND senses three zeros; a flip there never reaches FR
        let mut sa = Subarray::new(D_BASE + 5, 1).unwrap();
        let t = XorTriple { ir1: D_BASE + 2, ir2: D_BASE + 3, fr: D_BASE + 4 };
        let cfg = ProtectionConfig::default();
        let mut b = Builder::new();
        b.gate(d(D_BASE), false, d(D_BASE + 1), &t, cfg.fr_checks);
        let p = finish(b, Purpose::Protected);
        let mut ps = ParityState::for_rows(&sa, D_BASE..D_BASE + 5);
        sa.force_flip(5, 0);
        let run = execute_protected(&p, &mut sa, &mut ps, &cfg).unwrap();
        assert_eq!(run.detected, 0);
        assert!(sa.peek_row(t.ir1).get(0));
    }

    #[test]
    fn triple_fault_is_silent() {
        let mut sa = Subarray::new(D_BASE + 5, 1).unwrap();
        sa.write_row(D_BASE, &BitRow::ones(1)).unwrap();
        let t = XorTriple { ir1: D_BASE + 2, ir2: D_BASE + 3, fr: D_BASE + 4 };
        let cfg = ProtectionConfig::default();
        let mut b = Builder::new();
        b.gate(d(D_BASE), false, d(D_BASE + 1), &t, cfg.fr_checks);
        let p = finish(b, Purpose::Protected);
        let mut ps = ParityState::for_rows(&sa, D_BASE..D_BASE + 5);
        // both intermediate sensings, then every final-result sensing
        for e in [5, 6, 10, 14] {
            sa.force_flip(e, 0);
        }
        let run = execute_protected(&p, &mut sa, &mut ps, &cfg).unwrap();
        assert_eq!(run.detected, 0);
        assert!(sa.peek_row(t.fr).get(0));
        assert!(!sa.peek_row(t.ir2).get(0));
    }

    #[test]
    fn digit_single_faults_detected_and_corrected() {
        let cfg = ProtectionConfig::default();
        for (k, dir) in [(1, Direction::Up), (4, Direction::Up), (2, Direction::Down), (5, Direction::Down)] {
            let c = digit_fault_campaign(3, k, dir, &cfg).unwrap();
            assert!(c.injections > 100);
            assert_eq!(c.detected, c.injections);
            assert_eq!(c.corrected, c.injections);
        }
    }

    #[test]
    fn combine_terms_are_exclusive() {
        let cfg = ProtectionConfig::default();
        let (mut sa, l, rows) = setup(4);
        let req = KaryRequest { digit: 0, k: 3, dir: Direction::Up, mask: d(l.mask) };
        let p = gen_protected_kary(&l, &rows, &req, &cfg).unwrap();
        let m = sa.peek_row(l.mask);
        let mut combines = 0;
        for (i, op) in p.ops.iter().enumerate() {
            if let MicroOp::Aap { src: Addr::D(x), dst: Addr::B(1) } = *op {
                if x == rows.a.ir1 && i + 3 < p.ops.len() {
                    if let MicroOp::Aap { src: Addr::D(y), .. } = p.ops[i + 1] {
                        assert!(masked_or_is_xor_check(&sa.peek_row(x), &sa.peek_row(y), &m));
                        combines += 1;
                    }
                }
            }
            op.execute(&mut sa).unwrap();
        }
        assert_eq!(combines, 4);
    }

    #[test]
    fn overlapping_rows_fail_exclusivity() {
        let a = BitRow::from_bools(&[true, true, false]);
        let b = BitRow::from_bools(&[false, true, true]);
        assert!(!masked_or_is_xor_check(&a, &b, &BitRow::from_bools(&[true, true, false])));
    }

    #[test]
    fn analytic_matches_reference_table() {
        let cases = [
            (1e-1, 2, 1.4e-3, 3.1e-1),
            (1e-2, 2, 1.5e-6, 3.5e-2),
            (1e-4, 2, 1.5e-12, 3.5e-4),
            (1e-1, 4, 1.4e-5, 4.4e-1),
            (1e-2, 4, 1.5e-10, 5.4e-2),
            (1e-1, 6, 1.4e-7, 5.5e-1),
            (1e-2, 6, 1.5e-14, 7.3e-2),
        ];
        for (p, r, e, dt) in cases {
            let x = rates_analytic(p, r, P_READ_BOUND);
            assert!(!x.floored);
            assert!((x.error_rate - e).abs() / e < 0.1, "{p} {r} {x:?}");
            assert!((x.detect_rate - dt).abs() / dt < 0.1, "{p} {r} {x:?}");
        }
        assert_eq!(rates_analytic(1e-4, 4, P_READ_BOUND).error_rate, 1e-20);
        assert_eq!(rates_analytic(1e-4, 6, P_READ_BOUND).error_rate, 1e-20);
    }

    #[test]
    fn montecarlo_zero_and_small() {
        let z = rates_montecarlo(0.0, 2, 5000, 1).unwrap();
        assert_eq!((z.error_rate, z.detect_rate), (0.0, 0.0));
        let m = rates_montecarlo(0.1, 2, 100_000, 7).unwrap();
        let a = rates_analytic(0.1, 2, 0.0);
        assert!(m.detect_ci.0 <= a.detect_rate && a.detect_rate <= m.detect_ci.1, "{m:?} {a:?}");
        assert!(m.error_ci.0 <= a.error_rate && a.error_rate <= m.error_ci.1, "{m:?} {a:?}");
    }
}
