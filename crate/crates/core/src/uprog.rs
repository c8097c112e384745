//! Counting microprograms: transition patterns, the row-renaming step planner and the
//! Ambit command templates.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::fabric::{Addr, FabricError, Subarray};
use crate::layout::{Backend, CounterLayout, DigitRemap};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UprogError {
    #[error("step k={k} out of range for n={n}")]
    KOutOfRange { k: u32, n: u32 },
    #[error("digit {0} not in layout")]
    BadDigit(usize),
    #[error("row {0} is not allocated")]
    Unallocated(usize),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum OpKind {
    Aap,
    Ap,
    Logic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MicroOp {
    Aap { src: Addr, dst: Addr },
    Ap { addr: Addr },
    /// AAP whose first activation is a B-group triple.
    AapMaj { triple: Addr, dst: Addr },
    And { a: Addr, b: Addr, dst: Addr },
    Or { a: Addr, b: Addr, dst: Addr },
    Not { a: Addr, dst: Addr },
    Nor { a: Addr, b: Option<Addr>, dst: Addr },
    Init { dst: Addr },
}

impl MicroOp {
    pub fn kind(&self) -> OpKind {
        match self {
            MicroOp::Aap { .. } | MicroOp::AapMaj { .. } => OpKind::Aap,
            MicroOp::Ap { .. } => OpKind::Ap,
            _ => OpKind::Logic,
        }
    }

    pub fn execute(&self, sa: &mut Subarray) -> Result<(), FabricError> {
        match *self {
            MicroOp::Aap { src, dst } => sa.aap(src, dst),
            MicroOp::Ap { addr } => sa.ap(addr),
            MicroOp::AapMaj { triple, dst } => sa.aap_maj(triple, dst),
            MicroOp::And { a, b, dst } => sa.pin_and(a, b, dst),
            MicroOp::Or { a, b, dst } => sa.pin_or(a, b, dst),
            MicroOp::Not { a, dst } => sa.pin_not(a, dst),
            MicroOp::Nor { a, b: None, dst } => sa.magic_nor(&[a], dst),
            MicroOp::Nor { a, b: Some(b), dst } => sa.magic_nor(&[a, b], dst),
            MicroOp::Init { dst } => sa.magic_init(dst),
        }
    }

    pub fn mnemonic(&self) -> String {
        match self {
            MicroOp::Aap { src, dst } => format!("AAP  {src} -> {dst}"),
            MicroOp::Ap { addr } => format!("AP   {addr}"),
            MicroOp::AapMaj { triple, dst } => format!("AAP  {triple} -> {dst}"),
            MicroOp::And { a, b, dst } => format!("AND  {a} {b} -> {dst}"),
            MicroOp::Or { a, b, dst } => format!("OR   {a} {b} -> {dst}"),
            MicroOp::Not { a, dst } => format!("NOT  {a} -> {dst}"),
            MicroOp::Nor { a, b: None, dst } => format!("NOR  {a} -> {dst}"),
            MicroOp::Nor { a, b: Some(b), dst } => format!("NOR  {a} {b} -> {dst}"),
            MicroOp::Init { dst } => format!("INIT {dst}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Purpose {
    MaskedStep,
    Increment,
    Decrement,
    OverflowCheck,
    UnitRowClone,
    Ripple,
    SignToggle,
    ClearFlag,
    JcAdd,
    Copy,
    Relu,
    Protected,
    Rca,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProgramMeta {
    pub purpose: Purpose,
    pub backend: Backend,
    pub digit: Option<usize>,
    pub k: Option<u32>,
    pub expected_ops: usize,
}

/// Parity prediction: XOR of the stored parities of `rows`, plus the parity of an
/// all-ones row when `ones` is set (used for complemented operands).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Default)]
pub struct ParityExpr {
    pub rows: Vec<usize>,
    pub ones: bool,
}

/// Parity check point for protected programs. Runs once `after` ops have executed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Check {
    pub after: usize,
    pub row: usize,
    pub expect: ParityExpr,
    /// Op index to resume from when the check fails.
    pub restart: usize,
    /// Rows whose parity is read back and recorded once the check passes.
    pub adopt: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MicroProgram {
    pub ops: Vec<MicroOp>,
    pub meta: ProgramMeta,
    pub checks: Vec<Check>,
    pub remap: Option<DigitRemap>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub aap: u64,
    pub ap: u64,
    pub logic: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.aap + self.ap + self.logic
    }

    pub fn add(&mut self, o: OpCounts) {
        self.aap += o.aap;
        self.ap += o.ap;
        self.logic += o.logic;
    }

    pub fn scaled(&self, k: u64) -> OpCounts {
        OpCounts { aap: self.aap * k, ap: self.ap * k, logic: self.logic * k }
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(mut self, o: OpCounts) -> OpCounts {
        OpCounts::add(&mut self, o);
        self
    }
}

impl MicroProgram {
    pub fn new(purpose: Purpose, backend: Backend) -> Self {
        MicroProgram {
            ops: Vec::new(),
            meta: ProgramMeta { purpose, backend, digit: None, k: None, expected_ops: 0 },
            checks: Vec::new(),
            remap: None,
        }
    }

    pub fn with_ops(purpose: Purpose, backend: Backend, ops: Vec<MicroOp>) -> Self {
        let mut p = Self::new(purpose, backend);
        p.ops = ops;
        p.meta.expected_ops = p.ops.len();
        p
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn counts(&self) -> OpCounts {
        let mut c = OpCounts::default();
        for op in &self.ops {
            match op.kind() {
                OpKind::Aap => c.aap += 1,
                OpKind::Ap => c.ap += 1,
                OpKind::Logic => c.logic += 1,
            }
        }
        c
    }

    /// Runs every op in order; parity checks are ignored here.
    pub fn execute(&self, sa: &mut Subarray) -> Result<(), FabricError> {
        for op in &self.ops {
            op.execute(sa)?;
        }
        Ok(())
    }

    pub fn listing(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "; {:?} backend={} digit={:?} k={:?} ops={}",
            self.meta.purpose,
            self.meta.backend,
            self.meta.digit,
            self.meta.k,
            self.ops.len()
        );
        let mut checks = self.checks.iter().peekable();
        for (i, op) in self.ops.iter().enumerate() {
            let _ = writeln!(s, "{}", op.mnemonic());
            while let Some(c) = checks.next_if(|c| c.after == i + 1) {
                let _ = writeln!(s, "; check parity(D{}) restart@{}", c.row - crate::fabric::D_BASE, c.restart);
            }
        }
        s
    }
}

/// (aap, ap) tallies. Fused AAPs count as AAP.
pub fn count_ops(p: &MicroProgram) -> (u64, u64) {
    let c = p.counts();
    (c.aap, c.ap)
}

/// Per output bit: (source bit, inverted).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransitionPattern {
    pub n: u32,
    pub k: u32,
    pub sources: Vec<(usize, bool)>,
}

impl TransitionPattern {
    pub fn new(n: u32, k: u32) -> Result<Self, UprogError> {
        if k == 0 || k >= 2 * n {
            return Err(UprogError::KOutOfRange { k, n });
        }
        let nn = n as usize;
        let mut sources = vec![(0usize, false); nn];
        if k <= n {
            let k = k as usize;
            for (i, s) in sources.iter_mut().enumerate() {
                *s = if i >= k { (i - k, false) } else { (nn - k + i, true) };
            }
        } else {
            let k = (k - n) as usize;
            for (i, s) in sources.iter_mut().enumerate() {
                *s = if i >= k { (i - k, true) } else { (nn - k + i, false) };
            }
        }
        Ok(TransitionPattern { n, k, sources })
    }

    /// Reference application on a packed codeword.
    pub fn apply(&self, bits: u64) -> u64 {
        let mut out = 0u64;
        for (i, &(s, inv)) in self.sources.iter().enumerate() {
            let b = ((bits >> s) & 1 == 1) ^ inv;
            if b {
                out |= 1 << i;
            }
        }
        out
    }

    pub fn inverted_count(&self) -> usize {
        self.sources.iter().filter(|s| s.1).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StepPlan {
    pub target: usize,
    pub src_bit: usize,
    pub inverted: bool,
    pub own: usize,
    pub src: usize,
    pub dst: usize,
    /// Ambit only: also drive b AND NOT m into this row during the step.
    pub q: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransitionPlan {
    pub steps: Vec<StepPlan>,
    pub new_bits: Vec<usize>,
    pub new_spare: usize,
}

/// Orders the per-bit steps so every step reads its source before that row is
/// overwritten. The source map is a rotation, so it splits into cycles; in each cycle
/// the first step goes to the spare row, the rest are written in place and the spare
/// takes over the row that was freed. The cycle holding the MSB goes last and the MSB
/// step is the final step, so its B-group leftovers are available to the flag block.
pub fn plan_transition(p: &TransitionPattern, bits: &[usize], spare: usize) -> TransitionPlan {
    let n = p.n as usize;
    assert_eq!(bits.len(), n);
    let sigma: Vec<usize> = p.sources.iter().map(|s| s.0).collect();
    let mut inv = vec![0usize; n];
    for (i, &s) in sigma.iter().enumerate() {
        inv[s] = i;
    }
    let mut seen = vec![false; n];
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    let mut starts: Vec<usize> = (0..n - 1).collect();
    starts.insert(0, n - 1);
    for &c0 in &starts {
        if seen[c0] {
            continue;
        }
        let mut cyc = vec![c0];
        seen[c0] = true;
        let mut c = inv[c0];
        while c != c0 {
            seen[c] = true;
            cyc.push(c);
            c = inv[c];
        }
        cycles.push(cyc);
    }
    // MSB cycle was found first; run it last
    cycles.rotate_left(1);

    let mut new_bits = bits.to_vec();
    let mut spare = spare;
    let mut steps = Vec::with_capacity(n);
    let mk = |t: usize, dst: usize, src_row: usize| StepPlan {
        target: t,
        src_bit: p.sources[t].0,
        inverted: p.sources[t].1,
        own: bits[t],
        src: src_row,
        dst,
        q: None,
    };
    for cyc in &cycles {
        let l = cyc.len();
        if l == 1 {
            let c = cyc[0];
            steps.push(mk(c, bits[c], bits[c]));
            continue;
        }
        let last = cyc[l - 1];
        steps.push(mk(last, spare, bits[cyc[l - 2]]));
        for j in (1..l - 1).rev() {
            steps.push(mk(cyc[j], bits[cyc[j]], bits[cyc[j - 1]]));
        }
        steps.push(mk(cyc[0], bits[cyc[0]], bits[last]));
        new_bits[last] = spare;
        spare = bits[last];
    }
    TransitionPlan { steps, new_bits, new_spare: spare }
}

impl TransitionPlan {
    /// Ambit variant for k > n increments: the MSB step parks Q = theta AND NOT m in
    /// the old MSB row and writes the new MSB into its (already consumed) source row.
    fn redirect_msb(&mut self) {
        let st = self.steps.last_mut().unwrap();
        let n = self.new_bits.len();
        assert_eq!(st.target, n - 1);
        assert_ne!(st.src, st.own, "MSB step needs a distinct source row");
        st.q = Some(st.own);
        st.dst = st.src;
        self.new_bits[n - 1] = st.src;
        self.new_spare = st.own;
    }
}

/// Which sticky-flag update a transition needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum FlagUpdate {
    /// O | (theta & !MSB')
    IncLo,
    /// O | ((theta | !MSB') & m)
    IncHi,
    /// O | (!theta & MSB')
    DecLo,
    /// O | ((!theta | MSB') & m)
    DecHi,
}

impl FlagUpdate {
    pub fn for_request(n: u32, k: u32, dir: Direction) -> FlagUpdate {
        match (dir, k <= n) {
            (Direction::Up, true) => FlagUpdate::IncLo,
            (Direction::Up, false) => FlagUpdate::IncHi,
            (Direction::Down, true) => FlagUpdate::DecLo,
            (Direction::Down, false) => FlagUpdate::DecHi,
        }
    }
}

/// Transition step for a request: decrementing by k is stepping forward by 2n-k.
pub fn transition_step(n: u32, k: u32, dir: Direction) -> Result<u32, UprogError> {
    if k == 0 || k >= 2 * n {
        return Err(UprogError::KOutOfRange { k, n });
    }
    Ok(match dir {
        Direction::Up => k,
        Direction::Down => 2 * n - k,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct KaryRequest {
    pub digit: usize,
    pub k: u32,
    pub dir: Direction,
    pub mask: Addr,
}

fn d(r: usize) -> Addr {
    Addr::D(r)
}

const B: fn(u8) -> Addr = Addr::B;

/// The 7-command masked step b' = (b & !m) | (s & m), source optionally inverted.
/// After it: T0 = T1 = DCC0 = b', T2 = b & !m, T3 = DCC1 = b | m.
pub fn ambit_step_ops(own: Addr, src: Addr, inverted: bool, dst: Addr, mask: Addr, q: Option<Addr>) -> [MicroOp; 7] {
    [
        MicroOp::Aap { src: Addr::C0, dst: B(9) },
        MicroOp::Aap { src: mask, dst: B(8) },
        MicroOp::Aap { src: own, dst: B(10) },
        MicroOp::Ap { addr: B(15) },
        match q {
            Some(q) => MicroOp::AapMaj { triple: B(14), dst: q },
            None => MicroOp::Ap { addr: B(14) },
        },
        MicroOp::Aap { src, dst: if inverted { B(5) } else { B(1) } },
        MicroOp::AapMaj { triple: B(11), dst },
    ]
}

/// Sticky flag update. IncHi and DecHi read B-group leftovers of the MSB step that
/// must immediately precede them; `q` is the row the IncHi MSB step parked Q in.
pub fn ambit_flag_ops(f: FlagUpdate, theta: usize, msb_new: usize, o: usize, mask: Addr, q: Option<usize>) -> Vec<MicroOp> {
    use MicroOp::*;
    match f {
        FlagUpdate::IncLo => vec![
            Aap { src: Addr::C1, dst: B(2) },
            Aap { src: d(msb_new), dst: B(8) },
            Aap { src: d(theta), dst: B(1) },
            Ap { addr: B(12) },
            Aap { src: d(o), dst: B(0) },
            AapMaj { triple: B(11), dst: d(o) },
        ],
        FlagUpdate::DecLo => vec![
            Aap { src: Addr::C1, dst: B(2) },
            Aap { src: d(theta), dst: B(8) },
            Aap { src: d(msb_new), dst: B(1) },
            Ap { addr: B(12) },
            Aap { src: d(o), dst: B(0) },
            AapMaj { triple: B(11), dst: d(o) },
        ],
        FlagUpdate::IncHi => vec![
            // T3 still holds theta | m from the MSB step
            Aap { src: d(theta), dst: B(8) },
            Aap { src: d(msb_new), dst: B(7) },
            Ap { addr: B(15) },
            Aap { src: d(o), dst: B(9) },
            Aap { src: d(q.expect("IncHi needs the parked Q row")), dst: B(5) },
            AapMaj { triple: B(11), dst: d(o) },
        ],
        FlagUpdate::DecHi => vec![
            // T0 still holds MSB' from the MSB step
            Aap { src: d(theta), dst: B(7) },
            Aap { src: mask, dst: B(3) },
            Ap { addr: B(15) },
            Aap { src: d(o), dst: B(1) },
            Aap { src: Addr::C1, dst: B(2) },
            AapMaj { triple: B(12), dst: d(o) },
        ],
    }
}

fn check_digit(l: &CounterLayout, digit: usize) -> Result<(), UprogError> {
    if digit >= l.d {
        Err(UprogError::BadDigit(digit))
    } else {
        Ok(())
    }
}

/// One standalone masked step on `layout`'s digit 0, computed in place into bit `i`
/// under the layout's mask row.
pub fn gen_masked_step(l: &CounterLayout, i: usize, src: usize, inverted: bool) -> Result<MicroProgram, UprogError> {
    gen_masked_step_on(l, 0, i, src, inverted, d(l.mask))
}

pub fn gen_masked_step_on(
    l: &CounterLayout,
    digit: usize,
    i: usize,
    src: usize,
    inverted: bool,
    mask: Addr,
) -> Result<MicroProgram, UprogError> {
    check_digit(l, digit)?;
    let bits = &l.digits[digit].bits;
    if i >= bits.len() {
        return Err(UprogError::Unallocated(i));
    }
    if src >= bits.len() {
        return Err(UprogError::Unallocated(src));
    }
    let ops = ambit_step_ops(d(bits[i]), d(bits[src]), inverted, d(bits[i]), mask, None).to_vec();
    let mut p = MicroProgram::with_ops(Purpose::MaskedStep, Backend::Ambit, ops);
    p.meta.digit = Some(digit);
    Ok(p)
}

/// Masked k-ary increment of digit 0 under the layout's mask row.
pub fn gen_kary_program(l: &CounterLayout, k: u32) -> Result<MicroProgram, UprogError> {
    gen_kary(l, &KaryRequest { digit: 0, k, dir: Direction::Up, mask: d(l.mask) })
}

/// Masked k-ary increment or decrement on the Ambit backend: theta save, n steps of
/// 7 commands and a 6-command flag block, 7n+7 total for every k.
pub fn gen_kary(l: &CounterLayout, req: &KaryRequest) -> Result<MicroProgram, UprogError> {
    check_digit(l, req.digit)?;
    let n = l.n;
    let t = transition_step(n, req.k, req.dir)?;
    let pat = TransitionPattern::new(n, t)?;
    let flag = FlagUpdate::for_request(n, req.k, req.dir);
    let dr = &l.digits[req.digit];
    let mut plan = plan_transition(&pat, &dr.bits, l.spare);
    if flag == FlagUpdate::IncHi {
        plan.redirect_msb();
    }
    let mut ops = Vec::with_capacity(7 * n as usize + 7);
    ops.push(MicroOp::Aap { src: d(l.msb(req.digit)), dst: d(l.theta) });
    let mut q = None;
    for st in &plan.steps {
        q = st.q.or(q);
        ops.extend(ambit_step_ops(d(st.own), d(st.src), st.inverted, d(st.dst), req.mask, st.q.map(d)));
    }
    let msb_new = plan.new_bits[n as usize - 1];
    ops.extend(ambit_flag_ops(flag, l.theta, msb_new, dr.o_next, req.mask, q));
    let purpose = match req.dir {
        Direction::Up => Purpose::Increment,
        Direction::Down => Purpose::Decrement,
    };
    let mut p = MicroProgram::with_ops(purpose, Backend::Ambit, ops);
    p.meta.digit = Some(req.digit);
    p.meta.k = Some(req.k);
    p.meta.expected_ops = 7 * n as usize + 7;
    p.remap = Some(DigitRemap { digit: req.digit, bits: plan.new_bits, spare: plan.new_spare });
    Ok(p)
}

/// Standalone overflow block for a k <= n increment of `digit`. Expects theta to hold
/// the pre-increment MSB.
pub fn gen_overflow_check(l: &CounterLayout, digit: usize) -> Result<MicroProgram, UprogError> {
    check_digit(l, digit)?;
    let ops = ambit_flag_ops(FlagUpdate::IncLo, l.theta, l.msb(digit), l.digits[digit].o_next, d(l.mask), None);
    let mut p = MicroProgram::with_ops(Purpose::OverflowCheck, Backend::Ambit, ops);
    p.meta.digit = Some(digit);
    Ok(p)
}

/// Unmasked unit increment by row clones only: save the MSB through DCC0, shift every
/// bit up one row, feed the complement back into b1. n+1 commands, no overflow.
pub fn gen_unit_rowclone(l: &CounterLayout, digit: usize) -> Result<MicroProgram, UprogError> {
    check_digit(l, digit)?;
    let bits = &l.digits[digit].bits;
    let n = bits.len();
    let mut ops = vec![MicroOp::Aap { src: d(bits[n - 1]), dst: B(4) }];
    for i in (1..n).rev() {
        ops.push(MicroOp::Aap { src: d(bits[i - 1]), dst: d(bits[i]) });
    }
    ops.push(MicroOp::Aap { src: B(5), dst: d(bits[0]) });
    let mut p = MicroProgram::with_ops(Purpose::UnitRowClone, Backend::Ambit, ops);
    p.meta.digit = Some(digit);
    p.meta.k = Some(1);
    Ok(p)
}

/// Checks that every read of a B-group cell is preceded, within the program, by a
/// write to that cell.
pub fn check_bgroup_discipline(p: &MicroProgram) -> Result<(), String> {
    let mut init = [false; 8];
    let cells = |a: Addr| -> Vec<usize> {
        match a {
            Addr::B(_) => a.resolve().targets().to_vec(),
            _ => Vec::new(),
        }
    };
    for (i, op) in p.ops.iter().enumerate() {
        let (reads, writes): (Vec<usize>, Vec<usize>) = match *op {
            MicroOp::Aap { src, dst } => (cells(src), cells(dst)),
            MicroOp::Ap { addr } => (cells(addr), cells(addr)),
            MicroOp::AapMaj { triple, dst } => {
                let t = cells(triple);
                let mut w = t.clone();
                w.extend(cells(dst));
                (t, w)
            }
            _ => (Vec::new(), Vec::new()),
        };
        for r in reads {
            if !init[r] {
                return Err(format!("op {i} ({}) reads uninitialized B-group row {r}", op.mnemonic()));
            }
        }
        for w in writes {
            init[w] = true;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitRow;
    use crate::fabric::{Subarray, D_BASE};
    use crate::jc::{decode, encode, JcWord};

    #[test]
    fn patterns_match_codec() {
        for n in 1..=9u32 {
            for k in 1..2 * n {
                let p = TransitionPattern::new(n, k).unwrap();
                for v in 0..2 * n {
                    let w = encode(v, n).unwrap();
                    let out = JcWord { n, bits: p.apply(w.bits) };
                    assert_eq!(decode(out).unwrap(), (v + k) % (2 * n), "n={n} k={k} v={v}");
                }
            }
        }
        // k=2, n=5: three forward shifts, two inverted feedbacks
        let p = TransitionPattern::new(5, 2).unwrap();
        assert_eq!(p.inverted_count(), 2);
    }

    fn layout(n: u32) -> CounterLayout {
        CounterLayout::allocate(n, 1, false, Backend::Ambit, D_BASE, 64).unwrap()
    }

    #[test]
    fn step_is_seven_ops_and_muxes() {
        let l = layout(3);
        let p = gen_masked_step(&l, 1, 0, false).unwrap();
        assert_eq!(p.len(), 7);
        let (aap, ap) = count_ops(&p);
        assert!(ap >= 1 && aap + ap == 7);
        check_bgroup_discipline(&p).unwrap();
        // columns enumerate (m, s, b)
        for inv in [false, true] {
            let mut sa = Subarray::new(64, 8).unwrap();
            let bits = &l.digits[0].bits;
            sa.write_row(l.mask, &BitRow::from_fn(8, |c| c & 1 == 1)).unwrap();
            sa.write_row(bits[0], &BitRow::from_fn(8, |c| c & 2 == 2)).unwrap();
            sa.write_row(bits[1], &BitRow::from_fn(8, |c| c & 4 == 4)).unwrap();
            gen_masked_step(&l, 1, 0, inv).unwrap().execute(&mut sa).unwrap();
            let got = sa.peek_row(bits[1]);
            for c in 0..8 {
                let (m, s, b) = (c & 1 == 1, c & 2 == 2, c & 4 == 4);
                assert_eq!(got.get(c), if m { s ^ inv } else { b });
            }
        }
    }

    #[test]
    fn kary_cost_is_flat_in_k() {
        for n in 1..=8 {
            let l = layout(n);
            for k in 1..2 * n {
                for dir in [Direction::Up, Direction::Down] {
                    let p = gen_kary(&l, &KaryRequest { digit: 0, k, dir, mask: Addr::D(l.mask) }).unwrap();
                    assert_eq!(p.len(), 7 * n as usize + 7, "n={n} k={k} {dir:?}");
                    assert_eq!(p.len(), p.meta.expected_ops);
                    check_bgroup_discipline(&p).unwrap();
                    for op in &p.ops {
                        if let MicroOp::Aap { src, dst } = op {
                            assert_ne!(src, dst);
                        }
                    }
                }
            }
        }
        assert_eq!(gen_kary_program(&layout(5), 1).unwrap().len(), 42);
    }

    #[test]
    fn rowclone_unit_increment() {
        let l = layout(5);
        let p = gen_unit_rowclone(&l, 0).unwrap();
        assert_eq!(p.len(), 6);
        let mut sa = Subarray::new(64, 10).unwrap();
        let bits = &l.digits[0].bits;
        for (i, &r) in bits.iter().enumerate() {
            sa.write_row(r, &BitRow::from_fn(10, |c| encode(c as u32, 5).unwrap().bit(i as u32))).unwrap();
        }
        p.execute(&mut sa).unwrap();
        for c in 0..10 {
            let b: Vec<bool> = bits.iter().map(|&r| sa.peek_row(r).get(c)).collect();
            assert_eq!(decode(JcWord::from_bits(5, &b)).unwrap(), (c as u32 + 1) % 10);
        }
    }

    #[test]
    fn listing_shape() {
        let p = gen_masked_step(&layout(5), 1, 0, false).unwrap();
        let text = p.listing();
        assert_eq!(text.lines().filter(|l| l.starts_with("AAP") || l.starts_with("AP")).count(), 7);
        assert!(text.contains("AP   B15"));
    }

    #[test]
    fn bad_k() {
        assert!(matches!(gen_kary_program(&layout(5), 10), Err(UprogError::KOutOfRange { .. })));
        assert!(matches!(gen_kary_program(&layout(5), 0), Err(UprogError::KOutOfRange { .. })));
    }
}
