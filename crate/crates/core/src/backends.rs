//! Pinatubo (AND/OR/NOT) and MAGIC (stateful NOR) counter programs, backend dispatch,
//! the ripple program and the ripple-carry adder baseline.

use crate::fabric::Addr;
use crate::layout::{Backend, CounterLayout, DigitRemap};
use crate::uprog::{
    ambit_step_ops, gen_kary, plan_transition, transition_step, Direction, FlagUpdate, KaryRequest, MicroOp,
    MicroProgram, Purpose, TransitionPattern, UprogError,
};

fn d(r: usize) -> Addr {
    Addr::D(r)
}

fn check_backend(l: &CounterLayout, b: Backend) -> Result<(), UprogError> {
    if b != Backend::Ambit && l.backend != b {
        return Err(UprogError::Unsupported(format!("layout allocated for {} cannot run {b} programs", l.backend)));
    }
    Ok(())
}

/// Whether `mask` is one of the layout's O_next rows, which MAGIC stores complemented.
fn mask_is_complemented(l: &CounterLayout, mask: Addr) -> bool {
    l.o_inverted() && l.digits.iter().any(|dr| Addr::D(dr.o_next) == mask)
}

/// Masked k-ary increment or decrement on any backend.
pub fn gen_increment(backend: Backend, l: &CounterLayout, req: &KaryRequest) -> Result<MicroProgram, UprogError> {
    check_backend(l, backend)?;
    match backend {
        Backend::Ambit => gen_kary(l, req),
        Backend::Pinatubo | Backend::Magic => gen_logic_kary(backend, l, req),
    }
}

struct MagicMask {
    m: Addr,
    mb: Addr,
}

fn magic_prologue(l: &CounterLayout, mask: Addr, ops: &mut Vec<MicroOp>) -> MagicMask {
    let mt = d(l.temps[0]);
    ops.push(MicroOp::Init { dst: mt });
    ops.push(MicroOp::Nor { a: mask, b: None, dst: mt });
    if mask_is_complemented(l, mask) {
        MagicMask { m: mt, mb: mask }
    } else {
        MagicMask { m: mask, mb: mt }
    }
}

/// b' = (s & m) | (b & !m) in NOR-only form; `s` must already carry any inversion.
fn magic_mux(l: &CounterLayout, mm: &MagicMask, s: Addr, own: Addr, dst: Addr, ops: &mut Vec<MicroOp>) {
    let (x, y) = (d(l.temps[1]), d(l.temps[2]));
    ops.extend([
        MicroOp::Init { dst: x },
        MicroOp::Nor { a: s, b: Some(mm.mb), dst: x },
        MicroOp::Init { dst: y },
        MicroOp::Nor { a: own, b: Some(mm.m), dst: y },
        MicroOp::Init { dst },
        MicroOp::Nor { a: x, b: Some(y), dst },
    ]);
}

fn magic_not(l: &CounterLayout, s: Addr, ops: &mut Vec<MicroOp>) -> Addr {
    let sb = d(l.temps[3]);
    ops.push(MicroOp::Init { dst: sb });
    ops.push(MicroOp::Nor { a: s, b: None, dst: sb });
    sb
}

/// Pinatubo masked step. `s_not` names a row already holding the inverted source.
fn pin_mux(l: &CounterLayout, m: Addr, s: Addr, inverted: bool, s_not: Option<Addr>, own: Addr, dst: Addr, ops: &mut Vec<MicroOp>) {
    let (mb, t1, t2) = (d(l.temps[0]), d(l.temps[1]), d(l.temps[2]));
    match (inverted, s_not) {
        (false, _) => ops.push(MicroOp::And { a: s, b: m, dst: t1 }),
        (true, Some(sn)) => ops.push(MicroOp::And { a: sn, b: m, dst: t1 }),
        (true, None) => {
            // !s & m = !(s | !m)
            ops.push(MicroOp::Or { a: s, b: mb, dst: t1 });
            ops.push(MicroOp::Not { a: t1, dst: t1 });
        }
    }
    ops.push(MicroOp::And { a: own, b: mb, dst: t2 });
    ops.push(MicroOp::Or { a: t1, b: t2, dst });
}

fn gen_logic_kary(backend: Backend, l: &CounterLayout, req: &KaryRequest) -> Result<MicroProgram, UprogError> {
    if req.digit >= l.d {
        return Err(UprogError::BadDigit(req.digit));
    }
    let n = l.n;
    let t = transition_step(n, req.k, req.dir)?;
    let pat = TransitionPattern::new(n, t)?;
    let flag = FlagUpdate::for_request(n, req.k, req.dir);
    let dr = &l.digits[req.digit];
    let plan = plan_transition(&pat, &dr.bits, l.spare);
    let theta = d(l.theta);
    let msb = d(l.msb(req.digit));
    let mut ops = Vec::new();
    let msb_new = d(plan.new_bits[n as usize - 1]);
    let o = d(dr.o_next);
    match backend {
        Backend::Pinatubo => {
            let (mb, t1) = (d(l.temps[0]), d(l.temps[1]));
            let m = req.mask;
            ops.push(MicroOp::Not { a: m, dst: mb });
            // theta row keeps the complement of the old MSB
            ops.push(MicroOp::Not { a: msb, dst: theta });
            for st in &plan.steps {
                let s_not = (st.inverted && st.src_bit == n as usize - 1).then_some(theta);
                pin_mux(l, m, d(st.src), st.inverted, s_not, d(st.own), d(st.dst), &mut ops);
            }
            match flag {
                FlagUpdate::IncLo => ops.extend([
                    MicroOp::Or { a: theta, b: msb_new, dst: t1 },
                    MicroOp::Not { a: t1, dst: t1 },
                    MicroOp::Or { a: o, b: t1, dst: o },
                ]),
                FlagUpdate::IncHi => ops.extend([
                    MicroOp::And { a: theta, b: msb_new, dst: t1 },
                    MicroOp::Not { a: t1, dst: t1 },
                    MicroOp::And { a: t1, b: m, dst: t1 },
                    MicroOp::Or { a: o, b: t1, dst: o },
                ]),
                FlagUpdate::DecLo => ops.extend([
                    MicroOp::And { a: theta, b: msb_new, dst: t1 },
                    MicroOp::Or { a: o, b: t1, dst: o },
                ]),
                FlagUpdate::DecHi => ops.extend([
                    MicroOp::Or { a: theta, b: msb_new, dst: t1 },
                    MicroOp::And { a: t1, b: m, dst: t1 },
                    MicroOp::Or { a: o, b: t1, dst: o },
                ]),
            }
        }
        Backend::Magic => {
            let mm = magic_prologue(l, req.mask, &mut ops);
            ops.push(MicroOp::Init { dst: theta });
            ops.push(MicroOp::Nor { a: msb, b: None, dst: theta });
            for st in &plan.steps {
                let s = if !st.inverted {
                    d(st.src)
                } else if st.src_bit == n as usize - 1 {
                    theta
                } else {
                    magic_not(l, d(st.src), &mut ops)
                };
                magic_mux(l, &mm, s, d(st.own), d(st.dst), &mut ops);
            }
            // o names the complemented flag row: clearing a cell raises the flag
            let (f1, f2, x) = (d(l.temps[4]), d(l.temps[5]), d(l.temps[1]));
            match flag {
                FlagUpdate::IncLo => ops.extend([
                    MicroOp::Init { dst: f1 },
                    MicroOp::Nor { a: theta, b: Some(msb_new), dst: f1 },
                    MicroOp::Nor { a: f1, b: None, dst: o },
                ]),
                FlagUpdate::IncHi => ops.extend([
                    MicroOp::Init { dst: f1 },
                    MicroOp::Nor { a: mm.mb, b: Some(theta), dst: f1 },
                    MicroOp::Init { dst: f2 },
                    MicroOp::Nor { a: mm.mb, b: Some(msb_new), dst: f2 },
                    MicroOp::Nor { a: f1, b: Some(f2), dst: o },
                ]),
                FlagUpdate::DecLo => ops.extend([
                    MicroOp::Init { dst: f1 },
                    MicroOp::Nor { a: theta, b: None, dst: f1 },
                    MicroOp::Init { dst: f2 },
                    MicroOp::Nor { a: msb_new, b: None, dst: f2 },
                    MicroOp::Init { dst: x },
                    MicroOp::Nor { a: f1, b: Some(f2), dst: x },
                    MicroOp::Nor { a: x, b: None, dst: o },
                ]),
                FlagUpdate::DecHi => ops.extend([
                    MicroOp::Init { dst: f1 },
                    MicroOp::Nor { a: theta, b: Some(msb_new), dst: f1 },
                    MicroOp::Init { dst: f2 },
                    MicroOp::Nor { a: f1, b: Some(mm.mb), dst: f2 },
                    MicroOp::Nor { a: f2, b: None, dst: o },
                ]),
            }
        }
        Backend::Ambit => unreachable!(),
    }
    let purpose = match req.dir {
        Direction::Up => Purpose::Increment,
        Direction::Down => Purpose::Decrement,
    };
    let mut p = MicroProgram::with_ops(purpose, backend, ops);
    p.meta.digit = Some(req.digit);
    p.meta.k = Some(req.k);
    p.remap = Some(DigitRemap { digit: req.digit, bits: plan.new_bits, spare: plan.new_spare });
    Ok(p)
}

/// One op that resets a flag row to "no carry".
pub fn clear_flag_op(backend: Backend, row: usize) -> MicroOp {
    match backend {
        Backend::Ambit => MicroOp::Aap { src: Addr::C0, dst: d(row) },
        Backend::Pinatubo => MicroOp::And { a: Addr::C0, b: Addr::C0, dst: d(row) },
        // complemented storage: all ones means clear
        Backend::Magic => MicroOp::Init { dst: d(row) },
    }
}

/// row ^= mask, written as a masked step with the row's own complement as source.
pub fn toggle_ops(l: &CounterLayout, row: usize, mask: Addr) -> Vec<MicroOp> {
    let r = d(row);
    match l.backend {
        Backend::Ambit => ambit_step_ops(r, r, true, r, mask, None).to_vec(),
        Backend::Pinatubo => {
            let mut ops = vec![MicroOp::Not { a: mask, dst: d(l.temps[0]) }];
            pin_mux(l, mask, r, true, None, r, r, &mut ops);
            ops
        }
        Backend::Magic => {
            let mut ops = Vec::new();
            let mm = magic_prologue(l, mask, &mut ops);
            let s = magic_not(l, r, &mut ops);
            magic_mux(l, &mm, s, r, r, &mut ops);
            ops
        }
    }
}

/// Carry ripple out of `digit`: a unit step of the next digit masked by O_next(digit),
/// then a one-op clear of O_next(digit). At the MSD there is no next digit; a signed
/// bank folds the flag into O_sign, an unsigned one only clears it (the host reads the
/// flag first to raise the saturation signal).
pub fn gen_ripple(l: &CounterLayout, digit: usize, dir: Direction) -> Result<MicroProgram, UprogError> {
    if digit >= l.d {
        return Err(UprogError::BadDigit(digit));
    }
    let o = l.digits[digit].o_next;
    let mut p = if digit + 1 < l.d {
        let req = KaryRequest { digit: digit + 1, k: 1, dir, mask: d(o) };
        let mut p = gen_increment(l.backend, l, &req)?;
        p.meta.purpose = Purpose::Ripple;
        p
    } else {
        let mut p = MicroProgram::new(Purpose::Ripple, l.backend);
        if let Some(s) = l.o_sign {
            p.ops.extend(toggle_ops(l, s, d(o)));
        }
        p
    };
    p.ops.push(clear_flag_op(l.backend, o));
    p.meta.digit = Some(digit);
    p.meta.expected_ops = p.ops.len();
    Ok(p)
}

/// Bit-serial ripple-carry add on Ambit: acc += addend, over the accumulator width.
/// Addend bits beyond its length read as zero. Per bit the carry is MAJ(a, s, c), an
/// auxiliary MAJ(a, s, !c) lands in T0, and the sum is MAJ(!c', c, aux); 10 commands per
/// bit plus one carry reset.
pub fn rca_add(addend_rows: &[usize], acc_rows: &[usize], carry_row: usize) -> Result<MicroProgram, UprogError> {
    if addend_rows.len() > acc_rows.len() {
        return Err(UprogError::Unsupported(format!(
            "addend has {} bits but accumulator only {}",
            addend_rows.len(),
            acc_rows.len()
        )));
    }
    let b = Addr::B;
    let c = d(carry_row);
    let mut ops = vec![MicroOp::Aap { src: Addr::C0, dst: c }];
    for (i, &s) in acc_rows.iter().enumerate() {
        let a = addend_rows.get(i).map_or(Addr::C0, |&r| d(r));
        let s = d(s);
        ops.extend([
            MicroOp::Aap { src: a, dst: b(0) },
            MicroOp::Aap { src: s, dst: b(1) },
            MicroOp::Aap { src: c, dst: b(10) },
            MicroOp::AapMaj { triple: b(12), dst: b(7) },
            MicroOp::Aap { src: a, dst: b(0) },
            MicroOp::Aap { src: s, dst: b(1) },
            MicroOp::Aap { src: c, dst: b(5) },
            MicroOp::Ap { addr: b(11) },
            MicroOp::Aap { src: b(7), dst: c },
            MicroOp::AapMaj { triple: b(15), dst: s },
        ]);
    }
    let mut p = MicroProgram::with_ops(Purpose::Rca, Backend::Ambit, ops);
    p.meta.expected_ops = 10 * acc_rows.len() + 1;
    Ok(p)
}

/// Commands per RCA addition into a `w`-bit accumulator.
pub fn rca_ops(w: usize) -> usize {
    10 * w + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitRow;
    use crate::fabric::{Subarray, D_BASE};
    use crate::uprog::{check_bgroup_discipline, MicroOp};

    #[test]
    fn quoted_unit_counts() {
        for n in 2..=8u32 {
            let req = KaryRequest { digit: 0, k: 1, dir: Direction::Up, mask: Addr::D(D_BASE + 200) };
            let pl = CounterLayout::allocate(n, 1, false, Backend::Pinatubo, D_BASE, 256).unwrap();
            let pm = CounterLayout::allocate(n, 1, false, Backend::Magic, D_BASE, 256).unwrap();
            let pin = gen_increment(Backend::Pinatubo, &pl, &req).unwrap();
            let mag = gen_increment(Backend::Magic, &pm, &req).unwrap();
            // counting part plus a separate 3-op overflow block
            assert_eq!(pin.len(), 3 * n as usize + 2 + 3);
            assert_eq!(mag.len(), 6 * n as usize + 7);
        }
    }

    #[test]
    fn primitive_sets_are_disjoint() {
        let pl = CounterLayout::allocate(5, 2, true, Backend::Pinatubo, D_BASE, 256).unwrap();
        let pm = CounterLayout::allocate(5, 2, true, Backend::Magic, D_BASE, 256).unwrap();
        for k in 1..10 {
            for dir in [Direction::Up, Direction::Down] {
                let req = KaryRequest { digit: 0, k, dir, mask: Addr::D(pl.mask) };
                for op in gen_increment(Backend::Pinatubo, &pl, &req).unwrap().ops {
                    assert!(matches!(op, MicroOp::And { .. } | MicroOp::Or { .. } | MicroOp::Not { .. }));
                }
                let req = KaryRequest { mask: Addr::D(pm.mask), ..req };
                for op in gen_increment(Backend::Magic, &pm, &req).unwrap().ops {
                    assert!(matches!(op, MicroOp::Nor { .. } | MicroOp::Init { .. }));
                }
            }
        }
        for digit in 0..2 {
            for op in gen_ripple(&pm, digit, Direction::Up).unwrap().ops {
                assert!(matches!(op, MicroOp::Nor { .. } | MicroOp::Init { .. }));
            }
        }
    }

    #[test]
    fn mismatched_layout_rejected() {
        let l = CounterLayout::allocate(5, 1, false, Backend::Ambit, D_BASE, 256).unwrap();
        let req = KaryRequest { digit: 0, k: 1, dir: Direction::Up, mask: Addr::D(l.mask) };
        assert!(gen_increment(Backend::Magic, &l, &req).is_err());
    }

    #[test]
    fn rca_matches_integer_add() {
        let (p, w, cols) = (8usize, 16usize, 64usize);
        let a_rows: Vec<usize> = (0..p).map(|i| D_BASE + i).collect();
        let s_rows: Vec<usize> = (0..w).map(|i| D_BASE + p + i).collect();
        let carry = D_BASE + p + w;
        let mut sa = Subarray::new(carry + 1, cols).unwrap();
        let mut expect = vec![0u64; cols];
        let mut seed = 12345u64;
        for _ in 0..5 {
            let xs: Vec<u64> = (0..cols)
                .map(|_| {
                    seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (seed >> 33) & 0xff
                })
                .collect();
            for (i, &r) in a_rows.iter().enumerate() {
                sa.write_row(r, &BitRow::from_fn(cols, |c| (xs[c] >> i) & 1 == 1)).unwrap();
            }
            let prog = rca_add(&a_rows, &s_rows, carry).unwrap();
            assert_eq!(prog.len(), rca_ops(w));
            check_bgroup_discipline(&prog).unwrap();
            prog.execute(&mut sa).unwrap();
            for c in 0..cols {
                expect[c] = (expect[c] + xs[c]) & 0xffff;
            }
        }
        for c in 0..cols {
            let v: u64 = s_rows.iter().enumerate().map(|(i, &r)| (sa.peek_row(r).get(c) as u64) << i).sum();
            assert_eq!(v, expect[c]);
        }
    }
}
