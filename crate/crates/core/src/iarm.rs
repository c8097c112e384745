//! Host-side carry deferral. A virtual counter shadows the bank: each digit may hold
//! up to 4n-1 (a value plus one pending flag) and ripples are issued only right
//! before an add that would push a digit past that.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::uprog::Direction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Action {
    Ripple(usize),
    Add { digit: usize, k: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Safety {
    /// Decisions use the shadow sum alone, as if every input reached every column.
    Exact,
    /// Decisions use a per-digit bound on any column's value, which stays safe when
    /// columns see different subsets of the inputs.
    #[default]
    ColumnBound,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VirtualCounter {
    pub n: u32,
    pub d: usize,
    pub dir: Direction,
    pub safety: Safety,
    /// Shadow digit values in the direction-normalized frame (value plus 2n per flag).
    pub v: Vec<u32>,
    /// Upper bound on any column's normalized digit value.
    pub u: Vec<u32>,
    pub ripples: u64,
}

impl VirtualCounter {
    pub fn new(n: u32, d: usize, safety: Safety) -> Self {
        VirtualCounter { n, d, dir: Direction::Up, safety, v: vec![0; d], u: vec![0; d], ripples: 0 }
    }

    /// Starts from a preset shadow value (all columns presumed equal).
    pub fn with_value(n: u32, d: usize, safety: Safety, value: u64) -> Self {
        let mut vc = Self::new(n, d, safety);
        let r = 2 * n as u64;
        let mut x = value;
        for i in 0..d {
            vc.v[i] = (x % r) as u32;
            x /= r;
        }
        vc.u = vc.v.clone();
        vc
    }

    fn limit(&self) -> u32 {
        4 * self.n - 1
    }

    fn key(&self, i: usize) -> u32 {
        match self.safety {
            Safety::Exact => self.v[i],
            Safety::ColumnBound => self.u[i],
        }
    }

    fn ripple(&mut self, i: usize, out: &mut Vec<Action>) {
        let r = 2 * self.n;
        if i + 1 < self.d && self.key(i + 1) + 1 > self.limit() {
            self.ripple(i + 1, out);
        }
        if self.v[i] >= r {
            self.v[i] -= r;
            if i + 1 < self.d {
                self.v[i + 1] += 1;
            }
        }
        if self.u[i] >= r {
            self.u[i] = (self.u[i] - r).max(r - 1);
        }
        if i + 1 < self.d {
            self.u[i + 1] += 1;
        }
        self.ripples += 1;
        out.push(Action::Ripple(i));
    }

    /// Plan one digit add: any unavoidable ripples first, then the add itself.
    pub fn plan_add(&mut self, digit: usize, k: u32, out: &mut Vec<Action>) {
        assert!(digit < self.d && k < 2 * self.n);
        if k == 0 {
            return;
        }
        if self.key(digit) + k > self.limit() {
            self.ripple(digit, out);
        }
        self.v[digit] += k;
        self.u[digit] += k;
        out.push(Action::Add { digit, k });
    }

    /// Plan a multi-digit input (LSD first); zero digits issue nothing.
    pub fn plan(&mut self, digits: &[u32]) -> Vec<Action> {
        let mut out = Vec::new();
        for (i, &k) in digits.iter().enumerate() {
            self.plan_add(i, k, &mut out);
        }
        out
    }

    /// Ripple every digit that may hold a flag, lowest first.
    pub fn flush(&mut self) -> Vec<Action> {
        let r = 2 * self.n;
        let mut out = Vec::new();
        for i in 0..self.d {
            if self.key(i) >= r {
                self.ripple(i, &mut out);
            }
        }
        out
    }

    /// Flip the counting direction. Must follow a flush; values are re-expressed in the
    /// new frame (a digit w becomes 2n-1-w).
    pub fn switch_direction(&mut self, dir: Direction) {
        if dir == self.dir {
            return;
        }
        let r = 2 * self.n;
        for i in 0..self.d {
            debug_assert!(self.v[i] < r);
            self.v[i] = r - 1 - self.v[i];
            // any column's digit may sit anywhere in [0, 2n)
            self.u[i] = r - 1;
        }
        self.dir = dir;
    }

    /// Shadow total, meaningful when all columns see every input.
    pub fn value(&self) -> u128 {
        let r = 2 * self.n as u128;
        let mut t = 0u128;
        for i in (0..self.d).rev() {
            t = t * r + self.v[i] as u128;
        }
        t
    }

    /// Compact state: MSD first, a leading "¹" marks a digit in [2n, 4n).
    pub fn trace_state(&self) -> String {
        let r = 2 * self.n;
        let mut s = String::new();
        for i in (0..self.d).rev() {
            let v = self.v[i];
            if v >= r {
                s.push('¹');
                s.push_str(&(v - r).to_string());
            } else {
                s.push_str(&v.to_string());
            }
        }
        s
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Ripple(i) => write!(f, "ripple {i}"),
            Action::Add { digit, k } => write!(f, "add {k} @ {digit}"),
        }
    }
}

/// Trace of repeated adds of `x` starting from `start`, one line per step.
pub fn trace(n: u32, d: usize, start: u64, x: u64, steps: usize) -> Vec<(usize, String, Vec<Action>)> {
    let mut vc = VirtualCounter::with_value(n, d, Safety::Exact, start);
    let digits = crate::jc::digits_of(x, 2 * n as u64);
    (1..=steps)
        .map(|s| {
            let plan = vc.plan(&digits);
            (s, vc.trace_state(), plan)
        })
        .collect()
}
