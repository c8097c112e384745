//! Broadcast-and-accumulate kernels: integer-binary GEMV/GEMM, CSD bit-sliced
//! integer-integer GEMM, and helpers for the counter-level vector ops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitRow;
use crate::counter::{BankError, CounterBank, Counting, Policy};
use crate::fabric::{Addr, Subarray, D_BASE};
use crate::iarm::Safety;
use crate::layout::{Backend, CounterLayout};
use crate::uprog::OpCounts;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("entry {v} does not fit in {p} bits")]
    Range { v: i64, p: u32 },
    #[error("result bound {bound} needs more than {digits} digits")]
    Capacity { bound: u128, digits: usize },
    #[error("column {col} of output row {row} did not decode")]
    Decode { row: usize, col: usize },
    #[error("bad input: {0}")]
    Input(String),
}

/// One mask row: columns where logical row `row` carries +-2^shift.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slice {
    pub row: usize,
    pub shift: u32,
    pub negative: bool,
    pub mask: BitRow,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    pub k: usize,
    pub n: usize,
    pub slices: Vec<Slice>,
}

impl MaskMatrix {
    /// K x N binary matrix, one slice per row with any set entry.
    pub fn binary(z: &[Vec<u8>]) -> Result<Self, TensorError> {
        let n = z.first().map_or(0, |r| r.len());
        let mut slices = Vec::new();
        for (i, r) in z.iter().enumerate() {
            if r.len() != n {
                return Err(TensorError::Shape(format!("row {i} has {} entries, expected {n}", r.len())));
            }
            if r.iter().any(|&b| b > 1) {
                return Err(TensorError::Input(format!("row {i} is not binary")));
            }
            if r.contains(&1) {
                slices.push(Slice { row: i, shift: 0, negative: false, mask: BitRow::from_fn(n, |c| r[c] == 1) });
            }
        }
        Ok(MaskMatrix { k: z.len(), n, slices })
    }

    pub fn slices_of(&self, row: usize) -> impl Iterator<Item = &Slice> {
        self.slices.iter().filter(move |s| s.row == row)
    }

    pub fn reconstruct(&self) -> Vec<Vec<i64>> {
        let mut z = vec![vec![0i64; self.n]; self.k];
        for s in &self.slices {
            let w = if s.negative { -(1i64 << s.shift) } else { 1i64 << s.shift };
            for (c, zc) in z[s.row].iter_mut().enumerate() {
                if s.mask.get(c) {
                    *zc += w;
                }
            }
        }
        z
    }

    /// Per row, the largest sum of slice magnitudes over any column. This bounds every
    /// partial sum, including CSD digits that overshoot |Z_ij| before cancelling.
    fn row_weights(&self) -> Vec<u128> {
        let mut w = vec![vec![0u128; self.n]; self.k];
        for s in &self.slices {
            for (c, wc) in w[s.row].iter_mut().enumerate() {
                if s.mask.get(c) {
                    *wc += 1u128 << s.shift;
                }
            }
        }
        w.into_iter().map(|r| r.into_iter().max().unwrap_or(0)).collect()
    }

    fn has_negative(&self) -> bool {
        self.slices.iter().any(|s| s.negative)
    }
}

/// Non-adjacent form: (position, negative) pairs, lowest position first.
pub fn csd_digits(v: i64) -> Vec<(u32, bool)> {
    let mut out = Vec::new();
    let mut x = v as i128;
    let mut j = 0u32;
    while x != 0 {
        if x & 1 == 1 {
            // pick the digit that leaves a multiple of 4
            let d = 2 - (x.rem_euclid(4));
            out.push((j, d < 0));
            x -= d;
        }
        x >>= 1;
        j += 1;
    }
    out
}

/// Slices an integer matrix into signed power-of-two masks. Signed entries lie in
/// [-2^(p-1), 2^(p-1)) and use CSD digits (at most 2p slice rows per logical row);
/// unsigned entries lie in [0, 2^p) and use plain binary digits (at most p rows).
pub fn csd_slice(z: &[Vec<i64>], p: u32, signed: bool) -> Result<MaskMatrix, TensorError> {
    let n = z.first().map_or(0, |r| r.len());
    let (lo, hi) = if signed { (-(1i64 << (p - 1)), 1i64 << (p - 1)) } else { (0, 1i64 << p) };
    let mut slices = Vec::new();
    for (i, row) in z.iter().enumerate() {
        if row.len() != n {
            return Err(TensorError::Shape(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        let mut used: Vec<(u32, bool, BitRow)> = Vec::new();
        for (c, &v) in row.iter().enumerate() {
            if v < lo || v >= hi {
                return Err(TensorError::Range { v, p });
            }
            let digits = if signed {
                csd_digits(v)
            } else {
                (0..p).filter(|j| (v >> j) & 1 == 1).map(|j| (j, false)).collect()
            };
            for (j, neg) in digits {
                match used.iter_mut().find(|u| u.0 == j && u.1 == neg) {
                    Some(u) => u.2.set(c, true),
                    None => {
                        let mut m = BitRow::zeros(n);
                        m.set(c, true);
                        used.push((j, neg, m));
                    }
                }
            }
        }
        used.sort_by_key(|u| (u.0, u.1));
        slices.extend(used.into_iter().map(|(shift, negative, mask)| Slice { row: i, shift, negative, mask }));
    }
    Ok(MaskMatrix { k: z.len(), n, slices })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub n: u32,
    pub policy: Policy,
    pub counting: Counting,
    pub safety: Safety,
    /// Fixed digit count; by default the smallest count that holds the result bound.
    pub digits: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { n: 4, policy: Policy::Iarm, counting: Counting::Kary, safety: Safety::ColumnBound, digits: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KernelReport {
    /// All fabric ops, copy-out included.
    pub ops: OpCounts,
    pub copy_ops: u64,
    pub invocations: u64,
    pub ripples: u64,
    pub digits: usize,
    pub signed: bool,
}

fn digits_for(n: u32, bound: u128) -> usize {
    let r = 2 * n as u128;
    let mut d = 1;
    let mut cap = r;
    while cap <= bound {
        cap *= r;
        d += 1;
    }
    d
}

/// Final fabric and counter bank of a kernel run.
pub struct KernelState {
    pub sa: Subarray,
    pub bank: CounterBank,
}

fn run_rows(
    cfg: &KernelConfig,
    x: &[Vec<i64>],
    z: &MaskMatrix,
    copy_out: bool,
) -> Result<(Vec<Vec<i128>>, KernelReport, KernelState), TensorError> {
    for (o, r) in x.iter().enumerate() {
        if r.len() != z.k {
            return Err(TensorError::Shape(format!("X row {o} has {} entries, Z has {} rows", r.len(), z.k)));
        }
    }
    if z.n == 0 {
        return Err(TensorError::Shape("Z has no columns".into()));
    }
    let weights = z.row_weights();
    let bound = x
        .iter()
        .map(|r| r.iter().zip(&weights).map(|(&v, &w)| v.unsigned_abs() as u128 * w).sum::<u128>())
        .max()
        .unwrap_or(0);
    let signed = z.has_negative() || x.iter().flatten().any(|&v| v < 0);
    let d = match cfg.digits {
        Some(d) => {
            if (2 * cfg.n as u128).pow(d as u32) <= bound {
                return Err(TensorError::Capacity { bound, digits: d });
            }
            d
        }
        None => digits_for(cfg.n, bound),
    };
    let bank_rows = CounterLayout::rows_needed(cfg.n, d, signed, Backend::Ambit);
    let mask_base = D_BASE + bank_rows;
    let mut sa = Subarray::new(mask_base + z.slices.len(), z.n).map_err(BankError::from)?;
    let mut bank = CounterBank::alloc(&mut sa, cfg.n, d, signed, Backend::Ambit)?;
    if cfg.policy == Policy::Iarm {
        bank.attach_iarm(cfg.safety);
    }
    for (s, sl) in z.slices.iter().enumerate() {
        sa.write_row(mask_base + s, &sl.mask).map_err(BankError::from)?;
    }
    let mut report = KernelReport { digits: d, signed, ..Default::default() };
    let mut out = Vec::with_capacity(x.len());
    let mut dirty = false;
    for (o, xr) in x.iter().enumerate() {
        if dirty {
            bank.clear(&mut sa)?;
        }
        let before = bank.stats.ops.total();
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0 {
                continue;
            }
            for (s, sl) in z.slices.iter().enumerate().filter(|(_, s)| s.row == i) {
                // host-side shift and sign
                let v = (xi << sl.shift) * if sl.negative { -1 } else { 1 };
                bank.accumulate_value(&mut sa, v, Addr::D(mask_base + s), cfg.policy, cfg.counting)?;
            }
        }
        bank.flush(&mut sa)?;
        let y = bank.read_counters(&mut sa).map_err(BankError::from)?;
        let y = y
            .into_iter()
            .enumerate()
            .map(|(c, v)| v.map_err(|_| TensorError::Decode { row: o, col: c }))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(y);
        dirty = bank.stats.ops.total() > before;
        if copy_out && dirty {
            report.copy_ops += bank.layout.data_rows() as u64;
        }
    }
    report.ops = bank.stats.ops + OpCounts { aap: report.copy_ops, ap: 0, logic: 0 };
    report.invocations = bank.stats.invocations;
    report.ripples = bank.stats.ripples;
    Ok((out, report, KernelState { sa, bank }))
}

/// Y = sum_i X_i * Z_i over the mask rows of Z.
pub fn gemv(cfg: &KernelConfig, x: &[i64], z: &MaskMatrix) -> Result<(Vec<i128>, KernelReport), TensorError> {
    let (mut y, r, _) = run_rows(cfg, &[x.to_vec()], z, false)?;
    Ok((y.pop().unwrap(), r))
}

/// Row-sequential GEMM with one live counter row; each completed row is charged a
/// copy-out of the bank's data rows when it issued any ops.
pub fn gemm(cfg: &KernelConfig, x: &[Vec<i64>], z: &MaskMatrix) -> Result<(Vec<Vec<i128>>, KernelReport), TensorError> {
    run_rows(cfg, x, z, true).map(|(y, r, _)| (y, r))
}

/// `gemm` that also hands back the final fabric and bank.
pub fn gemm_with_state(
    cfg: &KernelConfig,
    x: &[Vec<i64>],
    z: &MaskMatrix,
) -> Result<(Vec<Vec<i128>>, KernelReport, KernelState), TensorError> {
    run_rows(cfg, x, z, true)
}

/// Integer-integer GEMM through bit-sliced masks.
pub fn gemm_int(
    cfg: &KernelConfig,
    x: &[Vec<i64>],
    zint: &[Vec<i64>],
    p: u32,
    signed: bool,
) -> Result<(Vec<Vec<i128>>, KernelReport), TensorError> {
    let z = csd_slice(zint, p, signed)?;
    gemm(cfg, x, &z)
}

pub fn oracle_gemm(x: &[Vec<i64>], z: &[Vec<i64>]) -> Vec<Vec<i128>> {
    let n = z.first().map_or(0, |r| r.len());
    x.iter()
        .map(|xr| {
            (0..n)
                .map(|c| xr.iter().zip(z).map(|(&a, zr)| a as i128 * zr[c] as i128).sum())
                .collect()
        })
        .collect()
}

/// Random kernel inputs: the dimensions-only form of a kernel config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct RandomSpec {
    pub M: usize,
    pub K: usize,
    pub N: usize,
    pub bits: u32,
    #[serde(default)]
    pub signed: bool,
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default)]
    pub seed: u64,
    /// "binary", "ternary" or "int"; int uses `z_bits`.
    #[serde(default = "default_z_kind")]
    pub z_kind: String,
    #[serde(default = "default_z_bits")]
    pub z_bits: u32,
}

fn default_z_kind() -> String {
    "binary".into()
}

fn default_z_bits() -> u32 {
    4
}

impl RandomSpec {
    pub fn generate(&self) -> Result<(Vec<Vec<i64>>, Vec<Vec<i64>>), TensorError> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        if self.bits == 0 || self.bits > 32 {
            return Err(TensorError::Input(format!("bits={} out of range", self.bits)));
        }
        let (lo, hi) = if self.signed { (-(1i64 << (self.bits - 1)), 1i64 << (self.bits - 1)) } else { (0, 1i64 << self.bits) };
        let x = (0..self.M)
            .map(|_| {
                (0..self.K)
                    .map(|_| if rng.gen_bool(self.sparsity.clamp(0.0, 1.0)) { 0 } else { rng.gen_range(lo..hi) })
                    .collect()
            })
            .collect();
        let z = (0..self.K)
            .map(|_| {
                (0..self.N)
                    .map(|_| match self.z_kind.as_str() {
                        "ternary" => rng.gen_range(-1..=1),
                        "int" => rng.gen_range(-(1i64 << (self.z_bits - 1))..(1i64 << (self.z_bits - 1))),
                        _ => rng.gen_range(0..=1),
                    })
                    .collect()
            })
            .collect();
        Ok((x, z))
    }

    pub fn masks(&self, z: &[Vec<i64>]) -> Result<MaskMatrix, TensorError> {
        match self.z_kind.as_str() {
            "binary" => MaskMatrix::binary(&z.iter().map(|r| r.iter().map(|&v| v as u8).collect()).collect::<Vec<_>>()),
            "ternary" => csd_slice(z, 2, true),
            "int" => csd_slice(z, self.z_bits, true),
            other => Err(TensorError::Input(format!("unknown z_kind {other:?}"))),
        }
    }
}

/// Dense integer matrix CSV: a first line with the dimensions, then one row per line.
pub fn read_matrix_csv(text: &str) -> Result<Vec<Vec<i64>>, TensorError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut recs = rdr.records();
    let bad = |e: csv::Error| TensorError::Input(e.to_string());
    let head = recs.next().ok_or_else(|| TensorError::Input("empty matrix file".into()))?.map_err(bad)?;
    let dims: Vec<usize> = head
        .iter()
        .map(|s| s.parse().map_err(|_| TensorError::Input(format!("bad dimension {s:?}"))))
        .collect::<Result<_, _>>()?;
    if dims.len() != 2 {
        return Err(TensorError::Input("header must be rows,cols".into()));
    }
    let mut m = Vec::with_capacity(dims[0]);
    for rec in recs {
        let rec = rec.map_err(bad)?;
        let row: Vec<i64> = rec
            .iter()
            .map(|s| s.parse().map_err(|_| TensorError::Input(format!("bad entry {s:?}"))))
            .collect::<Result<_, _>>()?;
        if row.len() != dims[1] {
            return Err(TensorError::Shape(format!("row {} has {} entries, expected {}", m.len(), row.len(), dims[1])));
        }
        m.push(row);
    }
    if m.len() != dims[0] {
        return Err(TensorError::Shape(format!("{} rows, header says {}", m.len(), dims[0])));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csd_examples() {
        assert_eq!(csd_digits(7), vec![(0, true), (3, false)]);
        assert!(csd_digits(0).is_empty());
        for v in -300i64..300 {
            let d = csd_digits(v);
            let s: i64 = d.iter().map(|&(j, neg)| if neg { -(1 << j) } else { 1 << j }).sum();
            assert_eq!(s, v);
            // non-adjacent
            for w in d.windows(2) {
                assert!(w[1].0 > w[0].0 + 1);
            }
        }
    }

    #[test]
    fn slice_reconstruction_and_bound() {
        let z: Vec<Vec<i64>> = (0..8).map(|i| (0..16).map(|c| ((i * 16 + c) % 16) as i64 - 8).collect()).collect();
        let m = csd_slice(&z, 4, true).unwrap();
        assert_eq!(m.reconstruct(), z);
        for i in 0..8 {
            assert!(m.slices_of(i).count() <= 8);
        }
        assert!(csd_slice(&[vec![8]], 4, true).is_err());
        let u = csd_slice(&[vec![15, 0, 9]], 4, false).unwrap();
        assert_eq!(u.slices.len(), 4);
    }

    #[test]
    fn gemv_small() {
        let z = MaskMatrix::binary(&[vec![1, 0, 1], vec![0, 1, 1]]).unwrap();
        let (y, r) = gemv(&KernelConfig::default(), &[45, 200], &z).unwrap();
        assert_eq!(y, vec![45, 200, 245]);
        assert!(r.ops.total() > 0);
        let (y, r) = gemv(&KernelConfig::default(), &[0, 0], &z).unwrap();
        assert_eq!(y, vec![0, 0, 0]);
        assert_eq!(r.ops.total(), 0);
    }

    #[test]
    fn gemm_signed_int() {
        let spec = RandomSpec { M: 3, K: 5, N: 7, bits: 6, signed: true, sparsity: 0.2, seed: 9, z_kind: "int".into(), z_bits: 4 };
        let (x, z) = spec.generate().unwrap();
        for policy in [Policy::FullRipple, Policy::Iarm] {
            let cfg = KernelConfig { policy, ..Default::default() };
            let (y, _) = gemm_int(&cfg, &x, &z, 4, true).unwrap();
            assert_eq!(y, oracle_gemm(&x, &z));
        }
    }

    #[test]
    fn csv_roundtrip() {
        let m = read_matrix_csv("2,3\n1,2,3\n-4,5,6\n").unwrap();
        assert_eq!(m, vec![vec![1, 2, 3], vec![-4, 5, 6]]);
        assert!(read_matrix_csv("2,3\n1,2,3\n").is_err());
    }
}
