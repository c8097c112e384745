//! Experiment drivers: op-count sweeps, fault-rate sweeps, kernel runs, IARM traces
//! and the bank-parallel latency estimate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counter::{BankError, CounterBank, Counting, ExecMode, Policy};
use crate::fabric::{Subarray, D_BASE};
use crate::iarm::{trace, Safety};
use crate::layout::{Backend, CounterLayout};
use crate::shield::{rates_analytic, rates_montecarlo, ProtectionConfig, ShieldError, P_READ_BOUND};
use crate::tensor::{gemm_with_state, oracle_gemm, read_matrix_csv, KernelConfig, KernelReport, RandomSpec, TensorError};
use crate::uprog::{OpCounts, OpKind};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error("oracle mismatch at row {row}, column {col}: got {got}, want {want}")]
    Oracle { row: usize, col: usize, got: i128, want: i128 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// DRAM timing in nanoseconds. Defaults are DDR5-4400 figures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingModel {
    pub t_ras: f64,
    pub t_rp: f64,
    /// Fixed extra time per AAP on top of t_RAS + t_RP.
    pub slack: f64,
    pub t_rrd: f64,
    pub t_faw: f64,
    pub banks: usize,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel { t_ras: 32.0, t_rp: 16.36, slack: 4.0, t_rrd: 3.636, t_faw: 14.5, banks: 1 }
    }
}

impl TimingModel {
    pub fn t_aap(&self) -> f64 {
        self.t_ras + self.t_rp + self.slack
    }

    pub fn t_ap(&self) -> f64 {
        self.t_ras + self.t_rp
    }

    pub fn op_time(&self, k: OpKind) -> f64 {
        match k {
            OpKind::Ap => self.t_ap(),
            OpKind::Aap | OpKind::Logic => self.t_aap(),
        }
    }

    /// Issue-by-issue schedule of an op stream dealt round-robin to `banks` banks.
    /// Each issue waits for t_RRD after the previous one, t_FAW after the fourth
    /// previous one, and for its bank to finish (op time plus t_RRD). Returns the time
    /// at which every bank is idle again.
    pub fn schedule(&self, ops: impl IntoIterator<Item = OpKind>, banks: usize) -> f64 {
        let banks = banks.max(1);
        let mut free = vec![0.0f64; banks];
        let mut last4 = [f64::NEG_INFINITY; 4];
        let mut prev = f64::NEG_INFINITY;
        let mut end = 0.0f64;
        for (i, k) in ops.into_iter().enumerate() {
            let b = i % banks;
            let s = free[b].max(prev + self.t_rrd).max(last4[i % 4] + self.t_faw).max(0.0);
            free[b] = s + self.op_time(k) + self.t_rrd;
            last4[i % 4] = s;
            prev = s;
            end = end.max(free[b]);
        }
        end
    }
}

/// Latency of a program's ops on `tm.banks` banks, AAP-class ops issued first.
pub fn estimate_latency(tm: &TimingModel, ops: OpCounts) -> f64 {
    estimate_latency_on(tm, ops, tm.banks)
}

pub fn estimate_latency_on(tm: &TimingModel, ops: OpCounts, banks: usize) -> f64 {
    let stream = std::iter::repeat(OpKind::Aap)
        .take(ops.aap as usize)
        .chain(std::iter::repeat(OpKind::Logic).take(ops.logic as usize))
        .chain(std::iter::repeat(OpKind::Ap).take(ops.ap as usize));
    tm.schedule(stream, banks)
}

/// Closed form for `n` AAPs: the last issue time is the longest chain of t_RRD,
/// t_FAW and per-bank gaps that spans n-1 issues; the bank then stays busy for one
/// more op time plus t_RRD.
pub fn closed_form_latency(tm: &TimingModel, n: u64, banks: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let t = tm.t_aap() + tm.t_rrd;
    let span = n - 1;
    let bk = banks.max(1) as u64;
    let mut best = f64::NEG_INFINITY;
    for c in 0..=span / bk {
        let rest = span - c * bk;
        for b in 0..=rest / 4 {
            let a = rest - 4 * b;
            best = best.max(a as f64 * tm.t_rrd + b as f64 * tm.t_faw + c as f64 * t);
        }
    }
    best + t
}

/// Smallest digit count with (2n)^D >= 2^bits.
pub fn digits_for_bits(n: u32, bits: u32) -> usize {
    let r = 2 * n as u128;
    let target = 1u128 << bits.min(127);
    let (mut d, mut cap) = (1usize, r);
    while cap < target {
        cap = cap.saturating_mul(r);
        d += 1;
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepPolicy {
    /// Unit increments, full ripple after each.
    Unary,
    /// One k-ary increment per digit, full ripple after each.
    Kary,
    /// One k-ary increment per digit, one ripple per digit.
    DigitSerial,
    Iarm,
}

impl SweepPolicy {
    pub const ALL: [SweepPolicy; 4] = [SweepPolicy::Unary, SweepPolicy::Kary, SweepPolicy::DigitSerial, SweepPolicy::Iarm];

    pub fn parts(self) -> (Policy, Counting) {
        match self {
            SweepPolicy::Unary => (Policy::FullRipple, Counting::Unit),
            SweepPolicy::Kary => (Policy::FullRipple, Counting::Kary),
            SweepPolicy::DigitSerial => (Policy::DigitSerial, Counting::Kary),
            SweepPolicy::Iarm => (Policy::Iarm, Counting::Kary),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepPolicy::Unary => "unary",
            SweepPolicy::Kary => "kary",
            SweepPolicy::DigitSerial => "digit_serial",
            SweepPolicy::Iarm => "iarm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    OpcountSweep,
    FaultSweep,
    KernelRun,
    IarmTrace,
}

impl Experiment {
    pub fn dir_name(self) -> &'static str {
        match self {
            Experiment::OpcountSweep => "opcount",
            Experiment::FaultSweep => "faults",
            Experiment::KernelRun => "kernel",
            Experiment::IarmTrace => "trace-iarm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub random: RandomSpec,
    /// Optional dims-first CSV files replacing the random operands.
    pub x_csv: Option<PathBuf>,
    pub z_csv: Option<PathBuf>,
    pub config: KernelConfig,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            random: RandomSpec {
                M: 1,
                K: 16,
                N: 16,
                bits: 8,
                signed: false,
                sparsity: 0.0,
                seed: 1,
                z_kind: "ternary".into(),
                z_bits: 4,
            },
            x_csv: None,
            z_csv: None,
            config: KernelConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSpec {
    pub n: u32,
    pub d: usize,
    pub start: u64,
    pub x: u64,
    pub steps: usize,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec { n: 5, d: 4, start: 9999, x: 9, steps: 13 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub backend: Backend,
    pub seed: u64,
    /// Radices swept by the op-count experiment (even, >= 2).
    pub radices: Vec<u32>,
    /// Accumulator widths the counters are sized to match.
    pub capacity_bits: Vec<u32>,
    /// Fixed digit count; overrides `capacity_bits` when set.
    pub digits: Option<usize>,
    pub policies: Vec<SweepPolicy>,
    pub streams: usize,
    pub stream_len: usize,
    pub input_bits: u32,
    /// Fraction of stream inputs forced to zero.
    pub sparsity: f64,
    pub fault_p: Vec<f64>,
    pub fault_r: Vec<u32>,
    pub fault_trials: u64,
    pub p_read: f64,
    pub protection: ProtectionConfig,
    pub kernel: KernelSpec,
    pub trace: TraceSpec,
    pub timing: TimingModel,
    /// Bank counts reported by kernel runs.
    pub bank_counts: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::OpcountSweep,
            backend: Backend::Ambit,
            seed: 1,
            radices: vec![2, 4, 6, 8, 10, 12, 16],
            capacity_bits: vec![16, 32, 64],
            digits: None,
            policies: SweepPolicy::ALL.to_vec(),
            streams: 40,
            stream_len: 256,
            input_bits: 8,
            sparsity: 0.0,
            fault_p: vec![1e-1, 1e-2, 1e-4],
            fault_r: vec![2, 4, 6],
            fault_trials: 1_000_000,
            p_read: P_READ_BOUND,
            protection: ProtectionConfig::default(),
            kernel: KernelSpec::default(),
            trace: TraceSpec::default(),
            timing: TimingModel::default(),
            bank_counts: vec![1, 2, 4, 8, 16],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if let Some(r) = self.radices.iter().find(|&&r| r < 2 || r % 2 == 1 || r > 64) {
            return bad(format!("radix {r} must be even and in [2, 64]"));
        }
        if self.input_bits == 0 || self.input_bits > 32 {
            return bad(format!("input_bits {} out of range", self.input_bits));
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return bad(format!("sparsity {} out of range", self.sparsity));
        }
        if let Some(&p) = self.fault_p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("fault rate {p} out of range"));
        }
        if self.fault_r.iter().any(|&r| r == 0) {
            return bad("fr checks must be positive".into());
        }
        if self.capacity_bits.is_empty() && self.digits.is_none() {
            return bad("need capacity_bits or digits".into());
        }
        Ok(())
    }

    /// Digit counts swept for radix `r`, paired with the capacity label.
    pub fn digit_targets(&self, radix: u32) -> Vec<(u32, usize)> {
        match self.digits {
            Some(d) => vec![(0, d)],
            None => self.capacity_bits.iter().map(|&b| (b, digits_for_bits(radix / 2, b))).collect(),
        }
    }
}

/// Input stream `s` of a sweep: uniform `bits`-bit values, some zeroed.
pub fn stream_inputs(seed: u64, s: usize, len: usize, bits: u32, sparsity: f64) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (s as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    (0..len)
        .map(|_| {
            let v = rng.gen_range(0..1i64 << bits);
            if sparsity > 0.0 && rng.gen_bool(sparsity) {
                0
            } else {
                v
            }
        })
        .collect()
}

/// Total ops to accumulate one stream into a fresh counter of `d` digits, flush
/// included. Only op counts are tracked.
pub fn stream_ops(backend: Backend, n: u32, d: usize, policy: SweepPolicy, inputs: &[i64]) -> Result<OpCounts, BankError> {
    let rows = D_BASE + CounterLayout::rows_needed(n, d, false, backend);
    let mut sa = Subarray::new(rows, 1)?;
    let mut bank = CounterBank::alloc(&mut sa, n, d, false, backend)?;
    bank.set_mode(ExecMode::CountOnly);
    let (pol, counting) = policy.parts();
    if pol == Policy::Iarm {
        bank.attach_iarm(Safety::ColumnBound);
    }
    let mask = crate::fabric::Addr::D(bank.mask_row());
    for &x in inputs {
        bank.accumulate_value(&mut sa, x, mask, pol, counting)?;
    }
    bank.flush(&mut sa)?;
    Ok(bank.stats.ops)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpcountRow {
    pub radix: u32,
    pub capacity: u32,
    pub digits: usize,
    pub policy: &'static str,
    pub mean_ops: f64,
    pub mean_aap: f64,
    pub mean_ap: f64,
    pub inputs: usize,
}

/// Per-stream op totals for one sweep point.
pub fn sweep_point(cfg: &ExperimentConfig, radix: u32, d: usize, policy: SweepPolicy) -> Result<Vec<OpCounts>, BenchError> {
    (0..cfg.streams)
        .map(|s| {
            let xs = stream_inputs(cfg.seed, s, cfg.stream_len, cfg.input_bits, cfg.sparsity);
            Ok(stream_ops(cfg.backend, radix / 2, d, policy, &xs)?)
        })
        .collect()
}

pub fn run_opcount_sweep(cfg: &ExperimentConfig) -> Result<Vec<OpcountRow>, BenchError> {
    cfg.validate()?;
    let mut points = Vec::new();
    for &r in &cfg.radices {
        for (bits, d) in cfg.digit_targets(r) {
            for &p in &cfg.policies {
                points.push((r, bits, d, p));
            }
        }
    }
    let mut rows: Vec<OpcountRow> = points
        .par_iter()
        .map(|&(radix, capacity, digits, policy)| {
            let per = sweep_point(cfg, radix, digits, policy)?;
            let inputs = cfg.streams * cfg.stream_len;
            let tot = per.iter().fold(OpCounts::default(), |a, &b| a + b);
            let f = inputs.max(1) as f64;
            Ok(OpcountRow {
                radix,
                capacity,
                digits,
                policy: policy.name(),
                mean_ops: tot.total() as f64 / f,
                mean_aap: (tot.aap + tot.logic) as f64 / f,
                mean_ap: tot.ap as f64 / f,
                inputs,
            })
        })
        .collect::<Result<_, BenchError>>()?;
    rows.sort_by(|a, b| (a.radix, a.capacity, a.policy).cmp(&(b.radix, b.capacity, b.policy)));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaultRow {
    pub p: f64,
    pub r: u32,
    pub error_rate: f64,
    pub detect_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub source: &'static str,
}

/// Analytic and Monte-Carlo rates over the (p, r) grid. Interval columns hold the
/// error-rate interval of the Monte-Carlo rows.
pub fn run_fault_sweep(cfg: &ExperimentConfig) -> Result<Vec<FaultRow>, BenchError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &p in &cfg.fault_p {
        for &r in &cfg.fault_r {
            let a = rates_analytic(p, r, cfg.p_read);
            rows.push(FaultRow {
                p,
                r,
                error_rate: a.error_rate,
                detect_rate: a.detect_rate,
                ci_low: a.error_rate,
                ci_high: a.error_rate,
                source: "analytic",
            });
            if cfg.fault_trials > 0 {
                let m = rates_montecarlo(p, r, cfg.fault_trials, cfg.seed ^ ((r as u64) << 32) ^ p.to_bits())?;
                rows.push(FaultRow {
                    p,
                    r,
                    error_rate: m.error_rate,
                    detect_rate: m.detect_rate,
                    ci_low: m.error_ci.0,
                    ci_high: m.error_ci.1,
                    source: "mc",
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelRun {
    pub y: Vec<Vec<i128>>,
    pub report: KernelReport,
    pub oracle_checked: bool,
    /// (banks, latency ns) per configured bank count.
    pub latency: Vec<(usize, f64)>,
    #[serde(skip)]
    pub state: Option<(String, String)>,
}

fn load_operands(spec: &KernelSpec) -> Result<(Vec<Vec<i64>>, Vec<Vec<i64>>), BenchError> {
    let (mut x, mut z) = spec.random.generate()?;
    if let Some(p) = &spec.x_csv {
        x = read_matrix_csv(&fs::read_to_string(p)?)?;
    }
    if let Some(p) = &spec.z_csv {
        z = read_matrix_csv(&fs::read_to_string(p)?)?;
    }
    Ok((x, z))
}

/// Runs the configured kernel; the result is cross-checked against the integer
/// reference unless `check` is off. `keep_state` retains the final fabric
/// snapshot and counter CSV.
pub fn run_kernel(cfg: &ExperimentConfig, check: bool, keep_state: bool) -> Result<KernelRun, BenchError> {
    if cfg.backend != Backend::Ambit {
        return Err(BenchError::Config(format!("kernels run on ambit, not {}", cfg.backend)));
    }
    let (x, z) = load_operands(&cfg.kernel)?;
    let signed = cfg.kernel.random.signed || z.iter().flatten().any(|&v| v < 0);
    let spec = RandomSpec {
        z_kind: if cfg.kernel.z_csv.is_some() { "int".into() } else { cfg.kernel.random.z_kind.clone() },
        signed,
        ..cfg.kernel.random.clone()
    };
    let masks = spec.masks(&z)?;
    let (y, report, st) = gemm_with_state(&cfg.kernel.config, &x, &masks)?;
    if check {
        let want = oracle_gemm(&x, &z);
        for (row, (g, w)) in y.iter().zip(&want).enumerate() {
            for (col, (&got, &want)) in g.iter().zip(w).enumerate() {
                if got != want {
                    return Err(BenchError::Oracle { row, col, got, want });
                }
            }
        }
    }
    let latency = cfg.bank_counts.iter().map(|&b| (b, estimate_latency_on(&cfg.timing, report.ops, b))).collect();
    let state = if keep_state {
        let mut sa = st.sa;
        let mut csv = Vec::new();
        st.bank.dump_csv(&mut sa, &mut csv)?;
        Some((sa.dump(), String::from_utf8_lossy(&csv).into_owned()))
    } else {
        None
    };
    Ok(KernelRun { y, report, oracle_checked: check, latency, state })
}

/// IARM trace lines: step, state, actions.
pub fn run_trace(spec: &TraceSpec) -> Vec<(usize, String, String)> {
    trace(spec.n, spec.d, spec.start, spec.x, spec.steps)
        .into_iter()
        .map(|(s, st, acts)| (s, st, acts.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("; ")))
        .collect()
}

/// Creates `<out>/<experiment>/<timestamp>/` and writes config.json into it.
pub fn result_dir(out: &Path, cfg: &ExperimentConfig) -> Result<PathBuf, BenchError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let dir = out.join(cfg.experiment.dir_name()).join(stamp);
    fs::create_dir_all(&dir)?;
    let mut f = fs::File::create(dir.join("config.json"))?;
    f.write_all(serde_json::to_string_pretty(cfg)?.as_bytes())?;
    Ok(dir)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_zero_and_single_bank() {
        let tm = TimingModel::default();
        assert_eq!(estimate_latency(&tm, OpCounts::default()), 0.0);
        let l = estimate_latency(&tm, OpCounts { aap: 100, ap: 0, logic: 0 });
        assert!((l - 100.0 * (tm.t_aap() + tm.t_rrd)).abs() < 1e-6);
    }

    #[test]
    fn schedule_matches_closed_form() {
        let tm = TimingModel::default();
        for n in [1u64, 5, 17, 200] {
            for b in [1, 2, 3, 4, 8, 16] {
                let sim = estimate_latency_on(&tm, OpCounts { aap: n, ap: 0, logic: 0 }, b);
                let cf = closed_form_latency(&tm, n, b);
                assert!((sim - cf).abs() < 1e-6, "n={n} b={b}: {sim} vs {cf}");
            }
        }
    }

    #[test]
    fn capacity_digits() {
        assert_eq!(digits_for_bits(5, 16), 5);
        assert_eq!(digits_for_bits(4, 32), 11);
        assert_eq!(digits_for_bits(1, 16), 16);
        assert_eq!(digits_for_bits(8, 64), 16);
    }

    #[test]
    fn config_defaults_roundtrip() {
        let c = ExperimentConfig::default();
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&j).unwrap(), c);
        let p = ExperimentConfig::from_json(r#"{"experiment":"fault_sweep","fault_trials":0}"#).unwrap();
        assert_eq!(p.experiment, Experiment::FaultSweep);
        assert!(ExperimentConfig::from_json(r#"{"radices":[3]}"#).is_err());
    }

    #[test]
    fn sweep_reproducible() {
        let cfg = ExperimentConfig { radices: vec![6], capacity_bits: vec![16], streams: 2, stream_len: 32, ..Default::default() };
        assert_eq!(run_opcount_sweep(&cfg).unwrap(), run_opcount_sweep(&cfg).unwrap());
    }

    #[test]
    fn kernel_default_checks() {
        let cfg = ExperimentConfig::default();
        let k = run_kernel(&cfg, true, true).unwrap();
        assert_eq!(k.y.len(), 1);
        assert!(k.latency.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(k.state.is_some());
    }
}
