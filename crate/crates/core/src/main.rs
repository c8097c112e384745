use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jcim::backends::gen_increment;
use jcim::bench::{
    result_dir, run_fault_sweep, run_kernel, run_opcount_sweep, run_trace, write_csv, BenchError, Experiment,
    ExperimentConfig,
};
use jcim::layout::{Backend, CounterLayout};
use jcim::uprog::{Direction, KaryRequest};

#[derive(Parser)]
#[command(name = "jcim", version, about = "Johnson-counter compute-in-memory simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    backend: Option<Backend>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of the results tree.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// Print the increment program for radix 2n and step k, as "n,k".
    #[arg(long, global = true, value_name = "N,K")]
    emit_uprog: Option<String>,
    /// Write the decoded counters of a kernel run to counters.csv.
    #[arg(long, global = true)]
    dump_counters: bool,
    /// Write the final fabric rows of a kernel run to state.txt.
    #[arg(long, global = true)]
    dump_state: bool,
    /// Skip the integer reference check on kernel runs.
    #[arg(long, global = true)]
    no_oracle: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mean ops per accumulated input across radices, capacities and policies.
    Opcount,
    /// Error and detect rates of the protected schedule.
    Faults,
    /// GEMV/GEMM on the fabric with op totals and latency.
    Kernel,
    /// Step-by-step IARM state for repeated adds.
    TraceIarm,
}

fn load(g: &Global, exp: Experiment) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = exp;
    if let Some(b) = g.backend {
        cfg.backend = b;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.kernel.random.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_uprog(spec: &str, backend: Backend) -> Result<(), BenchError> {
    let parse = || -> Option<(u32, u32)> {
        let (n, k) = spec.split_once(',')?;
        Some((n.trim().parse().ok()?, k.trim().parse().ok()?))
    };
    let (n, k) = parse().ok_or_else(|| BenchError::Config(format!("--emit-uprog wants N,K, got {spec:?}")))?;
    let l = CounterLayout::allocate(n, 1, false, backend, jcim::fabric::D_BASE, 4096)
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let req = KaryRequest { digit: 0, k, dir: Direction::Up, mask: jcim::fabric::Addr::D(l.mask) };
    let p = gen_increment(backend, &l, &req).map_err(|e| BenchError::Config(e.to_string()))?;
    print!("{}", p.listing());
    Ok(())
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let g = &cli.global;
    let exp = match cli.cmd {
        Cmd::Opcount => Experiment::OpcountSweep,
        Cmd::Faults => Experiment::FaultSweep,
        Cmd::Kernel => Experiment::KernelRun,
        Cmd::TraceIarm => Experiment::IarmTrace,
    };
    let cfg = load(g, exp)?;
    if let Some(s) = &g.emit_uprog {
        emit_uprog(s, cfg.backend)?;
    }
    let dir = result_dir(&g.out_dir, &cfg)?;
    let csv = dir.join("results.csv");
    match exp {
        Experiment::OpcountSweep => {
            let rows = run_opcount_sweep(&cfg)?;
            for r in &rows {
                println!("radix {:>2} cap {:>2} D {:>2} {:<12} {:>9.2} ops/input", r.radix, r.capacity, r.digits, r.policy, r.mean_ops);
            }
            write_csv(&csv, &rows)?;
        }
        Experiment::FaultSweep => {
            let rows = run_fault_sweep(&cfg)?;
            for r in &rows {
                println!("p={:.0e} r={} {:<8} error={:.2e} detect={:.2e}", r.p, r.r, r.source, r.error_rate, r.detect_rate);
            }
            write_csv(&csv, &rows)?;
        }
        Experiment::KernelRun => {
            let k = run_kernel(&cfg, !g.no_oracle, g.dump_state || g.dump_counters)?;
            let o = k.report.ops;
            println!(
                "{}x{} result, D={} signed={} aap={} ap={} copy={} invocations={} oracle={}",
                k.y.len(),
                k.y.first().map_or(0, |r| r.len()),
                k.report.digits,
                k.report.signed,
                o.aap,
                o.ap,
                k.report.copy_ops,
                k.report.invocations,
                if k.oracle_checked { "match" } else { "skipped" }
            );
            let mut w = csv::Writer::from_path(&csv)?;
            w.write_record(["banks", "latency_ns", "aap", "ap", "logic"])?;
            for &(b, ns) in &k.latency {
                println!("{b:>2} banks: {ns:.1} ns");
                w.write_record([b.to_string(), format!("{ns:.3}"), o.aap.to_string(), o.ap.to_string(), o.logic.to_string()])?;
            }
            w.flush()?;
            let mut yw = csv::Writer::from_path(dir.join("y.csv"))?;
            for r in &k.y {
                yw.write_record(r.iter().map(|v| v.to_string()))?;
            }
            yw.flush()?;
            if let Some((state, counters)) = &k.state {
                if g.dump_state {
                    fs::write(dir.join("state.txt"), state)?;
                }
                if g.dump_counters {
                    fs::write(dir.join("counters.csv"), counters)?;
                }
            }
        }
        Experiment::IarmTrace => {
            let mut w = csv::Writer::from_path(&csv)?;
            w.write_record(["step", "state", "actions"])?;
            for (s, st, acts) in run_trace(&cfg.trace) {
                println!("{s:>3}  {st:<12} {acts}");
                w.write_record([s.to_string(), st, acts])?;
            }
            w.flush()?;
        }
    }
    eprintln!("results in {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
