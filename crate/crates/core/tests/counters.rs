use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jcim::bench::{stream_inputs, stream_ops, SweepPolicy};
use jcim::bits::BitRow;
use jcim::counter::{Counting, CounterBank, Policy};
use jcim::fabric::{Addr, Subarray, D_BASE};
use jcim::iarm::Safety;
use jcim::jc::{decode, digits_of, encode};
use jcim::layout::{Backend, CounterLayout};
use jcim::tensor::{csd_slice, gemm_int, oracle_gemm, KernelConfig};

/// Accumulates random signed inputs under random per-column masks; returns
/// (fabric values, per-column reference).
fn masked_run(seed: u64, n: u32, d: usize, cols: usize, steps: usize, policy: Policy, safety: Safety, signed: bool) -> (Vec<Option<i128>>, Vec<i128>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sa = Subarray::new(D_BASE + CounterLayout::rows_needed(n, d, signed, Backend::Ambit), cols).unwrap();
    let mut bank = CounterBank::alloc(&mut sa, n, d, signed, Backend::Ambit).unwrap();
    if policy == Policy::Iarm {
        bank.attach_iarm(safety);
    }
    let m = bank.mask_row();
    let cap = bank.layout.capacity() as i64;
    let step_max = (cap / (2 * steps as i64)).max(1);
    let mut want = vec![0i128; cols];
    for _ in 0..steps {
        let x = if signed { rng.gen_range(-step_max..=step_max) } else { rng.gen_range(0..=step_max) };
        let mask = BitRow::from_fn(cols, |_| rng.gen_bool(0.5));
        sa.write_row(m, &mask).unwrap();
        bank.accumulate_value(&mut sa, x, Addr::D(m), policy, Counting::Kary).unwrap();
        for (c, w) in want.iter_mut().enumerate() {
            if mask.get(c) {
                *w += x as i128;
            }
        }
    }
    bank.flush(&mut sa).unwrap();
    let got = bank.read_counters(&mut sa).unwrap().into_iter().map(|v| v.ok()).collect();
    (got, want)
}

#[test]
fn iarm_column_bound_is_safe_under_mixed_masks() {
    for seed in 0..40 {
        let n = 2 + (seed % 4) as u32;
        for signed in [false, true] {
            let (got, want) = masked_run(seed, n, 4, 24, 30, Policy::Iarm, Safety::ColumnBound, signed);
            let want: Vec<_> = want.into_iter().map(Some).collect();
            assert_eq!(got, want, "seed {seed} n {n} signed {signed}");
        }
    }
}

#[test]
fn iarm_exact_mode_breaks_under_mixed_masks() {
    // shadow-only decisions assume every column saw every input
    let bad = (0..200u64).find(|&seed| {
        let (got, want) = masked_run(seed, 2, 4, 16, 40, Policy::Iarm, Safety::Exact, false);
        got.iter().zip(&want).any(|(g, w)| *g != Some(*w))
    });
    assert!(bad.is_some(), "no Exact-mode counterexample found");
    let (got, want) = masked_run(bad.unwrap(), 2, 4, 16, 40, Policy::Iarm, Safety::ColumnBound, false);
    assert_eq!(got, want.into_iter().map(Some).collect::<Vec<_>>());
}

#[test]
fn exact_mode_is_fine_with_uniform_masks() {
    let mut sa = Subarray::new(64, 8).unwrap();
    let mut bank = CounterBank::alloc(&mut sa, 3, 4, false, Backend::Ambit).unwrap();
    bank.attach_iarm(Safety::Exact);
    let m = bank.mask_row();
    sa.write_row(m, &BitRow::ones(8)).unwrap();
    let mut total = 0;
    for x in [35i64, 1, 200, 17, 5, 99, 250] {
        bank.accumulate_value(&mut sa, x, Addr::D(m), Policy::Iarm, Counting::Kary).unwrap();
        total += x as i128;
    }
    bank.flush(&mut sa).unwrap();
    assert!(bank.read_counters(&mut sa).unwrap().iter().all(|v| *v == Ok(total)));
}

#[test]
fn sparser_streams_cost_fewer_ops() {
    for policy in SweepPolicy::ALL {
        let mut last = f64::INFINITY;
        for sparsity in [0.0, 0.25, 0.5, 0.75, 0.95] {
            let mean = (0..20)
                .map(|s| stream_ops(Backend::Ambit, 4, 6, policy, &stream_inputs(3, s, 256, 8, sparsity)).unwrap().total() as f64)
                .sum::<f64>()
                / 20.0;
            assert!(mean < last, "{policy:?} at sparsity {sparsity}: {mean} >= {last}");
            last = mean;
        }
    }
}

#[test]
fn alt_backend_banks_accumulate() {
    for backend in [Backend::Pinatubo, Backend::Magic] {
        for policy in [Policy::FullRipple, Policy::DigitSerial, Policy::Iarm] {
            let mut sa = Subarray::new(D_BASE + CounterLayout::rows_needed(3, 4, false, backend), 4).unwrap();
            let mut bank = CounterBank::alloc(&mut sa, 3, 4, false, backend).unwrap();
            if policy == Policy::Iarm {
                bank.attach_iarm(Safety::ColumnBound);
            }
            let m = bank.mask_row();
            sa.write_row(m, &BitRow::from_bools(&[true, false, true, true])).unwrap();
            for x in [7i64, 100, 3, 55] {
                bank.accumulate_value(&mut sa, x, Addr::D(m), policy, Counting::Kary).unwrap();
            }
            bank.flush(&mut sa).unwrap();
            assert_eq!(bank.read_counters(&mut sa).unwrap(), vec![Ok(165), Ok(0), Ok(165), Ok(165)], "{backend} {policy:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jc_roundtrip(n in 2u32..=32, v in 0u32..64) {
        let v = v % (2 * n);
        prop_assert_eq!(decode(encode(v, n).unwrap()), Ok(v));
    }

    #[test]
    fn radix_digits_recompose(x in any::<u32>(), n in 1u64..=16) {
        let r = 2 * n;
        let ds = digits_of(x as u64, r);
        let back = ds.iter().rev().fold(0u64, |a, &d| a * r + d as u64);
        prop_assert_eq!(back, x as u64);
        prop_assert!(ds.iter().all(|&d| (d as u64) < r));
    }

    #[test]
    fn csd_slices_reconstruct(z in prop::collection::vec(prop::collection::vec(-8i64..8, 5), 1..6)) {
        prop_assert_eq!(csd_slice(&z, 4, true).unwrap().reconstruct(), z);
    }

    #[test]
    fn policies_agree_with_reference(seed in any::<u64>(), n in 2u32..=5) {
        for policy in [Policy::FullRipple, Policy::DigitSerial, Policy::Iarm] {
            let (got, want) = masked_run(seed, n, 3, 8, 12, policy, Safety::ColumnBound, true);
            prop_assert_eq!(got, want.into_iter().map(Some).collect::<Vec<_>>());
        }
    }

    #[test]
    fn small_int_gemm(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, nn) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..6));
        let x: Vec<Vec<i64>> = (0..m).map(|_| (0..k).map(|_| rng.gen_range(-100..100)).collect()).collect();
        let z: Vec<Vec<i64>> = (0..k).map(|_| (0..nn).map(|_| rng.gen_range(-8..8)).collect()).collect();
        let cfg = KernelConfig { n: rng.gen_range(2..=4), ..Default::default() };
        let (y, _) = gemm_int(&cfg, &x, &z, 4, true).unwrap();
        prop_assert_eq!(y, oracle_gemm(&x, &z));
    }
}
