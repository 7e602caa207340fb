use proptest::prelude::*;
use voxelcap::rng::mix;
use voxelcap::*;

fn uniform(seed: u64, i: usize) -> f64 {
    (mix(&[seed, i as u64]) >> 11) as f64 / (1u64 << 53) as f64
}

#[test]
fn squared_difference_sum_is_bit_identical_across_workers() {
    let n = 10_000;
    let ssd = |cfg: &ParallelConfig| {
        par_reduce(
            n,
            |i| {
                let d = uniform(1, i) - uniform(2, i);
                d * d
            },
            0.0f64,
            |a, b| a + b,
            cfg,
        )
    };
    let one = ssd(&ParallelConfig::with_workers(1));
    let eight = ssd(&ParallelConfig::with_workers(8));
    assert_eq!(one.to_bits(), eight.to_bits());
    // E[(U - V)^2] = 1/6.
    assert!((one / n as f64 - 1.0 / 6.0).abs() < 0.01);
}

#[test]
fn map_preserves_index_order() {
    let v = par_map(1000, |i| i * 3, &ParallelConfig::with_workers(4).with_chunk(7));
    assert!(v.iter().enumerate().all(|(i, &x)| x == 3 * i));
}

#[test]
fn try_map_reports_the_first_failing_index() {
    let r: Result<Vec<usize>, usize> = try_par_map(
        100,
        |i| if i % 30 == 29 { Err(i) } else { Ok(i) },
        &ParallelConfig::with_workers(3).with_chunk(4),
    );
    assert_eq!(r, Err(29));
}

#[test]
fn empty_range_reduces_to_identity() {
    let s = par_reduce(0, |i| i as f64, 7.5, |a, b| a + b, &ParallelConfig::with_workers(4));
    assert_eq!(s, 7.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn reduction_independent_of_workers(n in 0usize..3000, chunk in 1usize..300, w in 1usize..9, seed in any::<u64>()) {
        let f = |i: usize| uniform(seed, i) * 1e3 - 500.0;
        let base = par_reduce(n, f, 0.0f64, |a, b| a + b, &ParallelConfig::with_workers(1).with_chunk(chunk));
        let got = par_reduce(n, f, 0.0f64, |a, b| a + b, &ParallelConfig::with_workers(w).with_chunk(chunk));
        prop_assert_eq!(base.to_bits(), got.to_bits());
    }
}
