//! Fused projection against the dequantize-then-multiply oracle.

use flowkern::fused_dqp::{broadcast_schedule, fused_dqp_accumulate, FusedDqpPlan, Transfer};
use flowkern::q4nx::{dequantize_tensor, quantize_tensor, Bf16, BLOCK_BYTES};
use flowkern::refkern::matvec_ref;
use flowkern::tensor::{max_rel_error, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fused_matches_oracle_for_any_worker_count(
        seed in any::<u64>(),
        m in 1usize..200,
        k in 1usize..600,
        workers in 1usize..20,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = quantize_tensor(&Matrix::from_fn(m, k, |_, _| rng.gen_range(-1.0f32..1.0))).unwrap();
        let a: Vec<Bf16> = (0..k).map(|_| Bf16::from_f32(rng.gen_range(-1.0f32..1.0))).collect();
        let one = fused_dqp_accumulate(&w, &a, &FusedDqpPlan::for_tensor(1, &w).unwrap()).unwrap();
        let many = fused_dqp_accumulate(&w, &a, &FusedDqpPlan::for_tensor(workers, &w).unwrap()).unwrap();
        prop_assert_eq!(&one, &many);
        let a32: Vec<f32> = a.iter().map(|v| v.to_f32()).collect();
        let want = matvec_ref(&dequantize_tensor(&w).to_f32(), &a32).unwrap();
        prop_assert!(max_rel_error(&one, &want) <= 1e-4);
    }

    #[test]
    fn schedule_fetches_each_block_once(m in 1usize..600, k in 1usize..2000, workers in 1usize..20) {
        let plan = FusedDqpPlan::new(workers, m.div_ceil(32)).unwrap();
        let s = broadcast_schedule(&plan, m, k).unwrap();
        let mut blocks: Vec<(usize, usize)> = s
            .iter()
            .filter_map(|t| match *t {
                Transfer::Block { block_row, block_col, worker, .. } => {
                    assert_eq!(plan.owner_of(block_row), Some(worker));
                    Some((block_row, block_col))
                }
                Transfer::Segment { .. } => None,
            })
            .collect();
        let total = blocks.len();
        blocks.sort_unstable();
        blocks.dedup();
        prop_assert_eq!(blocks.len(), total);
        prop_assert_eq!(total, m.div_ceil(32) * k.div_ceil(256));
        let w_bytes: usize = s.iter().filter(|t| matches!(t, Transfer::Block { .. })).map(Transfer::bytes).sum();
        prop_assert_eq!(w_bytes, total * BLOCK_BYTES);
        let segments = s.iter().filter(|t| matches!(t, Transfer::Segment { .. })).count();
        prop_assert_eq!(segments, k.div_ceil(256));
    }
}
