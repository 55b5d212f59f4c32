//! Oracles shared by the integration suites.
#![allow(dead_code)]

/// Advance one time unit at a time, starting every action the moment it is allowed.
/// Durations are integers; returns per-stage `(transfer_end, compute_end)` per chunk.
pub fn enumerate_pipeline(
    stages: &[(u64, u64, bool)],
    chunks: usize,
) -> (Vec<Vec<(u64, u64)>>, u64) {
    let s = stages.len();
    let mut t_start = vec![vec![None::<u64>; chunks]; s];
    let mut c_start = vec![vec![None::<u64>; chunks]; s];
    let done = |start: Option<u64>, dur: u64, now: u64| start.is_some_and(|st| st + dur <= now);
    let mut now = 0u64;
    loop {
        // zero-length actions can unlock more work at the same instant, so sweep to a fixpoint
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..s {
                let (tr, cp, chained) = stages[i];
                // next transfer: stream idle, and at most two buffers held
                if let Some(n) = t_start[i].iter().position(Option::is_none) {
                    let stream_idle = n == 0 || done(t_start[i][n - 1], tr, now);
                    let buffer_free = n < 2 || done(c_start[i][n - 2], cp, now);
                    if stream_idle && buffer_free {
                        t_start[i][n] = Some(now);
                        changed = true;
                    }
                }
                if let Some(n) = c_start[i].iter().position(Option::is_none) {
                    let data_ready = done(t_start[i][n], tr, now);
                    let tile_idle = n == 0 || done(c_start[i][n - 1], cp, now);
                    let upstream = !chained || done(c_start[i - 1][n], stages[i - 1].1, now);
                    if data_ready && tile_idle && upstream {
                        c_start[i][n] = Some(now);
                        changed = true;
                    }
                }
            }
        }
        let finished = (0..s).all(|i| done(c_start[i][chunks - 1], stages[i].1, now));
        if finished {
            break;
        }
        now += 1;
    }
    let ends = (0..s)
        .map(|i| {
            (0..chunks)
                .map(|n| {
                    (
                        t_start[i][n].unwrap() + stages[i].0,
                        c_start[i][n].unwrap() + stages[i].1,
                    )
                })
                .collect()
        })
        .collect();
    (ends, now)
}
