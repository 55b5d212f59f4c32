//! Named check cases run in parallel and collected in name order.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::report::{CaseResult, Status};

/// Metrics and tolerances gathered by one case; any recorded failure fails it.
#[derive(Debug, Default)]
pub struct Outcome {
    metrics: BTreeMap<String, f64>,
    tolerances: BTreeMap<String, f64>,
    failures: Vec<String>,
}

impl Outcome {
    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    /// Records `value` against `tol`; NaN fails.
    pub fn within(&mut self, key: &str, value: f64, tol: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self.tolerances.insert(key.to_string(), tol);
        if !(value <= tol) {
            self.failures
                .push(format!("{key} = {value:e} exceeds {tol:e}"));
        }
        self
    }

    /// Finishes a case that ran outside [`run_cases`].
    pub fn into_case(self, name: impl Into<String>, elapsed_s: f64) -> CaseResult {
        CaseResult {
            status: if self.failures.is_empty() {
                Status::Pass
            } else {
                Status::Fail
            },
            message: (!self.failures.is_empty()).then(|| self.failures.join("; ")),
            name: name.into(),
            metrics: self.metrics,
            tolerances: self.tolerances,
            elapsed_s,
        }
    }

    /// Records a boolean check as 1 or 0.
    pub fn expect(&mut self, key: &str, ok: bool) -> &mut Self {
        self.metrics
            .insert(key.to_string(), if ok { 1.0 } else { 0.0 });
        if !ok {
            self.failures.push(format!("{key} does not hold"));
        }
        self
    }
}

type CaseFn = Box<dyn Fn(&mut ChaCha8Rng) -> flowkern::Result<Outcome> + Send + Sync>;

pub struct CaseSpec {
    name: String,
    run: CaseFn,
}

impl CaseSpec {
    pub fn new(
        name: impl Into<String>,
        run: impl Fn(&mut ChaCha8Rng) -> flowkern::Result<Outcome> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            run: Box::new(run),
        }
    }
}

/// FNV-1a of the case name mixed into the run seed, so a case's inputs do not
/// depend on which other cases ran or in what order.
pub fn case_seed(seed: u64, name: &str) -> u64 {
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn run_cases(specs: Vec<CaseSpec>, seed: u64) -> Vec<CaseResult> {
    let mut out: Vec<CaseResult> = specs
        .into_par_iter()
        .map(|spec| {
            let start = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed(seed, &spec.name));
            let result = (spec.run)(&mut rng);
            let elapsed_s = start.elapsed().as_secs_f64();
            match result {
                Ok(o) => o.into_case(spec.name, elapsed_s),
                Err(e) => CaseResult {
                    name: spec.name,
                    status: Status::Error,
                    metrics: BTreeMap::new(),
                    tolerances: BTreeMap::new(),
                    message: Some(e.to_string()),
                    elapsed_s,
                },
            }
        })
        .collect();
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}
