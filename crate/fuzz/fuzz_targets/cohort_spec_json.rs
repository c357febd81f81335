#![no_main]

use libfuzzer_sys::fuzz_target;
use mixtrack::simulator::{simulate_cohort, CohortSpec};

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<CohortSpec>(data) {
        if spec.n_per_group <= 64 && spec.visit_times.len() <= 64 {
            let _ = simulate_cohort(&spec);
        }
    }
});
