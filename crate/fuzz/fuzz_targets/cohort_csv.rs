#![no_main]

use libfuzzer_sys::fuzz_target;
use mixtrack::cohort::Cohort;

fuzz_target!(|data: &[u8]| {
    if let Ok(cohort) = Cohort::from_csv_reader(data, 6.0) {
        let text = cohort.to_csv_string();
        let again = Cohort::from_csv_str(&text, 6.0).expect("written CSV parses");
        assert_eq!(again, cohort);
    }
});
