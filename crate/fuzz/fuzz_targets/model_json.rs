#![no_main]

use libfuzzer_sys::fuzz_target;
use mixtrack::model::FittedMixedModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = FittedMixedModel::from_json(text) {
        let again = FittedMixedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(again, model);
        let _ = model.predict(None, 3.0);
    }
});
