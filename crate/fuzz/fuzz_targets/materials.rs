#![no_main]

use advsim::materials::MaterialField;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(field) = MaterialField::from_json(text) {
        let _ = field.realize();
        let again = MaterialField::from_json(&field.to_json()).expect("written field parses");
        assert_eq!(again.design_elements, field.design_elements);
    }
});
