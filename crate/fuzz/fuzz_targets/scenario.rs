#![no_main]

use advsim::dynamics::ScenarioFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = ScenarioFile::parse(text) {
        let _ = file.to_scenario();
        let _ = file.materials_block();
        let _ = file.attack_config();
    }
});
