#![no_main]

use advsim::dynamics::Trajectory;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = Trajectory::from_csv(text) {
        let again = Trajectory::from_csv(&t.to_csv()).expect("written trajectory parses");
        assert_eq!(again.states, t.states);
    }
});
