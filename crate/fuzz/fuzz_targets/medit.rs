#![no_main]

use advsim::mesh::{parse_medit, write_medit};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mesh) = parse_medit(text) {
        // whatever we accept must survive a round trip
        let again = parse_medit(&write_medit(&mesh)).expect("written mesh parses");
        assert_eq!(again.num_vertices(), mesh.num_vertices());
        assert_eq!(again.tets(), mesh.tets());
    }
});
