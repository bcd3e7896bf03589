#![no_main]

use libfuzzer_sys::fuzz_target;
use mpi_recon::pgm::ValueRange;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = ValueRange::parse(text) {
            assert_eq!(ValueRange::parse(&r.to_text()).unwrap(), r);
        }
    }
});
