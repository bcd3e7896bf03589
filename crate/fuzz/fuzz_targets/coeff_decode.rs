#![no_main]

use libfuzzer_sys::fuzz_target;
use mpi_recon::CoeffTensor;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = CoeffTensor::decode(data) {
        assert_eq!(c.encode(), data);
    }
});
