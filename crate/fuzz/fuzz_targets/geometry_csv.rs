#![no_main]

use libfuzzer_sys::fuzz_target;
use mpi_recon::ScanGeometry;

fuzz_target!(|data: &[u8]| {
    let _ = ScanGeometry::read_csv(data);
});
