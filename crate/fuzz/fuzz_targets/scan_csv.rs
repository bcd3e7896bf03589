#![no_main]

use libfuzzer_sys::fuzz_target;
use mpi_recon::ScanSeries;

fuzz_target!(|data: &[u8]| {
    let _ = ScanSeries::read_csv(data);
});
