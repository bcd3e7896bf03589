#![no_main]

use libfuzzer_sys::fuzz_target;
use mpi_recon::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = PipelineConfig::parse(text) {
        // Serialized configs must parse back to the same values.
        assert_eq!(PipelineConfig::parse(&c.to_text()).unwrap(), c);
    }
});
