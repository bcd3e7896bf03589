#![no_main]

use libfuzzer_sys::fuzz_target;
use mpi_recon::pgm::PgmImage;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = PgmImage::decode(data) {
        // Re-encoding a decoded image must decode to the same pixels.
        let again = PgmImage::decode(&img.encode()).expect("re-encoded image must decode");
        assert_eq!(img, again);
    }
});
