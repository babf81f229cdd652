#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    kerm_fuzz::embedding_checkpoint(data);
});
