#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // must never panic; errors are the expected outcome for malformed input
    let _ = cwmg::tokenizer::parse_smf(data);
});
