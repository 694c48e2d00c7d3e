#![no_main]

use libfuzzer_sys::fuzz_target;
use std::sync::OnceLock;

use cwmg::vocab::Vocabulary;

static VOCAB: OnceLock<Vocabulary> = OnceLock::new();

fuzz_target!(|data: &[u8]| {
    let vocab = VOCAB.get_or_init(Vocabulary::build);
    let _ = cwmg::model::parse_checkpoint(data, vocab);
});
