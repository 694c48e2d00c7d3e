#![no_main]

use libfuzzer_sys::fuzz_target;
use std::sync::OnceLock;

use cwmg::vocab::Vocabulary;

static VOCAB: OnceLock<Vocabulary> = OnceLock::new();

fuzz_target!(|data: &[u8]| {
    let vocab = VOCAB.get_or_init(Vocabulary::build);
    if let Ok(text) = std::str::from_utf8(data) {
        for (i, line) in text.lines().enumerate() {
            let _ = cwmg::tokenizer::parse_corpus_line(line, i + 1, vocab);
        }
    }
});
