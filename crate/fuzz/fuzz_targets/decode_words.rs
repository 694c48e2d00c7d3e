#![no_main]

use libfuzzer_sys::fuzz_target;
use std::sync::OnceLock;

use cwmg::tokenizer::TokenSequence;
use cwmg::vocab::{validate, CompoundWord, Vocabulary};

static VOCAB: OnceLock<Vocabulary> = OnceLock::new();

// Arbitrary id sequences: 16 little-endian bytes per word, two per field,
// so out-of-range ids are exercised alongside valid ones.
fuzz_target!(|data: &[u8]| {
    let vocab = VOCAB.get_or_init(Vocabulary::build);
    let mut words = Vec::new();
    for chunk in data.chunks_exact(16) {
        let mut ids = [0u32; 8];
        for (i, pair) in chunk.chunks_exact(2).enumerate() {
            ids[i] = u16::from_le_bytes([pair[0], pair[1]]) as u32;
        }
        words.push(CompoundWord::from_ids(ids));
    }
    for w in &words {
        let _ = validate(w, vocab);
    }
    let seq = TokenSequence { source_id: "fuzz".into(), words };
    let _ = cwmg::tokenizer::from_compound_words(&seq, vocab);
});
