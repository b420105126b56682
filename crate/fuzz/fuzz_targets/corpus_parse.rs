#![no_main]

use libfuzzer_sys::fuzz_target;
use selfpace::tasks::parse_corpus;

fuzz_target!(|data: &[u8]| {
    // First byte picks the vocabulary size, the rest is the file.
    let Some((&vocab, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    if let Ok(pairs) = parse_corpus(text, vocab as usize) {
        for p in &pairs {
            assert!(p.source.iter().chain(&p.target).all(|&t| (t as usize) < vocab as usize));
        }
    }
});
