#![no_main]

use libfuzzer_sys::fuzz_target;
use selfpace::harness::runlog::parse_runlog;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(log) = parse_runlog(&text) {
        // Whatever parses must survive a write/read cycle unchanged.
        let back = parse_runlog(&log.to_jsonl()).expect("re-serialized log parses");
        assert_eq!(back.to_jsonl(), log.to_jsonl());
        let _ = selfpace::harness::report::build_report(&log, 100);
        let _ = selfpace::harness::replay::check_replay(&log);
    }
});
