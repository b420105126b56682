#![no_main]

use libfuzzer_sys::fuzz_target;
use selfpace::trainer::checkpoint::Checkpoint;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fuzz_target!(|data: &[u8]| {
    let _ = Checkpoint::decode(data);

    // Same bytes sealed with a valid checksum.
    let mut sealed = data.to_vec();
    sealed.extend_from_slice(&fnv1a(data).to_le_bytes());
    if let Ok(ckpt) = Checkpoint::decode(&sealed) {
        let bytes = ckpt.encode();
        let again = Checkpoint::decode(&bytes).expect("encoded checkpoint decodes");
        assert_eq!(again.encode(), bytes);
    }
});
