#![no_main]
use libfuzzer_sys::fuzz_target;
use triplet_rank::train::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        // Anything that decodes must re-encode to the same bytes.
        assert_eq!(ckpt.encode(), data);
    }
});
