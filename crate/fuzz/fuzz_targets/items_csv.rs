#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(items) = triplet_rank::data::read_items(data) {
        // Every accepted row has the same width.
        if let Some(first) = items.first() {
            assert!(items
                .iter()
                .all(|i| i.features.len() == first.features.len()));
        }
    }
});
