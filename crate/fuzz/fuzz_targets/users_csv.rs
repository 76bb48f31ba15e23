#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(users) = triplet_rank::data::read_users(data) {
        for u in &users {
            assert!(u.topic_vector.iter().all(|v| v.is_finite()));
        }
    }
});
