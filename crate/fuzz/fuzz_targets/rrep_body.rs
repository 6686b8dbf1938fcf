#![no_main]
use libfuzzer_sys::fuzz_target;
use srdp_core::srdp::RrepBody;

fuzz_target!(|data: &[u8]| {
    if let Ok(body) = RrepBody::decode(data) {
        assert_eq!(RrepBody::decode(&body.encode()).as_ref(), Ok(&body));
    }
});
