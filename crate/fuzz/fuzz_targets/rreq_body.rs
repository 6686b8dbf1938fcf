#![no_main]
use libfuzzer_sys::fuzz_target;
use srdp_core::srdp::RreqBody;

fuzz_target!(|data: &[u8]| {
    if let Ok(body) = RreqBody::decode(data) {
        assert_eq!(RreqBody::decode(&body.encode()).as_ref(), Ok(&body));
    }
});
