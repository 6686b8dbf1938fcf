#![no_main]
use libfuzzer_sys::fuzz_target;
use srdp_core::srdp::{decode_frame, encode_frame};

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = decode_frame(data) {
        let again = encode_frame(&frame);
        assert_eq!(decode_frame(&again).as_ref(), Ok(&frame));
    }
});
