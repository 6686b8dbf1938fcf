#![no_main]
use libfuzzer_sys::fuzz_target;
use srdp_core::crypto::{open, SealedBox, SymKey};

fuzz_target!(|data: &[u8]| {
    if let Some(b) = SealedBox::from_wire(data) {
        assert_eq!(b.to_wire(), data);
        let _ = open(&SymKey::from_bytes([7; 32]), &b);
    }
});
