#![no_main]
use libfuzzer_sys::fuzz_target;
use srdp_core::harness::parse_adversary;

fuzz_target!(|text: &str| {
    if let Ok(spec) = parse_adversary(text) {
        assert_eq!(parse_adversary(&spec.to_string()).as_ref(), Ok(&spec));
    }
});
