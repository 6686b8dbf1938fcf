#![no_main]
use libfuzzer_sys::fuzz_target;
use srdp_core::netsim::load_topology;

fuzz_target!(|text: &str| {
    if let Ok(t) = load_topology(text) {
        let again = load_topology(&t.to_text()).expect("rendered topology reloads");
        assert_eq!(again, t);
    }
});
