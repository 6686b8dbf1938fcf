#![no_main]
use libfuzzer_sys::fuzz_target;
use srdp_core::sbccp::{decode_session, encode_session, SessionState};

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = decode_session(data) {
        assert_eq!(decode_session(&encode_session(&msg)).as_ref(), Ok(&msg));
        let mut st = SessionState::new(msg.handshake);
        let before = st.clone();
        if st.accept(&msg).is_err() {
            assert_eq!(st, before);
        }
    }
});
