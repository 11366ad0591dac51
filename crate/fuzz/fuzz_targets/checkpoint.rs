#![no_main]

use libfuzzer_sys::fuzz_target;
use wavcast::model::ModelState;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = ModelState::from_bytes(data) {
        let bytes = state.to_bytes().expect("encode decoded state");
        assert_eq!(ModelState::from_bytes(&bytes).expect("decode re-encoded state"), state);
    }
});
