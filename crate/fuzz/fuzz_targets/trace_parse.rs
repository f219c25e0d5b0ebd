//! Delay-trace CSV parsing must reject malformed input with an error, never
//! a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = fedsel_core::delays::parse_trace_str(text);
    }
});
