#![no_main]

use libfuzzer_sys::fuzz_target;
use pretrain_core::corpus;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = corpus::parse_line(text, 1) {
        let bytes = corpus::to_bytes(std::slice::from_ref(&doc));
        let line = std::str::from_utf8(&bytes).unwrap();
        assert_eq!(corpus::parse_line(line.trim_end(), 1).unwrap(), doc);
    }
    let _ = corpus::read_records(data);
});
