#![no_main]

use libfuzzer_sys::fuzz_target;
use pretrain_core::packing::{from_bytes, to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok((seq_len, seqs)) = from_bytes(data) {
        for s in &seqs {
            s.validate(seq_len).unwrap();
        }
        assert_eq!(from_bytes(&to_bytes(&seqs, seq_len)).unwrap(), (seq_len, seqs));
    }
});
