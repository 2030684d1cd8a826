#![no_main]

use libfuzzer_sys::fuzz_target;
use pretrain_core::tokenizer::{parse_merges, parse_vocab, BpeModel};

// Input is a vocab file and a merges file separated by a NUL byte.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (vocab, merges) = text.split_once('\0').unwrap_or((text, ""));
    let v = parse_vocab(vocab);
    let m = parse_merges(merges);
    if let (Ok(v), Ok(m)) = (v, m) {
        if let Ok(model) = BpeModel::from_parts(v, m) {
            let ids = model.encode("fuzz 123 中文").token_ids;
            let _ = model.decode(&ids);
        }
    }
});
