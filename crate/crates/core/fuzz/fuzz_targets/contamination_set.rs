#![no_main]

use libfuzzer_sys::fuzz_target;
use pretrain_core::decontam::ContaminationSet;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = ContaminationSet::from_bytes(data) {
        let again = ContaminationSet::from_bytes(&set.to_bytes()).unwrap();
        assert_eq!(again.len(), set.len());
    }
});
