#![no_main]

use libfuzzer_sys::fuzz_target;
use pretrain_core::filter::RuleSet;
use pretrain_core::pipeline::{PipelineConfig, PlanConfig};
use pretrain_core::stability::AblationManifest;

// The first byte selects the parser.
fuzz_target!(|data: &[u8]| {
    let Some((&which, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    match which % 4 {
        0 => {
            let _ = RuleSet::from_toml(text);
        }
        1 => {
            if let Ok(c) = PipelineConfig::from_toml(text) {
                let _ = c.validate();
            }
        }
        2 => {
            let _ = PlanConfig::from_toml(text);
        }
        _ => {
            if let Ok(m) = AblationManifest::from_toml(text) {
                for v in &m.variants {
                    let _ = m.config_for(v);
                }
            }
        }
    }
});
