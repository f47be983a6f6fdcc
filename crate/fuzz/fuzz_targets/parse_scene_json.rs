#![no_main]

use libfuzzer_sys::fuzz_target;
use uwsim::detloss::{LossVariant, PatchGridConfig, Scene};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(scene) = Scene::from_json_str(text) else {
        return;
    };
    let grid = PatchGridConfig::with_grids(scene.grids.clone().unwrap_or_else(|| vec![1]));
    if grid.grids.iter().all(|&g| g <= 8) {
        for variant in [LossVariant::Patch, LossVariant::ObjectFocused] {
            if let Ok(report) = scene.evaluate(&grid, variant) {
                assert!(report.total >= 0.0);
            }
        }
    }
});
