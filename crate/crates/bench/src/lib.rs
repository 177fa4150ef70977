//! Fixtures shared by the benchmarks.

use udeer_core::kitti_io::{synth_scene, FrameBundle, SynthConfig};
use udeer_core::lidar_adaptation::AdaptConfig;
use udeer_core::model::{prepare_frame, PreparedFrame};

/// A default-size synthetic frame.
pub fn frame(seed: u64) -> FrameBundle {
    synth_scene(seed, &SynthConfig::default()).expect("default config is valid")
}

pub fn prepared(seed: u64) -> PreparedFrame {
    prepare_frame(&frame(seed), &AdaptConfig::default()).expect("synthetic frames prepare")
}
