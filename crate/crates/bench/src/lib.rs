//! Shared fixtures for the kernel benchmarks.

use caglow::rng::normal_tensor;
use caglow::{FlowConfig, FlowModel, SeedStream, Tensor};

/// Standard-normal tensor of `shape` from a fixed seed.
pub fn gaussian(shape: &[usize], seed: u64) -> Tensor {
    normal_tensor(shape, 1.0, &mut SeedStream::new(seed).rng())
}

/// The default 14×14 glyph flow, initialized on a batch of glyphs.
pub fn glyph_flow(batch: usize) -> (FlowModel, Tensor) {
    let data = caglow::data::gen_glyphs(SeedStream::new(1), 20, &["thick", "invert", "frame"], batch, 14)
        .expect("glyphs generate");
    let mut flow = FlowModel::new(FlowConfig::image(14, 14, 1, 3, 4, 128), "flow", SeedStream::new(2))
        .expect("flow builds");
    flow.initialize(&data.x).expect("flow initializes");
    (flow, data.x)
}
