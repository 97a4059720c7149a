pub mod augment;
pub mod manifest;
pub mod pgm;
pub mod sampler;
pub mod synth;
