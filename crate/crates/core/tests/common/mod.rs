pub mod scenario;
pub mod synth;
