pub mod cli;
pub mod data;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod training;
