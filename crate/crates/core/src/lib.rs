pub mod java;
pub mod miner;
pub mod triplet;
pub mod abstraction;
pub mod bpe;
pub mod classifier;
pub mod dataset;
pub mod model;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod report;
