pub mod numeric;
pub mod dataset;
pub mod graph;
pub mod layers;
pub mod denoise;
pub mod vgae;
pub mod fusion;
pub mod model;
pub mod metrics;
pub mod training;
pub mod synthetic;
