pub mod data;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod registry;
pub mod scoring;
pub mod training;
