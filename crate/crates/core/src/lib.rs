pub mod acquisition;
pub mod bench;
pub mod context;
pub mod engine;
pub mod geometry;
pub mod gp;
pub mod linalg;
pub mod signal;
pub mod stats;
