pub mod numerics;
pub mod geometry;
pub mod metrics;
pub mod template;
pub mod rewards;
pub mod router;
pub mod synthbench;
pub mod concept;
pub mod policy;
pub mod eval;
pub mod checkpoint;
pub mod config;
