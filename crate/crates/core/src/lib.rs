pub mod backends;
pub mod config;
pub mod geometry;
pub mod harness;
pub mod planner;
pub mod raster;
pub mod toolkit;
