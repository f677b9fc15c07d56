pub mod config;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod matcher;
pub mod mcc;
pub mod minutiae_map;
pub mod model;
pub mod synth;
pub mod traingen;
